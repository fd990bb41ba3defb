"""Diagonal-covariance Gaussian mixtures over latent codes.

Log-space throughout: responsibilities and anomaly scores never produce
NaN even when every component density underflows. Variances are floored
at VAR_FLOOR to survive near-degenerate clusters in small datasets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-4


@dataclass
class GmmParams:
    weights: np.ndarray  # (K,), sums to 1
    means: np.ndarray  # (K, d)
    variances: np.ndarray  # (K, d), diagonal covariances

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        if (self.weights < 0).any() or (self.variances <= 0).any():
            raise ValueError("weights must be >= 0 and variances > 0")

    @property
    def n_components(self) -> int:
        return len(self.weights)


def component_log_densities(params: GmmParams, z: np.ndarray) -> np.ndarray:
    """log(w_k * N(z; mu_k, sigma_k^2)) for each point and component.

    z: (n, d) or (d,); returns (n, K) or (K,).
    """
    squeeze = np.asarray(z).ndim == 1
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    d = z.shape[1]
    diff = z[:, None, :] - params.means[None, :, :]
    maha = ((diff * diff) / params.variances[None, :, :]).sum(axis=2)
    log_det = np.log(params.variances).sum(axis=1)
    log_n = -0.5 * (d * np.log(2 * np.pi) + log_det[None, :] + maha)
    with np.errstate(divide="ignore"):  # zero weights -> -inf, by design
        out = np.log(params.weights)[None, :] + log_n
    return out[0] if squeeze else out


def gmm_responsibilities(params: GmmParams, z: np.ndarray) -> np.ndarray:
    """Posterior component memberships; rows sum to 1."""
    ld = np.atleast_2d(component_log_densities(params, z))
    resp = np.exp(ld - logsumexp(ld, axis=1, keepdims=True))
    return resp[0] if np.asarray(z).ndim == 1 else resp


def max_component_log_density(params: GmmParams, z: np.ndarray) -> np.ndarray:
    """Anomaly score: best-cluster membership density, log scale.

    Low values mean no component explains the point well.
    """
    ld = np.atleast_2d(component_log_densities(params, z))
    out = ld.max(axis=1)
    return out[0] if np.asarray(z).ndim == 1 else out


def total_log_density(params: GmmParams, z: np.ndarray) -> np.ndarray:
    """Alternative score: full mixture density, log scale."""
    ld = np.atleast_2d(component_log_densities(params, z))
    out = logsumexp(ld, axis=1)
    return out[0] if np.asarray(z).ndim == 1 else out


def _kmeanspp_means(x: np.ndarray, k: int, rng) -> np.ndarray:
    """k-means++ seeding: spread initial means across the data."""
    n = len(x)
    means = [x[rng.integers(n)]]
    for _ in range(k - 1):
        d2 = np.min(
            [((x - m) ** 2).sum(axis=1) for m in means], axis=0
        )
        total = d2.sum()
        if total <= 0:
            means.append(x[rng.integers(n)])
            continue
        means.append(x[rng.choice(n, p=d2 / total)])
    return np.array(means)


def fit_em(
    x: np.ndarray,
    n_components: int,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-6,
) -> tuple[GmmParams, list[float]]:
    """EM fit; returns parameters and the per-iteration log-likelihoods.

    Initialization: means drawn from distinct data points, uniform
    weights, per-dimension data variance.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if n_components < 1 or n_components > n:
        raise ValueError("need 1 <= n_components <= n points")
    rng = np.random.default_rng(seed)
    means = _kmeanspp_means(x, n_components, rng)
    # shrink initial variances with K so well-separated modes do not stall
    # in the symmetric one-blob optimum
    variances = np.tile(
        np.maximum(x.var(axis=0) / n_components, VAR_FLOOR), (n_components, 1)
    )
    params = GmmParams(
        weights=np.full(n_components, 1.0 / n_components),
        means=means,
        variances=variances,
    )

    history: list[float] = []
    for _ in range(max_iter):
        ld = component_log_densities(params, x)  # (n, K)
        per_point = logsumexp(ld, axis=1)
        ll = float(per_point.sum())
        resp = np.exp(ld - per_point[:, None])

        nk = resp.sum(axis=0) + 1e-12
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        sq = (resp.T @ (x * x)) / nk[:, None] - means**2
        if (sq < VAR_FLOOR).any():
            log.warning("GMM variance collapse; flooring at %g", VAR_FLOOR)
        variances = np.maximum(sq, VAR_FLOOR)
        params = GmmParams(weights=weights / weights.sum(), means=means, variances=variances)

        history.append(ll)
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol * abs(history[-2]):
            break
    return params, history
