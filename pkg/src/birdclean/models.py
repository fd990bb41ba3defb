"""Representation models over 32x40 mel clips: CAE, CVAE and VaDE.

All three share one conv trunk: three stride-2 conv layers, a fully
connected latent head, and the mirrored deconv decoder. The latent head
differs: direct codes (CAE), a unimodal Gaussian posterior (CVAE), or a
Gaussian posterior against a learned mixture prior (VaDE).

Training is CPU-friendly and reproducible from the config seed.
Evaluation-mode encodings are deterministic: CVAE/VaDE return the
posterior mean.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .gmm import GmmParams, VAR_FLOOR, fit_em

INPUT_SHAPE = (32, 40)
DB_SCALE = 80.0  # dB dynamic range used to normalize clips to [0, 1]


@dataclass
class ModelConfig:
    model_kind: str = "cae"  # cae | cvae | vade
    latent_dim: int = 10
    conv_channels: tuple[int, int, int] = (16, 32, 64)
    kernel: int = 3
    stride: int = 2
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    kl_weight: float = 1.0
    n_gmm_components: int = 50  # VaDE only; defaults to the flat-cluster count
    pretrain_epochs: int = 30  # VaDE only
    input_shape: tuple[int, int] = INPUT_SHAPE

    def __post_init__(self):
        if self.latent_dim < 2:
            raise ValueError("latent_dim must be >= 2")
        if self.n_gmm_components < 1:
            raise ValueError("n_gmm_components must be >= 1")
        if self.model_kind not in ("cae", "cvae", "vade"):
            raise ValueError(f"unknown model_kind {self.model_kind!r}")
        h, w = self.input_shape
        if h % self.stride**3 or w % self.stride**3:
            raise ValueError("input dims must be divisible by stride^3 for an exact decoder")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        d["input_shape"] = tuple(d["input_shape"])
        return cls(**d)


@dataclass
class LatentCode:
    clip_id: str
    z: np.ndarray
    mu: np.ndarray | None = None
    log_var: np.ndarray | None = None


class ConvTrunk(nn.Module):
    """Shared encoder/decoder trunk; latent heads live in subclasses."""

    def __init__(self, cfg: ModelConfig, head_dims: int):
        super().__init__()
        self.cfg = cfg
        c1, c2, c3 = cfg.conv_channels
        k, s = cfg.kernel, cfg.stride
        pad = k // 2
        h, w = cfg.input_shape
        self.bottom = (c3, h // s**3, w // s**3)
        flat = c3 * self.bottom[1] * self.bottom[2]
        self.encoder = nn.Sequential(
            nn.Conv2d(1, c1, k, stride=s, padding=pad),
            nn.ReLU(),
            nn.Conv2d(c1, c2, k, stride=s, padding=pad),
            nn.ReLU(),
            nn.Conv2d(c2, c3, k, stride=s, padding=pad),
            nn.ReLU(),
            nn.Flatten(),
        )
        self.fc_enc = nn.Linear(flat, head_dims)
        self.fc_dec = nn.Linear(cfg.latent_dim, flat)
        self.decoder = nn.Sequential(
            nn.ReLU(),
            nn.ConvTranspose2d(c3, c2, k, stride=s, padding=pad, output_padding=s - 1),
            nn.ReLU(),
            nn.ConvTranspose2d(c2, c1, k, stride=s, padding=pad, output_padding=s - 1),
            nn.ReLU(),
            nn.ConvTranspose2d(c1, 1, k, stride=s, padding=pad, output_padding=s - 1),
        )

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        h = self.fc_dec(z).view(-1, *self.bottom)
        return self.decoder(h)


class Cae(ConvTrunk):
    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg, head_dims=cfg.latent_dim)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc_enc(self.encoder(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))


class Cvae(ConvTrunk):
    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg, head_dims=2 * cfg.latent_dim)

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.fc_enc(self.encoder(x))
        mu, log_var = h.chunk(2, dim=1)
        return mu, log_var

    def reparameterize(self, mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
        return mu + torch.exp(0.5 * log_var) * torch.randn_like(mu)

    def forward(self, x: torch.Tensor):
        mu, log_var = self.encode(x)
        z = self.reparameterize(mu, log_var)
        return self.decode(z), mu, log_var


class Vade(Cvae):
    """CVAE trunk with a learned Gaussian-mixture prior over the latent."""

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        k, d = cfg.n_gmm_components, cfg.latent_dim
        self.pi_logits = nn.Parameter(torch.zeros(k))
        self.mu_c = nn.Parameter(torch.randn(k, d) * 0.5)
        self.log_var_c = nn.Parameter(torch.zeros(k, d))

    def set_mixture(self, params: GmmParams) -> None:
        with torch.no_grad():
            self.pi_logits.copy_(torch.log(torch.as_tensor(params.weights, dtype=torch.float32)))
            self.mu_c.copy_(torch.as_tensor(params.means, dtype=torch.float32))
            self.log_var_c.copy_(torch.log(torch.as_tensor(params.variances, dtype=torch.float32)))

    def mixture_params(self) -> GmmParams:
        with torch.no_grad():
            w = torch.softmax(self.pi_logits, dim=0).numpy().astype(np.float64)
            return GmmParams(
                weights=w / w.sum(),
                means=self.mu_c.numpy().astype(np.float64),
                variances=np.maximum(np.exp(self.log_var_c.numpy()), VAR_FLOOR),
            )

    def cluster_logits(self, z: torch.Tensor) -> torch.Tensor:
        """log pi_c + log N(z; mu_c, sigma_c^2), shape (batch, K)."""
        log_pi = torch.log_softmax(self.pi_logits, dim=0)
        var = torch.exp(self.log_var_c)
        diff = z[:, None, :] - self.mu_c[None, :, :]
        log_n = -0.5 * (
            math.log(2 * math.pi) * z.shape[1]
            + self.log_var_c.sum(dim=1)[None, :]
            + (diff * diff / var[None, :, :]).sum(dim=2)
        )
        return log_pi[None, :] + log_n


def reconstruction_loss(model: ConvTrunk, batch: torch.Tensor) -> torch.Tensor:
    """Mean squared error over batch and pixels."""
    if batch.numel() == 0:
        raise ValueError("empty batch")
    if isinstance(model, Cvae):
        recon = model(batch)[0]
    else:
        recon = model(batch)
    return torch.mean((recon - batch) ** 2)


def kl_unit_gaussian(mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, e^log_var) || N(0, I)), summed over dims, batch-averaged."""
    kl = -0.5 * (1 + log_var - mu**2 - torch.exp(log_var))
    kl = kl.sum(dim=-1)
    return kl.mean() if kl.dim() else kl


def cae_loss(model: Cae, batch: torch.Tensor) -> torch.Tensor:
    recon = model(batch)
    return ((recon - batch) ** 2).flatten(1).sum(dim=1).mean()


def cvae_loss(model: Cvae, batch: torch.Tensor, kl_weight: float = 1.0) -> torch.Tensor:
    recon, mu, log_var = model(batch)
    rec = ((recon - batch) ** 2).flatten(1).sum(dim=1).mean()
    return rec + kl_weight * kl_unit_gaussian(mu, log_var)


def vade_loss(model: Vade, batch: torch.Tensor, kl_weight: float = 1.0) -> torch.Tensor:
    """Negative mixture-prior ELBO (reconstruction + per-cluster KL terms)."""
    mu, log_var = model.encode(batch)
    z = model.reparameterize(mu, log_var)
    recon = model.decode(z)
    rec = ((recon - batch) ** 2).flatten(1).sum(dim=1)

    logits = model.cluster_logits(z)  # (n, K)
    gamma = torch.softmax(logits, dim=1).clamp_min(1e-10)
    log_pi = torch.log_softmax(model.pi_logits, dim=0)

    var_c = torch.exp(model.log_var_c)  # (K, d)
    diff = mu[:, None, :] - model.mu_c[None, :, :]
    # sum_c gamma_c * KL(q(z|x) || p(z|c)) in closed form
    kl_z = 0.5 * (
        model.log_var_c[None, :, :]
        - log_var[:, None, :]
        + (torch.exp(log_var)[:, None, :] + diff**2) / var_c[None, :, :]
        - 1.0
    ).sum(dim=2)
    kl_cluster = (gamma * kl_z).sum(dim=1)
    kl_cat = (gamma * (torch.log(gamma) - log_pi[None, :])).sum(dim=1)
    return (rec + kl_weight * (kl_cluster + kl_cat)).mean()


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainedModel:
    cfg: ModelConfig
    module: ConvTrunk
    loss_curve: list[float] = field(default_factory=list)
    gmm: GmmParams | None = None

    def encode(self, mels: np.ndarray, clip_ids: list[str] | None = None) -> list[LatentCode]:
        """Deterministic evaluation-mode encodings (mu for CVAE/VaDE)."""
        x = _to_batch(mels)
        if x.shape[2:] != torch.Size(self.cfg.input_shape):
            raise ValueError(f"expected {self.cfg.input_shape} clips, got {tuple(x.shape[2:])}")
        self.module.eval()
        with torch.no_grad():
            if isinstance(self.module, Cvae):
                mu, log_var = self.module.encode(x)
                z = mu
            else:
                z = self.module.encode(x)
                mu = log_var = None
        ids = clip_ids or [str(i) for i in range(len(x))]
        out = []
        for i, cid in enumerate(ids):
            out.append(
                LatentCode(
                    clip_id=cid,
                    z=z[i].numpy().astype(np.float64),
                    mu=None if mu is None else mu[i].numpy().astype(np.float64),
                    log_var=None if log_var is None else log_var[i].numpy().astype(np.float64),
                )
            )
        return out

    def latent_matrix(self, mels: np.ndarray) -> np.ndarray:
        return np.stack([c.z for c in self.encode(mels)])

    def reconstruction_mse(self, mels: np.ndarray) -> float:
        """Evaluation-mode mean squared error in normalized [0, 1] units."""
        x = _to_batch(mels)
        self.module.eval()
        with torch.no_grad():
            if isinstance(self.module, Cvae):
                mu, _ = self.module.encode(x)
                recon = self.module.decode(mu)
            else:
                recon = self.module(x)
            return float(torch.mean((recon - x) ** 2))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        state = {"cfg": self.cfg.to_dict(), "state_dict": self.module.state_dict()}
        if self.gmm is not None:
            state["gmm"] = {
                "weights": self.gmm.weights,
                "means": self.gmm.means,
                "variances": self.gmm.variances,
            }
        torch.save(state, path)
        sidecar = {"config": self.cfg.to_dict(), "loss_curve": self.loss_curve}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        state = torch.load(path, weights_only=False)
        cfg = ModelConfig.from_dict(state["cfg"])
        module = _build(cfg)
        module.load_state_dict(state["state_dict"])
        gmm = None
        if "gmm" in state:
            gmm = GmmParams(**state["gmm"])
        curve = []
        sidecar = Path(path).with_suffix(".json")
        if sidecar.exists():
            curve = json.loads(sidecar.read_text()).get("loss_curve", [])
        return cls(cfg=cfg, module=module, loss_curve=curve, gmm=gmm)


def _build(cfg: ModelConfig) -> ConvTrunk:
    if cfg.model_kind == "cae":
        return Cae(cfg)
    if cfg.model_kind == "cvae":
        return Cvae(cfg)
    return Vade(cfg)


def _to_batch(mels: np.ndarray) -> torch.Tensor:
    arr = np.asarray(mels, dtype=np.float32) / DB_SCALE
    if arr.ndim == 2:
        arr = arr[None]
    return torch.from_numpy(arr).unsqueeze(1)


def train(mels: np.ndarray, cfg: ModelConfig) -> TrainedModel:
    """Train one model on a (n, bands, frames) clip stack.

    VaDE runs the three-phase schedule: autoencoder pretraining of the
    trunk, EM initialization of the mixture over the pretrained codes,
    then joint optimization of the mixture-prior ELBO.
    """
    x = _to_batch(mels)
    n = len(x)
    if n < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} clips, got {n}")
    torch.manual_seed(cfg.seed)
    module = _build(cfg)
    rng = np.random.default_rng(cfg.seed)
    curve: list[float] = []

    if cfg.model_kind == "cae":
        _run_epochs(module, x, cfg, cfg.epochs, cae_loss, rng, curve)
        return TrainedModel(cfg=cfg, module=module, loss_curve=curve)

    if cfg.model_kind == "cvae":
        loss_fn = lambda m, b: cvae_loss(m, b, cfg.kl_weight)
        _run_epochs(module, x, cfg, cfg.epochs, loss_fn, rng, curve)
        return TrainedModel(cfg=cfg, module=module, loss_curve=curve)

    # VaDE: pretrain the trunk deterministically (decode from mu)
    def pretrain_loss(m: Vade, b: torch.Tensor) -> torch.Tensor:
        mu, _ = m.encode(b)
        recon = m.decode(mu)
        return ((recon - b) ** 2).flatten(1).sum(dim=1).mean()

    _run_epochs(module, x, cfg, cfg.pretrain_epochs, pretrain_loss, rng, curve)

    module.eval()
    with torch.no_grad():
        mu0, _ = module.encode(x)
    params, _ = fit_em(mu0.numpy().astype(np.float64), cfg.n_gmm_components, seed=cfg.seed)
    module.set_mixture(params)

    loss_fn = lambda m, b: vade_loss(m, b, cfg.kl_weight)
    _run_epochs(module, x, cfg, cfg.epochs, loss_fn, rng, curve)
    return TrainedModel(cfg=cfg, module=module, loss_curve=curve, gmm=module.mixture_params())


def _run_epochs(module, x, cfg, epochs, loss_fn, rng, curve) -> None:
    opt = torch.optim.Adam(module.parameters(), lr=cfg.learning_rate)
    module.train()
    n = len(x)
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        batches = 0
        for start in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            batch = x[order[start : start + cfg.batch_size]]
            loss = loss_fn(module, batch)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {len(curve)}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
            batches += 1
        curve.append(total / max(batches, 1))
