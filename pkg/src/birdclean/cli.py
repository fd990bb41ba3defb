"""Pipeline orchestration: per-species, resumable, config-file driven.

Stages write a manifest keyed by a hash of their config section and
inputs; rerunning a completed stage with unchanged inputs is a no-op.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import evaluate as ev
from . import fixture as fx
from . import uod as uod_mod
from .ingest import (
    AudioDecodeError,
    LocalMirrorFetcher,
    XenoCantoClient,
    decode_audio,
    fetch_species_recordings,
    load_species_index,
)
from .models import ModelConfig, TrainedModel, TrainingDiverged, train
from .preprocess import ClipStore, PreprocessConfig, preprocess_recording
from .uod import UodConfig

log = logging.getLogger("birdclean")


class DataError(RuntimeError):
    pass


DEFAULT_CONFIG = {
    "root": "data",
    "species_code": "SYNT",
    "genus": "Testus",
    "species": "syntheticus",
    "mirror_dir": None,
    "limit": None,
    "preprocess": {},
    "model": {},
    "uod": {},
    "review": {"port": 8741, "seed": 0, "max_n": 50},
}


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    if path:
        with open(path) as f:
            user = json.load(f)
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    return cfg


def species_root(cfg: dict) -> Path:
    return Path(cfg["root"]) / cfg["species_code"]


def _hash(*parts: str) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode())
        h.update(b"\0")
    return h.hexdigest()


def _manifest_path(cfg: dict, stage: str) -> Path:
    d = species_root(cfg) / "manifests"
    d.mkdir(parents=True, exist_ok=True)
    return d / f"{stage}.json"


def stage_done(cfg: dict, stage: str, input_hash: str) -> bool:
    path = _manifest_path(cfg, stage)
    if not path.exists():
        return False
    return json.loads(path.read_text()).get("input_hash") == input_hash


def mark_stage(cfg: dict, stage: str, input_hash: str, outputs: list[str]) -> None:
    _manifest_path(cfg, stage).write_text(
        json.dumps({"input_hash": input_hash, "outputs": outputs}, indent=2)
    )


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest() if path.exists() else "missing"


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--root", default=None, help="data root override")
@click.option("--species-code", default=None)
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def cli(ctx, config_path, root, species_code, verbose):
    """Label-noise cleaning pipeline for single-species bird sound data."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO)
    ctx.obj = load_config(config_path, {"root": root, "species_code": species_code})


@cli.command()
@click.option("--count", default=12, help="recordings to synthesize")
@click.option("--seed", default=0)
@click.pass_obj
def fixture(cfg, count, seed):
    """Generate the bundled synthetic local mirror."""
    mirror = cfg.get("mirror_dir") or str(Path(cfg["root"]) / "mirror")
    fx.make_mirror(mirror, genus=cfg["genus"], species=cfg["species"], n_recordings=count, seed=seed)
    click.echo(f"mirror written to {mirror}")


@cli.command()
@click.pass_obj
def fetch(cfg):
    """Download (or mirror-copy) recordings and metadata."""
    if cfg.get("mirror_dir"):
        fetcher = LocalMirrorFetcher(cfg["mirror_dir"])
    else:
        fetcher = XenoCantoClient()
    metas = fetch_species_recordings(
        cfg["genus"],
        cfg["species"],
        cfg["species_code"],
        cfg["root"],
        fetcher,
        limit=cfg.get("limit"),
    )
    click.echo(f"fetched {len(metas)} recordings")


@cli.command()
@click.pass_obj
def preprocess(cfg):
    """Segment, screen and clip all fetched recordings."""
    root = species_root(cfg)
    index = root / "index.json"
    if not index.exists():
        raise DataError("no recordings found; run fetch first")
    pcfg = PreprocessConfig(**cfg["preprocess"])
    input_hash = _hash(json.dumps(cfg["preprocess"], sort_keys=True), _file_digest(index))
    if stage_done(cfg, "preprocess", input_hash):
        click.echo("preprocess up to date; skipping")
        return
    clips = []
    for meta in load_species_index(cfg["root"], cfg["species_code"]):
        try:
            w = decode_audio(meta.audio_path)
        except AudioDecodeError as exc:
            log.warning("recording %s unusable: %s", meta.recording_id, exc)
            continue
        clips.extend(preprocess_recording(w, meta.recording_id, meta.category, pcfg))
    if not clips:
        raise DataError("no clips survived preprocessing")
    store = ClipStore(root / "clips", pcfg)
    store.write(clips)
    mark_stage(cfg, "preprocess", input_hash, [str(store.bin_path)])
    click.echo(f"wrote {len(clips)} clips")


def _clip_stack(cfg: dict):
    store = ClipStore(species_root(cfg) / "clips")
    if not store.index_path.exists():
        raise DataError("no clip store found; run preprocess first")
    clips = store.read()
    mels = np.stack([c.mel for c in clips])
    return clips, mels


@cli.command(name="train")
@click.pass_obj
def train_cmd(cfg):
    """Train the N ensemble members (distinct seeds)."""
    clips, mels = _clip_stack(cfg)
    ucfg = UodConfig(**cfg["uod"])
    model_section = dict(cfg["model"])
    model_section.setdefault("model_kind", ucfg.model_kind)
    model_section.setdefault("n_gmm_components", ucfg.flat_clusters)
    mcfg0 = ModelConfig(**model_section)
    models_dir = species_root(cfg) / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    input_hash = _hash(
        json.dumps(model_section, sort_keys=True),
        json.dumps(cfg["uod"], sort_keys=True),
        _file_digest(species_root(cfg) / "clips" / "clips.index.json"),
    )
    if stage_done(cfg, "train", input_hash):
        click.echo("train up to date; skipping")
        return
    outputs = []
    for i in range(ucfg.n_models):
        section = dict(model_section)
        section["seed"] = mcfg0.seed + i
        mcfg = ModelConfig(**section)
        model = train(mels, mcfg)
        path = models_dir / f"{mcfg.model_kind}_{mcfg.seed}.ckpt"
        model.save(path)
        outputs.append(str(path))
        click.echo(f"trained {path.name} (final loss {model.loss_curve[-1]:.4f})")
    mark_stage(cfg, "train", input_hash, outputs)


@cli.command()
@click.option("--run-id", default=None)
@click.pass_obj
def detect(cfg, run_id):
    """Per-model outlier candidates plus the ensemble vote."""
    clips, mels = _clip_stack(cfg)
    clip_ids = [c.clip_id for c in clips]
    ucfg = UodConfig(**cfg["uod"])
    models_dir = species_root(cfg) / "models"
    paths = sorted(models_dir.glob(f"{ucfg.model_kind}_*.ckpt"))
    if not paths:
        raise DataError("no model checkpoints found; run train first")
    budget = ucfg.budget(len(clip_ids))
    per_model = []
    for path in paths[: ucfg.n_models]:
        model = TrainedModel.load(path)
        latents = model.latent_matrix(mels)
        if ucfg.model_kind == "vade":
            if model.gmm is None:
                raise DataError(f"{path.name} has no mixture parameters")
            cands = uod_mod.method2_candidates(
                latents, clip_ids, model.gmm, budget, score=ucfg.score
            )
        else:
            cands = uod_mod.method1_candidates(
                latents, clip_ids, ucfg.flat_clusters, budget, ucfg.big_cluster_pct
            )
        per_model.append(cands)
    result = uod_mod.ensemble_vote(
        per_model, ucfg.vote_threshold, universe=clip_ids, config=ucfg
    )
    run_id = run_id or f"{ucfg.model_kind}-n{len(per_model)}"
    path = uod_mod.save_result(result, cfg["root"], cfg["species_code"], run_id)
    click.echo(f"flagged {len(result.flagged)} clips -> {path}")


@cli.command(name="evaluate")
@click.pass_obj
def evaluate_cmd(cfg):
    """Entropy report plus rate estimates from completed review sessions."""
    clips, _ = _clip_stack(cfg)
    report = {"entropy": ev.entropy_report(clips), "sessions": {}}
    from .service import SessionStore

    store = SessionStore(cfg["root"])
    review_dir = species_root(cfg) / "review"
    if review_dir.exists():
        for path in sorted(review_dir.glob("*.json")):
            sid = path.stem
            try:
                report["sessions"][sid] = store.report(sid)
            except ValueError:
                report["sessions"][sid] = {"error": "no determinate verdicts"}
    out = species_root(cfg) / "evaluation" / "report.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True))
    click.echo(f"evaluation written to {out}")


@cli.command()
@click.option("--terminal", is_flag=True, help="console review loop instead of HTTP")
@click.option("--run-id", default=None)
@click.option("--review-class", default="outlier_class")
@click.pass_obj
def review(cfg, terminal, run_id, review_class):
    """Serve the review UI, or run the terminal fallback loop."""
    from .service import SessionStore, serve

    if not terminal:
        static = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        serve(cfg["root"], port=cfg["review"]["port"], static_dir=static if static.exists() else None)
        return
    if run_id is None:
        raise click.UsageError("--run-id is required for terminal review")
    store = SessionStore(cfg["root"])
    session = store.create(
        cfg["species_code"],
        run_id,
        review_class,
        cfg["review"]["seed"],
        cfg["review"]["max_n"],
    )
    click.echo(f"session {session.session_id}: {len(session.sample_order)} clips")
    while not session.complete:
        clip_id = session.current_clip
        click.echo(f"\nclip {clip_id} [{session.cursor + 1}/{len(session.sample_order)}]")
        answer = click.prompt("o=outlier, i=inlier, u=indeterminate, comment after ':'")
        verdict_key, _, comment = answer.partition(":")
        mapping = {"o": ev.Verdict.OUTLIER, "i": ev.Verdict.INLIER, "u": ev.Verdict.INDETERMINATE}
        if verdict_key.strip() not in mapping:
            click.echo("(replay)")
            continue
        session = store.submit_verdict(
            session.session_id,
            clip_id,
            mapping[verdict_key.strip()],
            comment=comment.strip() or None,
        )
    click.echo(json.dumps(store.report(session.session_id), indent=2))


@cli.command()
@click.pass_obj
def report(cfg):
    """Summary table: species, clips, entropy, per-session TPR and MoE."""
    path = species_root(cfg) / "evaluation" / "report.json"
    if not path.exists():
        raise DataError("no evaluation report; run evaluate first")
    doc = json.loads(path.read_text())
    rows = []
    best = None
    for sid, sess in doc["sessions"].items():
        if "estimate" not in sess:
            continue
        est = sess["estimate"]
        rows.append((sid, est["rate"], est["moe"]))
        if best is None or est["rate"] > best:
            best = est["rate"]
    click.echo(f"{'species':<10}{'no. clips':>10}{'entropy':>10}{'TPR':>8}{'MoE':>8}{'best':>8}")
    entropy = doc["entropy"]["overall"]
    n_clips = doc["entropy"]["n_clips"]
    if not rows:
        click.echo(f"{cfg['species_code']:<10}{n_clips:>10}{entropy:>10.4f}{'-':>8}{'-':>8}{'-':>8}")
    for sid, rate, moe in rows:
        click.echo(
            f"{cfg['species_code']:<10}{n_clips:>10}{entropy:>10.4f}"
            f"{rate:>8.3f}{moe:>8.3f}{(best or 0):>8.3f}"
        )


def main() -> None:
    try:
        cli.main(standalone_mode=False)
    except (click.UsageError, click.ClickException) as exc:
        click.echo(f"usage error: {exc}", err=True)
        sys.exit(1)
    except click.exceptions.Abort:
        sys.exit(1)
    except (DataError, AudioDecodeError, FileNotFoundError) as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(2)
    except (TrainingDiverged, FloatingPointError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(3)


if __name__ == "__main__":
    main()
