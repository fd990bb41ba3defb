"""Review service: sessions over flagged clips, assets, verdicts, reports.

The session logic lives in SessionStore so the terminal review loop and
the HTTP layer share it. Sessions persist to
<root>/<species_code>/review/<session_id>.json after every acknowledged
verdict, so a restart loses nothing.
"""

from __future__ import annotations

import io
import json
import threading
import uuid
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pydantic

from .evaluate import ReviewVerdict, Verdict, estimate_rate, sample_for_review
from .ingest import SAMPLE_RATE, decode_audio, load_species_index
from .preprocess import Clip, ClipStore, clip_to_png
from .uod import EnsembleResult


@dataclass
class ReviewSession:
    session_id: str
    species_code: str
    run_id: str
    class_under_review: str  # outlier_class | inlier_class
    seed: int
    sample_order: list[str]
    cursor: int = 0
    verdicts: list[ReviewVerdict] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return self.cursor >= len(self.sample_order)

    @property
    def current_clip(self) -> str | None:
        return None if self.complete else self.sample_order[self.cursor]

    def tallies(self) -> dict[str, int]:
        out = {v.value: 0 for v in Verdict}
        for v in self.verdicts:
            out[v.verdict.value] += 1
        return out

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "species_code": self.species_code,
            "run_id": self.run_id,
            "class_under_review": self.class_under_review,
            "seed": self.seed,
            "sample_order": self.sample_order,
            "cursor": self.cursor,
            "verdicts": [v.to_dict() for v in self.verdicts],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewSession":
        d = dict(d)
        d["verdicts"] = [ReviewVerdict.from_dict(v) for v in d["verdicts"]]
        return cls(**d)


class UnknownId(KeyError):
    pass


class WrongClip(ValueError):
    """Verdict submitted for a clip other than the current one."""


class SessionStore:
    """Creates, persists and advances review sessions for one data root."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()
        self._clips: dict[str, dict[str, Clip]] = {}

    # -- data access -------------------------------------------------

    def _review_dir(self, species_code: str) -> Path:
        d = self.root / species_code / "review"
        d.mkdir(parents=True, exist_ok=True)
        return d

    def load_result(self, species_code: str, run_id: str) -> EnsembleResult:
        path = self.root / species_code / "uod" / f"{run_id}.json"
        if not path.exists():
            raise UnknownId(f"no UOD result {run_id} for {species_code}")
        return EnsembleResult.from_json(path.read_text())

    def clips_for(self, species_code: str) -> dict[str, Clip]:
        if species_code not in self._clips:
            store = ClipStore(self.root / species_code / "clips")
            if not store.index_path.exists():
                raise UnknownId(f"no clip store for {species_code}")
            self._clips[species_code] = {c.clip_id: c for c in store.read()}
        return self._clips[species_code]

    def find_clip(self, clip_id: str) -> tuple[str, Clip]:
        for species_dir in sorted(self.root.iterdir()):
            index = species_dir / "clips" / "clips.index.json"
            if not index.exists():
                continue
            clips = self.clips_for(species_dir.name)
            if clip_id in clips:
                return species_dir.name, clips[clip_id]
        raise UnknownId(f"unknown clip {clip_id}")

    # -- session lifecycle -------------------------------------------

    def create(
        self,
        species_code: str,
        run_id: str,
        class_under_review: str,
        seed: int,
        max_n: int,
    ) -> ReviewSession:
        result = self.load_result(species_code, run_id)
        if class_under_review == "outlier_class":
            pool = result.flagged
        elif class_under_review == "inlier_class":
            pool = set(result.tallies) - result.flagged
        else:
            raise ValueError(f"unknown class {class_under_review!r}")
        order = sample_for_review(pool, seed=seed, max_n=max_n)
        session = ReviewSession(
            session_id=uuid.uuid4().hex[:12],
            species_code=species_code,
            run_id=run_id,
            class_under_review=class_under_review,
            seed=seed,
            sample_order=order,
        )
        self._persist(session)
        return session

    def get(self, session_id: str) -> ReviewSession:
        for species_dir in sorted(self.root.iterdir()):
            path = species_dir / "review" / f"{session_id}.json"
            if path.exists():
                return ReviewSession.from_dict(json.loads(path.read_text()))
        raise UnknownId(f"unknown session {session_id}")

    def _persist(self, session: ReviewSession) -> None:
        path = self._review_dir(session.species_code) / f"{session.session_id}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(session.to_dict(), indent=2))
        tmp.replace(path)

    def submit_verdict(
        self,
        session_id: str,
        clip_id: str,
        verdict: Verdict,
        comment: str | None = None,
        reviewer: str = "",
        override: bool = False,
    ) -> ReviewSession:
        with self._lock:
            session = self.get(session_id)
            if clip_id not in session.sample_order:
                raise UnknownId(f"clip {clip_id} not in session sample")
            if clip_id != session.current_clip:
                if not override:
                    raise WrongClip(
                        f"current clip is {session.current_clip}, got {clip_id}"
                    )
                # resubmission: overwrite with an audit note
                comment = f"[resubmitted] {comment or ''}".strip()
                session.verdicts = [v for v in session.verdicts if v.clip_id != clip_id]
                session.verdicts.append(
                    ReviewVerdict(clip_id=clip_id, verdict=verdict, comment=comment, reviewer=reviewer)
                )
            else:
                session.verdicts.append(
                    ReviewVerdict(clip_id=clip_id, verdict=verdict, comment=comment, reviewer=reviewer)
                )
                session.cursor += 1
            self._persist(session)
            return session

    def report(self, session_id: str) -> dict:
        session = self.get(session_id)
        positive = (
            Verdict.OUTLIER
            if session.class_under_review == "outlier_class"
            else Verdict.INLIER
        )
        result = self.load_result(session.species_code, session.run_id)
        population = (
            len(result.flagged)
            if session.class_under_review == "outlier_class"
            else len(set(result.tallies) - result.flagged)
        )
        est = estimate_rate(
            session.verdicts, positive=positive, n_population=population
        )
        return {
            "session_id": session.session_id,
            "class_under_review": session.class_under_review,
            "positive": positive.value,
            "estimate": est.to_dict(),
            "tallies": session.tallies(),
            "n_reviewed": len(session.verdicts),
            "n_sample": len(session.sample_order),
        }

    # -- clip assets ---------------------------------------------------

    def spectrogram_png(self, clip_id: str) -> bytes:
        _, clip = self.find_clip(clip_id)
        buf = io.BytesIO()
        _png_to_buffer(clip.mel, buf)
        return buf.getvalue()

    def segment_wav(self, clip_id: str) -> bytes:
        species_code, clip = self.find_clip(clip_id)
        metas = {m.recording_id: m for m in load_species_index(self.root, species_code)}
        meta = metas.get(clip.recording_id)
        if meta is None or not Path(meta.audio_path).exists():
            raise FileNotFoundError(f"source audio for {clip_id} not cached")
        w = decode_audio(meta.audio_path)
        samples = w.samples[clip.start_sample : clip.end_sample]
        buf = io.BytesIO()
        with wave.open(buf, "wb") as f:
            f.setnchannels(1)
            f.setsampwidth(2)
            f.setframerate(SAMPLE_RATE)
            f.writeframes((np.clip(samples, -1, 1) * 32767).astype("<i2").tobytes())
        return buf.getvalue()


def _png_to_buffer(mel: np.ndarray, buf: io.BytesIO, scale: int = 8) -> None:
    from PIL import Image

    lo, hi = float(mel.min()), float(mel.max())
    norm = (mel - lo) / (hi - lo) if hi > lo else np.zeros_like(mel)
    img = (np.flipud(norm) * 255).astype(np.uint8)
    Image.fromarray(img, mode="L").resize(
        (mel.shape[1] * scale, mel.shape[0] * scale), Image.NEAREST
    ).save(buf, format="PNG")


class SessionRequest(pydantic.BaseModel):
    species_code: str
    run_id: str
    class_under_review: str = "outlier_class"
    seed: int = 0
    max_n: int = 50


class VerdictRequest(pydantic.BaseModel):
    clip_id: str
    verdict: str
    comment: str | None = None
    reviewer: str = ""
    override: bool = False


def create_app(root: str | Path, static_dir: str | Path | None = None):
    """FastAPI app over a SessionStore; static_dir serves the review UI."""
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import JSONResponse, Response

    store = SessionStore(root)
    app = FastAPI(title="birdclean review service")
    app.state.store = store

    @app.post("/api/sessions")
    def create_session(req: SessionRequest):
        try:
            session = store.create(
                req.species_code, req.run_id, req.class_under_review, req.seed, req.max_n
            )
        except UnknownId as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return session.to_dict()

    @app.get("/api/sessions/{session_id}/next")
    def next_clip(session_id: str):
        try:
            session = store.get(session_id)
        except UnknownId as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if session.complete:
            return {
                "complete": True,
                "tallies": session.tallies(),
                "progress": {"done": session.cursor, "total": len(session.sample_order)},
            }
        clip_id = session.current_clip
        return {
            "complete": False,
            "clip_id": clip_id,
            "spectrogram_url": f"/api/clips/{clip_id}/spectrogram.png",
            "audio_url": f"/api/clips/{clip_id}/segment.wav",
            "progress": {"done": session.cursor, "total": len(session.sample_order)},
            "tallies": session.tallies(),
        }

    @app.post("/api/sessions/{session_id}/verdicts")
    def post_verdict(session_id: str, req: VerdictRequest):
        try:
            verdict = Verdict(req.verdict)
        except ValueError:
            raise HTTPException(status_code=422, detail=f"bad verdict {req.verdict!r}")
        try:
            session = store.submit_verdict(
                session_id,
                req.clip_id,
                verdict,
                comment=req.comment,
                reviewer=req.reviewer,
                override=req.override,
            )
        except WrongClip as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except UnknownId as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {
            "accepted": True,
            "cursor": session.cursor,
            "complete": session.complete,
        }

    @app.get("/api/sessions/{session_id}/report")
    def report(session_id: str):
        try:
            return store.report(session_id)
        except UnknownId as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.get("/api/clips/{clip_id}/spectrogram.png")
    def spectrogram(clip_id: str):
        try:
            data = store.spectrogram_png(clip_id)
        except UnknownId as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return Response(content=data, media_type="image/png")

    @app.get("/api/clips/{clip_id}/segment.wav")
    def segment(clip_id: str):
        try:
            data = store.segment_wav(clip_id)
        except UnknownId as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except FileNotFoundError as exc:
            return JSONResponse(status_code=404, content={"detail": str(exc)})
        return Response(content=data, media_type="audio/wav")

    if static_dir is not None and Path(static_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def serve(root: str | Path, port: int = 8741, static_dir: str | Path | None = None):
    """Run the review service; raises on a busy port."""
    import uvicorn

    app = create_app(root, static_dir=static_dir)
    uvicorn.run(app, host="127.0.0.1", port=port)
