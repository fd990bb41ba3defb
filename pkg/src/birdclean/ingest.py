"""Recording ingestion: fetch audio + metadata, decode, derive categories.

Two fetch backends share one interface: a remote client for the public
xeno-canto API and a local mirror directory so the rest of the pipeline
runs fully offline. Everything downstream consumes the on-disk store this
module writes:

    <root>/<species_code>/raw/<recording_id>.<ext>
    <root>/<species_code>/meta/<recording_id>.json
    <root>/<species_code>/index.json
"""

from __future__ import annotations

import enum
import json
import logging
import math
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

log = logging.getLogger(__name__)

SAMPLE_RATE = 22050


class Category(str, enum.Enum):
    SONG = "song"
    CALL = "call"
    BOTH = "both"
    OTHER = "other"


def categorize_type_field(type_field: str) -> Category:
    """Case-insensitive substring search for "song" / "call"."""
    t = type_field.lower()
    has_song = "song" in t
    has_call = "call" in t
    if has_song and has_call:
        return Category.BOTH
    if has_song:
        return Category.SONG
    if has_call:
        return Category.CALL
    return Category.OTHER


@dataclass
class RecordingMeta:
    recording_id: str
    species_code: str
    genus: str
    species: str
    common_name: str
    type_field: str
    category: Category
    audio_path: str
    extra_species: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["category"] = self.category.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RecordingMeta":
        d = dict(d)
        d["category"] = Category(d["category"])
        return cls(**d)


@dataclass
class Waveform:
    samples: np.ndarray  # float32, mono, in [-1, 1]
    sample_rate: int = SAMPLE_RATE

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


class AudioDecodeError(Exception):
    pass


def decode_audio(audio_path: str | Path, target_rate: int = SAMPLE_RATE) -> Waveform:
    """Decode WAV or MP3 to a mono float series at the target rate.

    Multi-channel inputs are averaged to mono. MP3 needs an external
    decoder (soundfile with mp3-capable libsndfile, or ffmpeg on PATH);
    callers should treat AudioDecodeError as "recording unusable" and
    continue.
    """
    path = Path(audio_path)
    if not path.exists():
        raise AudioDecodeError(f"no such file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".wav":
        rate, data = wavfile.read(path)
        samples = _to_float_mono(data)
    else:
        rate, samples = _decode_compressed(path)
    if rate != target_rate:
        g = math.gcd(int(target_rate), int(rate))
        samples = resample_poly(samples, target_rate // g, rate // g)
    samples = np.clip(samples, -1.0, 1.0).astype(np.float32)
    return Waveform(samples=samples, sample_rate=target_rate)


def _to_float_mono(data: np.ndarray) -> np.ndarray:
    if data.ndim > 1:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    return data.astype(np.float64)


def _decode_compressed(path: Path) -> tuple[int, np.ndarray]:
    try:
        import soundfile  # optional; mp3 support depends on libsndfile build

        data, rate = soundfile.read(path, dtype="float64")
        if data.ndim > 1:
            data = data.mean(axis=1)
        return int(rate), data
    except ImportError:
        pass
    if shutil.which("ffmpeg"):
        with tempfile.NamedTemporaryFile(suffix=".wav") as tmp:
            subprocess.run(
                ["ffmpeg", "-y", "-loglevel", "error", "-i", str(path), tmp.name],
                check=True,
            )
            rate, data = wavfile.read(tmp.name)
            return rate, _to_float_mono(data)
    raise AudioDecodeError(
        f"cannot decode {path.suffix} file {path.name}: no mp3 backend available"
    )


class LocalMirrorFetcher:
    """Reads a pre-downloaded mirror directory.

    Layout: <mirror>/recordings.json (list of xeno-canto API-shaped
    records) and <mirror>/audio/<id>.<ext>.
    """

    def __init__(self, mirror_dir: str | Path):
        self.mirror_dir = Path(mirror_dir)

    def list_recordings(self, genus: str, species: str) -> list[dict]:
        with open(self.mirror_dir / "recordings.json") as f:
            records = json.load(f)
        return [
            r
            for r in records
            if r.get("gen", "").lower() == genus.lower()
            and r.get("sp", "").lower() == species.lower()
        ]

    def retrieve_audio(self, record: dict, dest: Path) -> None:
        src = self.mirror_dir / "audio" / record["file-name"]
        shutil.copyfile(src, dest)


class XenoCantoClient:
    """Thin client for the public repository API (paginated JSON)."""

    def __init__(self, base_url: str = "https://xeno-canto.org/api/2/recordings"):
        self.base_url = base_url

    def list_recordings(self, genus: str, species: str) -> list[dict]:
        import requests

        records: list[dict] = []
        page = 1
        while True:
            resp = requests.get(
                self.base_url,
                params={"query": f"{genus} {species}", "page": page},
                timeout=60,
            )
            resp.raise_for_status()
            doc = resp.json()
            records.extend(doc.get("recordings", []))
            if page >= int(doc.get("numPages", 1)):
                break
            page += 1
        return records

    def retrieve_audio(self, record: dict, dest: Path) -> None:
        import requests

        url = record["file"]
        if url.startswith("//"):
            url = "https:" + url
        resp = requests.get(url, timeout=300)
        resp.raise_for_status()
        dest.write_bytes(resp.content)


def fetch_species_recordings(
    genus: str,
    species: str,
    species_code: str,
    dest: str | Path,
    fetcher,
    limit: int | None = None,
) -> list[RecordingMeta]:
    """Populate the on-disk store for one species; idempotent.

    Already-cached recordings are skipped; per-recording retrieval
    failures are logged and skipped rather than aborting the fetch.
    """
    root = Path(dest) / species_code
    raw_dir = root / "raw"
    meta_dir = root / "meta"
    raw_dir.mkdir(parents=True, exist_ok=True)
    meta_dir.mkdir(parents=True, exist_ok=True)

    records = fetcher.list_recordings(genus, species)
    if limit is not None:
        records = records[:limit]

    metas: list[RecordingMeta] = []
    for record in records:
        try:
            rid = str(record["id"])
            type_field = record.get("type", "")
            ext = Path(record.get("file-name", "audio.mp3")).suffix or ".mp3"
        except (KeyError, TypeError) as exc:
            log.warning("skipping malformed metadata record: %s", exc)
            continue
        audio_path = raw_dir / f"{rid}{ext}"
        meta_path = meta_dir / f"{rid}.json"
        if not audio_path.exists():
            try:
                fetcher.retrieve_audio(record, audio_path)
            except Exception as exc:
                log.warning("failed to retrieve audio for %s: %s", rid, exc)
                continue
        meta = RecordingMeta(
            recording_id=rid,
            species_code=species_code,
            genus=record.get("gen", genus),
            species=record.get("sp", species),
            common_name=record.get("en", ""),
            type_field=type_field,
            category=categorize_type_field(type_field),
            audio_path=str(audio_path),
            extra_species=[s for s in record.get("also", []) if s],
        )
        if not meta_path.exists():
            meta_path.write_text(json.dumps(meta.to_dict(), indent=2, sort_keys=True))
        metas.append(meta)

    index = {
        "species_code": species_code,
        "genus": genus,
        "species": species,
        "recordings": sorted(m.recording_id for m in metas),
    }
    (root / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))
    return metas


def load_species_index(root: str | Path, species_code: str) -> list[RecordingMeta]:
    base = Path(root) / species_code
    with open(base / "index.json") as f:
        index = json.load(f)
    metas = []
    for rid in index["recordings"]:
        with open(base / "meta" / f"{rid}.json") as f:
            metas.append(RecordingMeta.from_dict(json.load(f)))
    return metas
