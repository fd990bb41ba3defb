"""Synthetic single-species fixtures so every stage runs offline.

Two flavors: a clip-level benchmark set (chirp "songs", tone-burst
"calls", injected noise/low-chirp outliers with known ground truth) and a
WAV local-mirror directory that exercises the fetch/decode/preprocess
path end to end.
"""

from __future__ import annotations

import json
import wave
from pathlib import Path

import numpy as np

from .ingest import SAMPLE_RATE, Category, Waveform
from .preprocess import PreprocessConfig, Segment, extract_clip, mel_spectrogram


def _chirp(rng, f0_range, f1_range, duration_s, amp=0.5):
    f0 = rng.uniform(*f0_range)
    f1 = rng.uniform(*f1_range)
    n = int(duration_s * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    phase = 2 * np.pi * (f0 * t + (f1 - f0) / (2 * duration_s) * t**2)
    env = np.hanning(n)
    return amp * env * np.sin(phase)


def _bursts(rng, freq_range, n_bursts, burst_s=0.08, amp=0.5):
    gap = int(0.06 * SAMPLE_RATE)
    parts = []
    for _ in range(n_bursts):
        f = rng.uniform(*freq_range)
        n = int(burst_s * SAMPLE_RATE)
        t = np.arange(n) / SAMPLE_RATE
        parts.append(amp * np.hanning(n) * np.sin(2 * np.pi * f * t))
        parts.append(np.zeros(gap))
    return np.concatenate(parts[:-1])


def _noise_burst(rng, duration_s=0.3, amp=0.4):
    n = int(duration_s * SAMPLE_RATE)
    return amp * np.hanning(n) * rng.standard_normal(n) * 0.5


def synth_sound(kind: str, rng) -> np.ndarray:
    """One ~1 s sound of the given fixture kind, centered in the window."""
    if kind == "song":
        sound = _chirp(rng, (2000, 2500), (3800, 4400), rng.uniform(0.5, 0.7))
    elif kind == "call":
        sound = _bursts(rng, (2800, 3200), int(rng.integers(2, 5)))
    elif kind == "outlier_noise":
        sound = _noise_burst(rng)
    elif kind == "outlier_lowchirp":
        sound = _chirp(rng, (250, 350), (700, 900), rng.uniform(0.4, 0.6))
    else:
        raise ValueError(f"unknown fixture kind {kind!r}")
    total = int(1.0 * SAMPLE_RATE)
    out = np.zeros(total)
    start = (total - len(sound)) // 2
    out[start : start + len(sound)] = sound[: total - start]
    out += 0.003 * rng.standard_normal(total)
    return np.clip(out, -1.0, 1.0)


def make_benchmark_clips(
    n_songs: int = 500,
    n_calls: int = 500,
    n_outliers: int = 100,
    seed: int = 0,
    cfg: PreprocessConfig | None = None,
):
    """Clip-level fixture with ground truth.

    Returns (mels, clip_ids, categories, outlier_ids): a (n, bands,
    frames) float32 stack, ids, per-clip category labels, and the set of
    injected-outlier ids.
    """
    cfg = cfg or PreprocessConfig()
    rng = np.random.default_rng(seed)
    kinds = (
        ["song"] * n_songs
        + ["call"] * n_calls
        + ["outlier_noise"] * (n_outliers // 2)
        + ["outlier_lowchirp"] * (n_outliers - n_outliers // 2)
    )
    mels, clip_ids, categories = [], [], []
    outlier_ids = set()
    for i, kind in enumerate(kinds):
        samples = synth_sound(kind, rng).astype(np.float32)
        w = Waveform(samples=samples)
        seg = Segment(recording_id=f"fx{i}", start_sample=0, end_sample=len(samples))
        spec = mel_spectrogram(w, seg, cfg)
        mel, _ = extract_clip(spec, cfg)
        clip_id = f"fx{i}"
        mels.append(mel.astype(np.float32))
        clip_ids.append(clip_id)
        if kind.startswith("outlier"):
            outlier_ids.add(clip_id)
            categories.append(Category.OTHER)
        else:
            categories.append(Category.SONG if kind == "song" else Category.CALL)
    return np.stack(mels), clip_ids, categories, outlier_ids


def write_wav(path: str | Path, samples: np.ndarray, rate: int = SAMPLE_RATE) -> None:
    data = (np.clip(samples, -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(rate)
        f.writeframes(data.tobytes())


def make_mirror(
    mirror_dir: str | Path,
    genus: str = "Testus",
    species: str = "syntheticus",
    n_recordings: int = 12,
    outlier_recordings: int = 3,
    seed: int = 0,
) -> Path:
    """WAV local-mirror directory for end-to-end runs.

    Each recording holds a few sounds separated by silence; the last
    outlier_recordings recordings carry a foreign sound in addition to
    target sounds.
    """
    mirror_dir = Path(mirror_dir)
    audio_dir = mirror_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    silence = np.zeros(int(0.6 * SAMPLE_RATE))
    records = []
    for i in range(n_recordings):
        rid = 100000 + i
        kinds = ["song", "call"] if i % 2 == 0 else ["call", "song", "call"]
        type_field = "song, call" if "song" in kinds and "call" in kinds else kinds[0]
        if i >= n_recordings - outlier_recordings:
            kinds.append("outlier_noise" if i % 2 else "outlier_lowchirp")
        parts = [silence]
        for kind in kinds:
            parts.append(synth_sound(kind, rng))
            parts.append(silence.copy())
        samples = np.concatenate(parts)
        fname = f"{rid}.wav"
        write_wav(audio_dir / fname, samples)
        records.append(
            {
                "id": str(rid),
                "gen": genus,
                "sp": species,
                "en": "Synthetic Testbird",
                "type": type_field,
                "also": [],
                "file-name": fname,
                "file": f"//localmirror/{fname}",
            }
        )
    (mirror_dir / "recordings.json").write_text(json.dumps(records, indent=2))
    return mirror_dir
