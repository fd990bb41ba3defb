"""Waveform -> screened, energy-centered 32x40 mel-spectrogram clips.

Stages, per recording: silence-based segmentation, per-segment SINR
relative to the silence baseline, two-stage SINR screening (absolute floor
plus a margin below the recording's 75th-percentile segment SINR),
mel-spectrogram conversion, and fixed-width clip extraction centered on
the segment's center of energy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import Category, Waveform

N_MEL_BANDS = 32
CLIP_FRAMES = 40


@dataclass
class PreprocessConfig:
    silence_floor_db: float = -48.0  # below recording peak frame power
    min_silence_ms: float = 200.0
    min_segment_ms: float = 50.0
    abs_min_sinr_db: float = 5.0
    rel_sinr_margin_db: float = 5.0
    clip_frames: int = CLIP_FRAMES
    fft_size: int = 1024
    hop_samples: int = 512
    mel_bands: int = N_MEL_BANDS
    fmin_hz: float = 0.0
    fmax_hz: float = 11025.0
    frame_ms: float = 10.0  # silence-detection frame
    db_dynamic_range: float = 80.0

    def __post_init__(self):
        if self.clip_frames < 1:
            raise ValueError("clip_frames must be >= 1")
        if self.rel_sinr_margin_db < 0:
            raise ValueError("rel_sinr_margin_db must be >= 0")


@dataclass
class Segment:
    recording_id: str
    start_sample: int
    end_sample: int
    sinr_db: float = float("nan")

    def __post_init__(self):
        if self.start_sample >= self.end_sample:
            raise ValueError("start_sample must be < end_sample")


@dataclass
class Clip:
    clip_id: str
    recording_id: str
    segment_index: int
    mel: np.ndarray  # (mel_bands, clip_frames), dB-scaled, min 0
    category: Category
    sinr_db: float
    padded_frames: int
    start_sample: int = 0  # source-segment bounds, for review playback
    end_sample: int = 0


def detect_silence(
    w: Waveform, cfg: PreprocessConfig, recording_id: str = ""
) -> tuple[list[Segment], float]:
    """Split on silence; returns non-silence segments and the mean linear
    power over silence samples (the SINR baseline).

    Gaps shorter than min_silence_ms do not split a segment, so brief
    chip-calls survive; runs shorter than min_segment_ms are dropped.
    """
    x = np.asarray(w.samples, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("empty waveform")
    frame = max(1, int(round(cfg.frame_ms * w.sample_rate / 1000.0)))
    n_frames = len(x) // frame
    if n_frames == 0:
        frames_pow = np.array([np.mean(x**2)])
        n_frames = 1
    else:
        frames_pow = (x[: n_frames * frame] ** 2).reshape(n_frames, frame).mean(axis=1)
    peak = frames_pow.max()
    if peak <= 0.0:
        return [], 0.0
    with np.errstate(divide="ignore"):
        rel_db = 10.0 * np.log10(frames_pow / peak)
    loud = rel_db >= cfg.silence_floor_db

    # merge loud runs separated by short gaps
    gap_frames = int(round(cfg.min_silence_ms / cfg.frame_ms))
    runs = _runs(loud)
    merged: list[list[int]] = []
    for start, end in runs:
        if merged and start - merged[-1][1] < gap_frames:
            merged[-1][1] = end
        else:
            merged.append([start, end])

    min_seg_frames = max(1, int(round(cfg.min_segment_ms / cfg.frame_ms)))
    segments = []
    silence_mask = np.ones(n_frames, dtype=bool)
    for start, end in merged:
        silence_mask[start:end] = False
        if end - start >= min_seg_frames:
            end_sample = int(end * frame) if end < n_frames else len(x)
            segments.append(
                Segment(
                    recording_id=recording_id,
                    start_sample=int(start * frame),
                    end_sample=end_sample,
                )
            )
    if silence_mask.any():
        sil = (
            x[: n_frames * frame]
            .reshape(n_frames, frame)[silence_mask]
            .ravel()
        )
        baseline = float(np.mean(sil**2))
    else:
        baseline = 0.0
    return segments, baseline


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """[start, end) index pairs of True runs."""
    idx = np.flatnonzero(np.diff(np.concatenate(([0], mask.view(np.int8), [0]))))
    return list(zip(idx[0::2], idx[1::2]))


def compute_sinr(w: Waveform, seg: Segment, silence_baseline_power: float) -> float:
    """Mean segment power over the silence baseline, in dB."""
    x = np.asarray(w.samples[seg.start_sample : seg.end_sample], dtype=np.float64)
    p = float(np.mean(x**2))
    if silence_baseline_power <= 0.0:
        return float("inf")
    if p <= 0.0:
        return float("-inf")
    return 10.0 * np.log10(p / silence_baseline_power)


def screen_segments(segments: list[Segment], cfg: PreprocessConfig) -> list[Segment]:
    """Keep segments above the absolute SINR floor and within the margin
    below the recording's 75th-percentile segment SINR."""
    if not segments:
        return []
    sinrs = np.array([s.sinr_db for s in segments])
    finite = sinrs[np.isfinite(sinrs)]
    if len(finite):
        p75 = float(np.percentile(finite, 75))
        rel_floor = p75 - cfg.rel_sinr_margin_db
    else:
        rel_floor = float("-inf")
    return [
        s
        for s in segments
        if s.sinr_db >= cfg.abs_min_sinr_db and s.sinr_db >= rel_floor
    ]


def mel_filterbank(
    n_mels: int, fft_size: int, sample_rate: int, fmin: float, fmax: float
) -> np.ndarray:
    """Triangular mel filterbank, (n_mels, fft_size//2 + 1), peak weight 1."""

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    n_bins = fft_size // 2 + 1
    bin_freqs = np.linspace(0, sample_rate / 2, n_bins)
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (bin_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - bin_freqs) / max(hi - center, 1e-12)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mel_spectrogram(w: Waveform, seg: Segment, cfg: PreprocessConfig) -> np.ndarray:
    """dB mel-spectrogram of one segment, shifted so the minimum is 0.

    dB conversion floors at db_dynamic_range below the segment peak before
    the shift, bounding the dynamic range of the result.
    """
    x = np.asarray(w.samples[seg.start_sample : seg.end_sample], dtype=np.float64)
    if len(x) < cfg.fft_size:
        x = np.pad(x, (0, cfg.fft_size - len(x)))
    n_frames = 1 + (len(x) - cfg.fft_size) // cfg.hop_samples
    window = np.hanning(cfg.fft_size)
    idx = (
        np.arange(cfg.fft_size)[None, :]
        + cfg.hop_samples * np.arange(n_frames)[:, None]
    )
    frames = x[idx] * window
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2  # (T, bins)
    fb = mel_filterbank(cfg.mel_bands, cfg.fft_size, w.sample_rate, cfg.fmin_hz, cfg.fmax_hz)
    mel = fb @ power.T  # (mel_bands, T)
    peak = mel.max()
    if peak <= 0.0:
        return np.zeros_like(mel)
    floor = peak * 10.0 ** (-cfg.db_dynamic_range / 10.0)
    db = 10.0 * np.log10(np.maximum(mel, floor))
    return db - db.min()


def center_of_energy(spec: np.ndarray) -> float:
    """Energy-weighted mean frame index over linear power."""
    p = (10.0 ** (spec / 10.0)).sum(axis=0)
    total = p.sum()
    if total <= 0.0:
        return spec.shape[1] / 2.0
    return float((np.arange(spec.shape[1]) * p).sum() / total)


def extract_clip(spec: np.ndarray, cfg: PreprocessConfig) -> tuple[np.ndarray, int]:
    """Cut or pad to clip_frames columns with the center of energy at the
    matrix center.

    The window always centers on the energy centroid; columns outside the
    source spectrogram are filled with its floor value (avoids artificial
    edges) and counted in padded_frames.
    """
    if spec.shape[0] != cfg.mel_bands:
        raise ValueError(f"expected {cfg.mel_bands} mel rows, got {spec.shape[0]}")
    frames = cfg.clip_frames
    t = spec.shape[1]
    c = center_of_energy(spec)
    start = int(round(c - (frames - 1) / 2.0))
    out = np.full((spec.shape[0], frames), spec.min() if spec.size else 0.0)
    src_lo = max(start, 0)
    src_hi = min(start + frames, t)
    padded = frames - max(src_hi - src_lo, 0)
    if src_hi > src_lo:
        out[:, src_lo - start : src_hi - start] = spec[:, src_lo:src_hi]
    return out, padded


def preprocess_recording(
    w: Waveform,
    recording_id: str,
    category: Category,
    cfg: PreprocessConfig,
) -> list[Clip]:
    """Full per-recording chain: segment, screen, spectrogram, clip."""
    segments, baseline = detect_silence(w, cfg, recording_id=recording_id)
    for seg in segments:
        seg.sinr_db = compute_sinr(w, seg, baseline)
    kept = {id(s) for s in screen_segments(segments, cfg)}
    clips = []
    for seg_index, seg in enumerate(segments):
        if id(seg) not in kept:
            continue
        spec = mel_spectrogram(w, seg, cfg)
        mel, padded = extract_clip(spec, cfg)
        clips.append(
            Clip(
                clip_id=f"{recording_id}:{seg_index}",
                recording_id=recording_id,
                segment_index=seg_index,
                mel=mel.astype(np.float32),
                category=category,
                sinr_db=float(seg.sinr_db),
                padded_frames=padded,
                start_sample=seg.start_sample,
                end_sample=seg.end_sample,
            )
        )
    return clips


class ClipStore:
    """Flat binary clip store plus a JSON index.

    clips.bin holds row-major float32 (mel_bands x clip_frames) matrices
    back to back; clips.index.json maps clip_id to its offset (in clips)
    and provenance fields.
    """

    def __init__(self, directory: str | Path, cfg: PreprocessConfig | None = None):
        self.directory = Path(directory)
        self.cfg = cfg or PreprocessConfig()
        self.bin_path = self.directory / "clips.bin"
        self.index_path = self.directory / "clips.index.json"

    def write(self, clips: list[Clip]) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        index = {}
        with open(self.bin_path, "wb") as f:
            for offset, clip in enumerate(clips):
                mel = np.ascontiguousarray(clip.mel, dtype="<f4")
                expected = (self.cfg.mel_bands, self.cfg.clip_frames)
                if mel.shape != expected:
                    raise ValueError(f"clip {clip.clip_id}: shape {mel.shape} != {expected}")
                f.write(mel.tobytes())
                index[clip.clip_id] = {
                    "offset": offset,
                    "recording_id": clip.recording_id,
                    "segment_index": clip.segment_index,
                    "sinr_db": clip.sinr_db,
                    "category": clip.category.value,
                    "padded_frames": clip.padded_frames,
                    "start_sample": clip.start_sample,
                    "end_sample": clip.end_sample,
                }
        doc = {
            "mel_bands": self.cfg.mel_bands,
            "clip_frames": self.cfg.clip_frames,
            "clips": index,
        }
        self.index_path.write_text(json.dumps(doc, indent=2, sort_keys=True))

    def read(self) -> list[Clip]:
        with open(self.index_path) as f:
            doc = json.load(f)
        bands, frames = doc["mel_bands"], doc["clip_frames"]
        data = np.fromfile(self.bin_path, dtype="<f4").reshape(-1, bands, frames)
        clips = []
        for clip_id, entry in sorted(doc["clips"].items(), key=lambda kv: kv[1]["offset"]):
            clips.append(
                Clip(
                    clip_id=clip_id,
                    recording_id=entry["recording_id"],
                    segment_index=entry["segment_index"],
                    mel=data[entry["offset"]],
                    category=Category(entry["category"]),
                    sinr_db=entry["sinr_db"],
                    padded_frames=entry["padded_frames"],
                    start_sample=entry.get("start_sample", 0),
                    end_sample=entry.get("end_sample", 0),
                )
            )
        return clips


def clip_to_png(mel: np.ndarray, path: str | Path, scale: int = 8) -> None:
    """Grayscale PNG, frequency up the vertical axis, nearest upscaled."""
    from PIL import Image

    lo, hi = float(mel.min()), float(mel.max())
    norm = (mel - lo) / (hi - lo) if hi > lo else np.zeros_like(mel)
    img = (np.flipud(norm) * 255).astype(np.uint8)
    Image.fromarray(img, mode="L").resize(
        (mel.shape[1] * scale, mel.shape[0] * scale), Image.NEAREST
    ).save(path)
