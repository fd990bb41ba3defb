import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from birdclean.fixture import make_mirror, write_wav
from birdclean.ingest import (
    AudioDecodeError,
    Category,
    LocalMirrorFetcher,
    SAMPLE_RATE,
    categorize_type_field,
    decode_audio,
    fetch_species_recordings,
    load_species_index,
)


class TestCategorize:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("flight call", Category.CALL),
            ("song, call", Category.BOTH),
            ("drumming", Category.OTHER),
            ("Song", Category.SONG),
            ("", Category.OTHER),
            ("SUBSONG AND CALLS", Category.BOTH),
        ],
    )
    def test_examples(self, text, expected):
        assert categorize_type_field(text) == expected

    @given(
        st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=30),
        st.booleans(),
        st.booleans(),
    )
    def test_substring_rule(self, noise, with_song, with_call):
        text = noise
        if with_song:
            text += "SoNg"
        if with_call:
            text += "CaLl"
        got = categorize_type_field(text)
        has_song = "song" in text.lower()
        has_call = "call" in text.lower()
        if has_song and has_call:
            assert got == Category.BOTH
        elif has_song:
            assert got == Category.SONG
        elif has_call:
            assert got == Category.CALL
        else:
            assert got == Category.OTHER


class TestDecodeAudio:
    def test_sine_peak(self, tmp_path):
        t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
        write_wav(tmp_path / "sine.wav", 0.5 * np.sin(2 * np.pi * 440 * t))
        w = decode_audio(tmp_path / "sine.wav")
        spectrum = np.abs(np.fft.rfft(w.samples))
        freqs = np.fft.rfftfreq(len(w.samples), 1.0 / w.sample_rate)
        peak = freqs[np.argmax(spectrum)]
        bin_width = w.sample_rate / len(w.samples)
        assert abs(peak - 440.0) <= bin_width

    def test_all_zero(self, tmp_path):
        write_wav(tmp_path / "z.wav", np.zeros(1000))
        w = decode_audio(tmp_path / "z.wav")
        assert np.all(w.samples == 0)

    def test_resample_preserves_duration(self, tmp_path):
        rate = 44100
        write_wav(tmp_path / "hi.wav", np.random.default_rng(0).uniform(-0.1, 0.1, 2 * rate), rate=rate)
        w = decode_audio(tmp_path / "hi.wav")
        assert w.sample_rate == 22050
        assert abs(len(w.samples) - 2 * 22050) <= 2  # +-1 sample per second

    def test_stereo_averaged(self, tmp_path):
        from scipy.io import wavfile

        left = np.full(500, 0.5)
        right = np.full(500, -0.5)
        data = (np.stack([left, right], axis=1) * 32767).astype(np.int16)
        wavfile.write(tmp_path / "st.wav", SAMPLE_RATE, data)
        w = decode_audio(tmp_path / "st.wav")
        assert np.abs(w.samples).max() < 1e-3

    def test_missing_file(self, tmp_path):
        with pytest.raises(AudioDecodeError):
            decode_audio(tmp_path / "nope.wav")


@pytest.fixture(scope="module")
def mirror(tmp_path_factory):
    return make_mirror(tmp_path_factory.mktemp("mirror"), n_recordings=4, outlier_recordings=1)


class TestFetch:
    def test_mirror_fetch(self, mirror, tmp_path):
        fetcher = LocalMirrorFetcher(mirror)
        metas = fetch_species_recordings("Testus", "syntheticus", "SYNT", tmp_path, fetcher)
        assert len(metas) == 4
        assert all((tmp_path / "SYNT" / "raw" / f"{m.recording_id}.wav").exists() for m in metas)
        loaded = load_species_index(tmp_path, "SYNT")
        assert [m.recording_id for m in loaded] == sorted(m.recording_id for m in metas)

    def test_limit_zero(self, mirror, tmp_path):
        metas = fetch_species_recordings(
            "Testus", "syntheticus", "SYNT", tmp_path, LocalMirrorFetcher(mirror), limit=0
        )
        assert metas == []
        assert list((tmp_path / "SYNT" / "raw").glob("*")) == []

    def test_idempotent(self, mirror, tmp_path):
        fetcher = LocalMirrorFetcher(mirror)
        fetch_species_recordings("Testus", "syntheticus", "SYNT", tmp_path, fetcher)
        first = {
            p.name: p.read_bytes() for p in (tmp_path / "SYNT" / "meta").glob("*.json")
        }
        first["index"] = (tmp_path / "SYNT" / "index.json").read_bytes()
        fetch_species_recordings("Testus", "syntheticus", "SYNT", tmp_path, fetcher)
        second = {
            p.name: p.read_bytes() for p in (tmp_path / "SYNT" / "meta").glob("*.json")
        }
        second["index"] = (tmp_path / "SYNT" / "index.json").read_bytes()
        assert first == second

    def test_malformed_record_skipped(self, mirror, tmp_path):
        records = json.loads((mirror / "recordings.json").read_text())
        records.append(None)  # malformed entry
        broken = tmp_path / "broken_mirror"
        broken.mkdir()
        (broken / "recordings.json").write_text(json.dumps(records))
        (broken / "audio").symlink_to(mirror / "audio")

        class TolerantFetcher(LocalMirrorFetcher):
            def list_recordings(self, genus, species):
                with open(self.mirror_dir / "recordings.json") as f:
                    return [r for r in json.load(f)]

        # None record lacks gen/sp filters, exercise the skip path directly
        metas = fetch_species_recordings(
            "Testus", "syntheticus", "SYNT", tmp_path / "out", TolerantFetcher(broken)
        )
        assert len(metas) == 4
