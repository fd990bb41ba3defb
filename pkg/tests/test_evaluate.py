import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from birdclean.evaluate import (
    RateEstimate,
    ReviewVerdict,
    Verdict,
    entropy_report,
    estimate_rate,
    sample_for_review,
    spectrogram_entropy,
)


def verdicts(n_out, n_in, n_und=0):
    out = [ReviewVerdict(f"o{i}", Verdict.OUTLIER) for i in range(n_out)]
    out += [ReviewVerdict(f"i{i}", Verdict.INLIER) for i in range(n_in)]
    out += [ReviewVerdict(f"u{i}", Verdict.INDETERMINATE) for i in range(n_und)]
    return out


class TestSampling:
    def test_deterministic_given_seed(self):
        flagged = {f"c{i}" for i in range(40)}
        assert sample_for_review(flagged, 7, 10) == sample_for_review(flagged, 7, 10)

    def test_different_seeds_differ(self):
        flagged = {f"c{i}" for i in range(40)}
        assert sample_for_review(flagged, 0, 10) != sample_for_review(flagged, 1, 10)

    def test_no_replacement(self):
        flagged = {f"c{i}" for i in range(25)}
        sample = sample_for_review(flagged, 3, 25)
        assert len(sample) == len(set(sample)) == 25
        assert set(sample) == flagged

    def test_max_n_beyond_population(self):
        flagged = {"a", "b", "c"}
        assert set(sample_for_review(flagged, 0, 99)) == flagged

    def test_prefix_consistency(self):
        # a larger budget extends the same draw order, never reshuffles
        flagged = {f"c{i}" for i in range(30)}
        assert sample_for_review(flagged, 5, 20)[:8] == sample_for_review(flagged, 5, 8)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sample_for_review(set(), 0, 5)

    def test_approximately_uniform(self):
        # each of 20 ids should appear in a size-5 sample about 1/4 of the
        # time over many seeds; allow 3 sigma
        flagged = [f"c{i:02d}" for i in range(20)]
        counts = {c: 0 for c in flagged}
        trials = 2000
        for seed in range(trials):
            for c in sample_for_review(flagged, seed, 5):
                counts[c] += 1
        expect = trials * 5 / 20
        sigma = math.sqrt(trials * 0.25 * 0.75)
        for c, k in counts.items():
            assert abs(k - expect) < 3 * sigma


class TestRateEstimate:
    def test_half_of_96_moe(self):
        est = estimate_rate(verdicts(48, 48))
        assert est.rate == pytest.approx(0.5)
        assert est.moe == pytest.approx(0.1000, abs=1e-4)
        assert est.n_sampled == 96

    def test_all_positive_zero_moe(self):
        est = estimate_rate(verdicts(10, 0))
        assert est.rate == 1.0 and est.moe == 0.0

    def test_all_negative(self):
        est = estimate_rate(verdicts(0, 10))
        assert est.rate == 0.0 and est.moe == 0.0

    def test_indeterminate_excluded(self):
        est = estimate_rate(verdicts(3, 1, n_und=6))
        assert est.rate == pytest.approx(0.75)
        assert est.n_sampled == 4

    def test_only_indeterminate_rejected(self):
        with pytest.raises(ValueError):
            estimate_rate(verdicts(0, 0, n_und=5))

    def test_hand_computed_90pct(self):
        est = estimate_rate(verdicts(30, 70), confidence=0.90)
        z = 1.6448536269514722
        assert est.moe == pytest.approx(z * math.sqrt(0.3 * 0.7 / 100), abs=1e-9)

    def test_positive_label_switch(self):
        est = estimate_rate(verdicts(3, 7), positive=Verdict.INLIER)
        assert est.rate == pytest.approx(0.7)

    def test_finite_population_correction(self):
        plain = estimate_rate(verdicts(20, 20))
        fpc = estimate_rate(
            verdicts(20, 20), n_population=50, finite_population_correction=True
        )
        assert fpc.moe == pytest.approx(plain.moe * math.sqrt((50 - 40) / 49))
        census = estimate_rate(
            verdicts(20, 20), n_population=40, finite_population_correction=True
        )
        assert census.moe == pytest.approx(0.0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 200), st.integers(0, 200))
    def test_moe_shrinks_with_n(self, n_out, n_in):
        est = estimate_rate(verdicts(n_out, n_in))
        n = n_out + n_in
        p = n_out / n
        assert est.moe == pytest.approx(1.959963984540054 * math.sqrt(p * (1 - p) / n))
        assert est.moe <= 1.96 * 0.5 / math.sqrt(n) + 1e-12

    def test_to_dict(self):
        d = estimate_rate(verdicts(1, 1)).to_dict()
        assert d["n_sampled"] == 2 and d["confidence"] == 0.95


class TestEntropy:
    def test_uniform_is_log2_cells(self):
        mel = np.full((32, 40), 10.0 * math.log10(2.0))  # power 1 per cell
        assert spectrogram_entropy(mel) == pytest.approx(math.log2(1280), abs=1e-9)

    def test_single_nonzero_cell_zero_bits(self):
        mel = np.zeros((32, 40))
        mel[5, 7] = 30.0
        assert spectrogram_entropy(mel) == 0.0

    def test_all_floor_zero(self):
        assert spectrogram_entropy(np.zeros((32, 40))) == 0.0

    def test_two_equal_cells_one_bit(self):
        mel = np.zeros((4, 4))
        mel[0, 0] = mel[1, 1] = 10.0 * math.log10(2.0)
        assert spectrogram_entropy(mel) == pytest.approx(1.0, abs=1e-12)

    def test_hand_computed_quarter_split(self):
        # powers 3 and 1 -> p = (0.75, 0.25)
        mel = np.zeros((2, 2))
        mel[0, 0] = 10.0 * math.log10(4.0)  # power 3
        mel[0, 1] = 10.0 * math.log10(2.0)  # power 1
        expected = -(0.75 * math.log2(0.75) + 0.25 * math.log2(0.25))
        assert spectrogram_entropy(mel) == pytest.approx(expected, abs=1e-12)

    def test_uniform_maximizes(self):
        rng = np.random.default_rng(0)
        cells = 32 * 40
        for _ in range(20):
            mel = rng.uniform(0, 60, size=(32, 40))
            assert spectrogram_entropy(mel) <= math.log2(cells) + 1e-9

    def test_power_scale_invariance(self):
        # doubling every cell's linear power leaves the distribution alone
        rng = np.random.default_rng(1)
        mel = rng.uniform(1, 40, size=(8, 10))
        power = 10.0 ** (mel / 10.0) - 1.0
        scaled = 10.0 * np.log10(2.0 * power + 1.0)
        assert spectrogram_entropy(scaled) == pytest.approx(
            spectrogram_entropy(mel), abs=1e-9
        )


class TestEntropyReport:
    def test_means_per_label(self):
        one_bit = np.zeros((4, 4))
        one_bit[0, 0] = one_bit[1, 1] = 10.0 * math.log10(2.0)
        zero_bits = np.zeros((4, 4))
        zero_bits[0, 0] = 20.0
        clips = [
            SimpleNamespace(mel=one_bit, category="song"),
            SimpleNamespace(mel=zero_bits, category="song"),
            SimpleNamespace(mel=one_bit, category="call"),
        ]
        report = entropy_report(clips)
        assert report["per_label"]["song"] == pytest.approx(0.5)
        assert report["per_label"]["call"] == pytest.approx(1.0)
        assert report["overall"] == pytest.approx(2.0 / 3.0)
        assert report["n_clips"] == 3

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            entropy_report([])

    def test_enum_categories(self):
        from birdclean.ingest import Category

        mel = np.zeros((4, 4))
        mel[0, 0] = 10.0
        clips = [SimpleNamespace(mel=mel, category=Category.SONG)]
        assert "song" in entropy_report(clips)["per_label"]
