import numpy as np
import pytest

import oracles
from catalyst_ood import (
    ChannelStatisticKind,
    Energy,
    ScoreSet,
    SynthSpec,
    ValidationError,
    compute_stat_batch,
    evaluate,
    fit_baseline,
    gap_features,
    generate,
    generate_calibration_split,
    measure_separations,
    verify_theorems,
)

MEAN = ChannelStatisticKind.MEAN


class TestGenerate:
    def test_same_seed_bit_identical(self, tmp_path):
        spec = SynthSpec(n_channels=5, spatial_k=3, n_samples_id=20, n_samples_ood=15, seed=99)
        a_id, a_ood = generate(spec)
        b_id, b_ood = generate(spec)
        assert a_id.activations.tobytes() == b_id.activations.tobytes()
        assert a_ood.activations.tobytes() == b_ood.activations.tobytes()
        assert a_id.logits.tobytes() == b_id.logits.tobytes()
        # and byte-identical on disk too
        a_id.save(tmp_path / "a" / "manifest.json")
        b_id.save(tmp_path / "b" / "manifest.json")
        assert (tmp_path / "a" / "synth_id.catf").read_bytes() == (tmp_path / "b" / "synth_id.catf").read_bytes()

    def test_different_seeds_differ(self):
        a, _ = generate(SynthSpec(seed=1, n_samples_id=5, n_samples_ood=5))
        b, _ = generate(SynthSpec(seed=2, n_samples_id=5, n_samples_ood=5))
        assert a.activations.tobytes() != b.activations.tobytes()

    def test_sample_draws_independent_of_dataset_size(self):
        # Counter-based streams: growing the dataset must not change
        # earlier samples.
        small, _ = generate(SynthSpec(seed=5, n_samples_id=4, n_samples_ood=4))
        large, _ = generate(SynthSpec(seed=5, n_samples_id=9, n_samples_ood=4))
        np.testing.assert_array_equal(small.activations, large.activations[:4])

    def test_non_negative_and_shapes(self):
        spec = SynthSpec(n_channels=7, spatial_k=2, n_samples_id=11, n_samples_ood=6, n_classes=4)
        id_ds, ood_ds = generate(spec)
        assert id_ds.activations.shape == (11, 7, 2, 2)
        assert ood_ds.logits.shape == (6, 4)
        assert (id_ds.activations >= 0).all()
        assert (ood_ds.activations >= 0).all()

    def test_identical_parameters_give_chance_auroc(self):
        spec = SynthSpec(
            n_channels=8, spatial_k=3, n_samples_id=500, n_samples_ood=500,
            id_channel_mean=1.0, ood_channel_mean=1.0, id_spread=0.5, ood_spread=0.5, seed=11,
        )
        id_ds, ood_ds = generate(spec)
        fitted = fit_baseline(Energy(), None, id_ds.head)
        id_scores = fitted.score_batch(gap_features(id_ds.activations), id_ds.logits.astype(np.float64))
        ood_scores = fitted.score_batch(gap_features(ood_ds.activations), ood_ds.logits.astype(np.float64))
        report = evaluate(ScoreSet(id_scores=id_scores, ood_scores=ood_scores))
        assert report.auroc == pytest.approx(0.5, abs=0.05)

    def test_suppressed_ood_mean_lowers_mean_scale(self):
        spec = SynthSpec(
            n_channels=8, spatial_k=3, n_samples_id=200, n_samples_ood=200,
            id_channel_mean=1.0, ood_channel_mean=0.2, seed=21,
        )
        id_ds, ood_ds = generate(spec)
        id_mean_stat = compute_stat_batch(id_ds.activations, MEAN).sum(axis=1)
        ood_mean_stat = compute_stat_batch(ood_ds.activations, MEAN).sum(axis=1)
        assert id_mean_stat.mean() > ood_mean_stat.mean()

    def test_calibration_split_same_head_different_draws(self):
        spec = SynthSpec(seed=31, n_samples_id=10, n_samples_ood=10)
        id_ds, _ = generate(spec)
        cal = generate_calibration_split(spec)
        np.testing.assert_array_equal(cal.head.weights, id_ds.head.weights)
        assert cal.activations.tobytes() != id_ds.activations.tobytes()

    def test_spec_json_round_trip(self):
        spec = SynthSpec(seed=7, ood_spread=0.25)
        assert SynthSpec.from_json(spec.to_json()) == spec

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValidationError):
            SynthSpec(n_channels=0)
        with pytest.raises(ValidationError):
            SynthSpec(id_spread=0.0)


class TestMeasureSeparations:
    def test_constant_unit_scale_collapses_to_original(self, rng):
        s_in = rng.normal(loc=2, size=100)
        s_out = rng.normal(size=100)
        ones = np.ones(100)
        report = measure_separations(s_in, s_out, ones, ones)
        assert report.delta_scaled == pytest.approx(report.delta_original, rel=1e-12)
        assert report.delta_shift == pytest.approx(report.delta_original, rel=1e-12)

    def test_shift_gap_identity(self):
        # Linearity makes this exact: constant factors 2 and 1.5 shift the
        # additive gap by exactly 0.5.
        rng = np.random.default_rng(5)
        s_in = rng.normal(loc=1, size=400)
        s_out = rng.normal(size=400)
        report = measure_separations(s_in, s_out, np.full(400, 2.0), np.full(400, 1.5))
        assert report.delta_shift - report.delta_original == pytest.approx(0.5, rel=1e-9)

    def test_fields_against_compensated_oracle(self, rng):
        s_in = rng.normal(loc=3, scale=2, size=1000)
        s_out = rng.normal(loc=1, scale=2, size=1000)
        g_in = rng.uniform(1.5, 2.5, size=1000)
        g_out = rng.uniform(1.0, 1.5, size=1000)
        report = measure_separations(s_in, s_out, g_in, g_out)
        cm = oracles.compensated_mean
        assert report.delta_original == pytest.approx(cm(s_in) - cm(s_out), rel=1e-9)
        assert report.delta_scaled == pytest.approx(cm(g_in * s_in) - cm(g_out * s_out), rel=1e-9)
        assert report.delta_shift == pytest.approx(cm(g_in + s_in) - cm(g_out + s_out), rel=1e-9)
        assert report.gamma_bar_in == pytest.approx(cm(g_in), rel=1e-12)
        assert report.gamma_bar_out == pytest.approx(cm(g_out), rel=1e-12)

    def test_rejects_nonpositive_factors(self, rng):
        with pytest.raises(ValidationError):
            measure_separations([1.0], [0.5], [0.0], [1.0])


class TestVerifyTheorems:
    @staticmethod
    def well_behaved_report(seed=0, n=500):
        rng = np.random.default_rng(seed)
        g_in = rng.uniform(1.5, 2.5, size=n)
        g_out = rng.uniform(1.0, 1.6, size=n)
        s_in = rng.normal(loc=3.0, size=n)
        s_out = rng.normal(loc=1.0, size=n)
        return measure_separations(s_in, s_out, g_in, g_out)

    def test_holds_on_well_behaved_data(self):
        verdict = verify_theorems(self.well_behaved_report())
        assert verdict.status == "holds"

    def test_scale_floor_violation_detected(self, rng):
        g_in = rng.uniform(0.5, 0.9, size=200)
        g_out = rng.uniform(0.3, 0.7, size=200)
        s_in = rng.normal(loc=3.0, size=200)
        s_out = rng.normal(loc=1.0, size=200)
        report = measure_separations(s_in, s_out, g_in, g_out)
        verdict = verify_theorems(report)
        assert verdict.status == "assumptions_violated"
        assert "floor" in verdict.detail

    def test_ordering_violation_detected(self, rng):
        g_in = rng.uniform(1.0, 1.2, size=300)
        g_out = rng.uniform(1.8, 2.2, size=300)
        s_in = rng.normal(loc=3.0, size=300)
        s_out = rng.normal(loc=1.0, size=300)
        report = measure_separations(s_in, s_out, g_in, g_out)
        verdict = verify_theorems(report)
        assert verdict.status == "assumptions_violated"
        assert "ordering" in verdict.detail

    def test_negative_original_gap_flagged(self, rng):
        g_in = rng.uniform(1.5, 2.0, size=200)
        g_out = rng.uniform(1.0, 1.4, size=200)
        s_in = rng.normal(loc=0.0, size=200)
        s_out = rng.normal(loc=5.0, size=200)
        report = measure_separations(s_in, s_out, g_in, g_out)
        assert verify_theorems(report).status == "assumptions_violated"

    def test_shift_identity_is_exact_regardless_of_covariance(self, rng):
        # The additive identity needs no uncorrelatedness at all: build
        # strongly correlated (factor, score) pairs and check it directly.
        for trial in range(50):
            n = int(rng.integers(5, 300))
            s_in = rng.normal(size=n)
            s_out = rng.normal(size=n)
            g_in = 1.0 + np.abs(s_in)  # correlated on purpose
            g_out = 1.0 + np.abs(s_out)
            report = measure_separations(s_in, s_out, g_in, g_out)
            lhs = report.delta_shift - report.delta_original
            rhs = report.gamma_bar_in - report.gamma_bar_out
            assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)
