import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from catalyst_ood import (
    ChannelStatisticKind,
    ClassifierHead,
    DegenerateDataError,
    Knn,
    LogitRecord,
    ReAct,
    StatVector,
    ValidationError,
    apply_head,
    ash_s,
    dice_build,
    dice_score,
    energy,
    fit_baseline,
    knn_build,
    knn_score,
    msp,
    parse_baseline,
    react_clip,
    scale_shape,
)
from catalyst_ood.baselines import load_dice_mask, load_knn_index, save_dice_mask, save_knn_index

MEAN = ChannelStatisticKind.MEAN


def feat(values):
    return StatVector(values=np.asarray(values, dtype=np.float64), kind=MEAN)


def head_of(weights, bias):
    return ClassifierHead(weights=np.asarray(weights, dtype=np.float32),
                          bias=np.asarray(bias, dtype=np.float32))


logit_lists = st.lists(
    st.floats(min_value=-30, max_value=30, allow_nan=False), min_size=2, max_size=12
)


class TestApplyHead:
    def test_unit_basis(self):
        head = head_of([[2, 0], [0, 3]], [0, 0])
        out = apply_head(feat([1, 0]), head)
        np.testing.assert_array_equal(out.values, [2, 0])

    def test_zero_feature_gives_bias(self):
        head = head_of([[2, 0], [0, 3]], [0.5, -0.25])
        out = apply_head(feat([0, 0]), head)
        np.testing.assert_allclose(out.values, [0.5, -0.25], rtol=0, atol=1e-7)

    def test_against_triple_loop_oracle(self, rng):
        weights = rng.normal(size=(8, 4))
        bias = rng.normal(size=4)
        feature = rng.random(8)
        head = head_of(weights, bias)
        got = apply_head(feat(feature), head)
        want = oracles.matmul_oracle(
            list(feature),
            head.weights.astype(np.float64).tolist(),
            head.bias.astype(np.float64).tolist(),
        )
        np.testing.assert_allclose(got.values, want, rtol=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            apply_head(feat([1, 2, 3]), head_of([[1, 0], [0, 1]], [0, 0]))


class TestMsp:
    def test_uniform(self):
        assert msp(LogitRecord(np.zeros(4, dtype=np.float32))) == pytest.approx(0.25, rel=1e-12)

    def test_frozen_two_class(self):
        # softmax([10, 0]) peak = 1 / (1 + e^-10)
        assert msp(np.array([10.0, 0.0])) == pytest.approx(0.9999546021312976, rel=1e-9)

    @given(logit_lists, st.floats(min_value=-50, max_value=50, allow_nan=False))
    def test_shift_invariance(self, logits, shift):
        a = msp(np.array(logits))
        b = msp(np.array(logits) + shift)
        assert a == pytest.approx(b, rel=1e-9)

    @given(logit_lists)
    def test_range_and_oracle(self, logits):
        got = msp(np.array(logits))
        assert 0.0 < got <= 1.0
        assert got == pytest.approx(oracles.softmax_max_oracle(logits), rel=1e-9)


class TestEnergy:
    def test_symmetric_two_class(self):
        assert energy(np.array([0.0, 0.0])) == pytest.approx(math.log(2), rel=1e-12)

    def test_single_logit_identity(self):
        assert energy(np.array([3.75])) == pytest.approx(3.75, rel=1e-12)

    def test_frozen_three_class(self):
        got = energy(np.array([1.0, 2.0, 3.0]))
        assert got == pytest.approx(3.4076059644443806, rel=1e-9)
        assert got == pytest.approx(oracles.logsumexp_oracle([1.0, 2.0, 3.0]), rel=1e-12)

    @given(logit_lists)
    def test_dominance_bounds(self, logits):
        z = np.array(logits)
        e = energy(z)
        assert z.max() <= e + 1e-12
        assert e <= z.max() + math.log(len(logits)) + 1e-12


class TestReact:
    def test_elementwise_clip(self):
        out = react_clip(feat([0.5, 3.0]), 1.0)
        np.testing.assert_array_equal(out.values, [0.5, 1.0])

    def test_inactive_clip_is_identity(self):
        v = [0.1, 0.9, 0.4]
        out = react_clip(feat(v), 2.0)
        np.testing.assert_array_equal(out.values, v)

    def test_default_percentile_from_id_pool(self, rng):
        # Clip level resolves to the 90th percentile of the pooled ID features.
        features = rng.random((40, 6))
        fitted = fit_baseline(ReAct(), features, head_of(rng.normal(size=(6, 3)), np.zeros(3)))
        assert fitted.react_c == pytest.approx(oracles.percentile_oracle(list(features.ravel()), 90.0), rel=1e-12)

    def test_nonpositive_clip_rejected(self):
        with pytest.raises(ValidationError):
            react_clip(feat([1.0]), 0.0)


class TestDice:
    def test_hand_case(self):
        # weights [[1], [2]] with mean feature [3, 1]: contributions [3, 2];
        # 50% sparsity keeps one channel per class, the higher contribution.
        head = head_of([[1.0], [2.0]], [0.0])
        mask = dice_build(head, [feat([3.0, 1.0])], 50.0)
        np.testing.assert_array_equal(mask.mask, [[True], [False]])

    def test_zero_sparsity_keeps_all(self, rng):
        head = head_of(rng.normal(size=(6, 3)), np.zeros(3))
        mask = dice_build(head, [feat(rng.random(6))], 0.0)
        assert mask.mask.all()

    def test_column_cardinality(self, rng):
        for sparsity in (10.0, 33.3, 50.0, 70.0, 90.0):
            n = 12
            head = head_of(rng.normal(size=(n, 5)), np.zeros(5))
            mask = dice_build(head, [feat(rng.random(n))], sparsity)
            expected = int(math.floor((1 - sparsity / 100.0) * n + 0.5))
            assert (mask.mask.sum(axis=0) == expected).all()

    def test_ties_break_to_lower_index(self):
        head = head_of([[1.0], [1.0], [1.0]], [0.0])
        mask = dice_build(head, [feat([2.0, 2.0, 2.0])], 50.0)
        # keep = round(0.5 * 3) = 2, all contributions tie -> indices 0 and 1.
        np.testing.assert_array_equal(mask.mask[:, 0], [True, True, False])

    def test_mask_oracle_agreement(self, rng):
        weights = rng.normal(size=(10, 4))
        feats = [feat(rng.random(10)) for _ in range(7)]
        head = head_of(weights, np.zeros(4))
        mask = dice_build(head, feats, 70.0)
        mean_feature = np.stack([f.values for f in feats]).mean(axis=0)
        want = oracles.dice_mask_oracle(
            head.weights.astype(np.float64).tolist(), list(mean_feature), 70.0
        )
        np.testing.assert_array_equal(mask.mask, want)

    def test_all_true_mask_reduces_to_energy(self, rng):
        head = head_of(rng.normal(size=(6, 3)), rng.normal(size=3))
        h = feat(rng.random(6))
        mask = dice_build(head, [h], 0.0)
        assert dice_score(h, head, mask) == pytest.approx(energy(apply_head(h, head)), rel=1e-12)

    def test_all_false_mask_scores_bias(self, rng):
        head = head_of(rng.normal(size=(4, 3)), rng.normal(size=3))
        h = feat(rng.random(4))
        mask = dice_build(head, [h], 99.9)  # keep = round(0.001*4) = 0
        assert mask.mask.sum() == 0
        assert dice_score(h, head, mask) == pytest.approx(energy(head.bias.astype(np.float64)), rel=1e-9)

    def test_masked_matmul_oracle(self, rng):
        weights = rng.normal(size=(5, 3))
        bias = rng.normal(size=3)
        head = head_of(weights, bias)
        h = feat(rng.random(5))
        mask = dice_build(head, [h], 40.0)
        masked = head.weights.astype(np.float64) * mask.mask
        want = oracles.logsumexp_oracle(
            oracles.matmul_oracle(list(h.values), masked.tolist(), head.bias.astype(np.float64).tolist())
        )
        assert dice_score(h, head, mask) == pytest.approx(want, rel=1e-9)


class TestAshScale:
    def test_ash_worked_example(self):
        out = ash_s(feat([4, 3, 2, 1]), 50.0)
        factor = math.exp(10.0 / 7.0)
        np.testing.assert_allclose(out.values, [4 * factor, 3 * factor, 0.0, 0.0], rtol=1e-12)

    def test_scale_worked_example(self):
        out = scale_shape(feat([4, 3, 2, 1]), 50.0)
        factor = math.exp(10.0 / 7.0)
        np.testing.assert_allclose(out.values, np.array([4, 3, 2, 1]) * factor, rtol=1e-12)

    def test_inactive_threshold_pure_e_scaling(self):
        # Constant features make every percentile threshold inactive.
        v = [2.0, 2.0, 2.0, 2.0]
        np.testing.assert_allclose(ash_s(feat(v), 50.0).values, np.array(v) * math.e, rtol=1e-12)
        np.testing.assert_allclose(scale_shape(feat(v), 50.0).values, np.array(v) * math.e, rtol=1e-12)

    def test_ash_zeroes_exactly_below_threshold(self, rng):
        values = rng.random(16)
        out = ash_s(feat(values), 62.0)
        t = oracles.percentile_oracle(list(values), 62.0)
        np.testing.assert_array_equal(out.values == 0.0, values < t)

    def test_scale_zeroes_none_and_is_scalar_multiple(self, rng):
        values = rng.random(16) + 0.01
        out = scale_shape(feat(values), 85.0)
        ratios = out.values / values
        assert (out.values > 0).all()
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-12)

    def test_step_oracles(self, rng):
        for _ in range(20):
            values = rng.gamma(1.5, 1.0, size=12)
            p = float(rng.uniform(5, 95))
            np.testing.assert_allclose(
                ash_s(feat(values), p).values, oracles.ash_oracle(list(values), p), rtol=1e-9
            )
            np.testing.assert_allclose(
                scale_shape(feat(values), p).values, oracles.scale_oracle(list(values), p), rtol=1e-9
            )

    def test_all_zero_feature_rejected(self):
        with pytest.raises(DegenerateDataError):
            ash_s(feat([0.0, 0.0, 0.0]), 50.0)
        with pytest.raises(DegenerateDataError):
            scale_shape(feat([0.0, 0.0]), 50.0)

    def test_negative_feature_rejected(self):
        with pytest.raises(ValidationError):
            ash_s(feat([1.0, -0.5]), 50.0)


class TestKnn:
    def test_self_distance_zero(self):
        index = knn_build([feat([0, 0]), feat([1, 0])], k=1)
        assert knn_score(feat([0, 0]), index) == 0.0

    def test_mean_of_two(self):
        index = knn_build([feat([0, 0]), feat([1, 0])], k=2)
        assert knn_score(feat([0, 0]), index) == 0.5

    def test_k_larger_than_train_rejected(self):
        with pytest.raises(ValidationError):
            knn_build([feat([0, 0]), feat([1, 1])], k=3)

    def test_full_sort_oracle(self, rng):
        stored = [feat(rng.normal(size=6)) for _ in range(50)]
        index = knn_build(stored, k=5)
        for _ in range(10):
            q = rng.normal(size=6)
            want = oracles.knn_oracle(list(q), [list(s.values) for s in stored], 5)
            assert knn_score(feat(q), index) == pytest.approx(want, rel=1e-9)

    @given(st.floats(min_value=-100, max_value=100, allow_nan=False))
    @settings(max_examples=40)
    def test_translation_invariance(self, shift):
        rng = np.random.default_rng(7)
        stored = rng.normal(size=(20, 4))
        q = rng.normal(size=4)
        index_a = knn_build(stored, k=3)
        index_b = knn_build(stored + shift, k=3)
        a = knn_score(feat(q), index_a)
        b = knn_score(feat(q + shift), index_b)
        assert a == pytest.approx(b, rel=1e-6, abs=1e-9)

    def test_polarity_flag(self):
        assert Knn(k=1).higher_is_id is False
        assert parse_baseline("energy").higher_is_id is True


class TestFittedBatchAgainstOps:
    def test_batch_scores_match_functional_composition(self, rng):
        # The vectorized scorer must agree with composing the public ops
        # sample by sample, for every head-based baseline.
        n, c, n_samples = 10, 4, 25
        head = head_of(rng.normal(size=(n, c)), rng.normal(size=c))
        features = rng.gamma(2.0, 0.5, size=(n_samples, n))

        from catalyst_ood import Ash, Dice, ReAct, ReActDice, Scale, fit_baseline

        cases = {
            ReAct(clip_c=0.9): lambda h: energy(apply_head(react_clip(feat(h), 0.9), head)),
            Ash(prune_p=60.0): lambda h: energy(apply_head(ash_s(feat(h), 60.0), head)),
            Scale(prune_p=85.0): lambda h: energy(apply_head(scale_shape(feat(h), 85.0), head)),
        }
        for kind, compose in cases.items():
            fitted = fit_baseline(kind, features, head)
            batch = fitted.score_batch(features, None)
            singles = [compose(h) for h in features]
            np.testing.assert_allclose(batch, singles, rtol=1e-12, err_msg=kind.label)

        dice = fit_baseline(Dice(sparsity_p=70.0), features, head)
        batch = dice.score_batch(features, None)
        singles = [dice_score(feat(h), head, dice.dice_mask) for h in features]
        np.testing.assert_allclose(batch, singles, rtol=1e-12)

        combo = fit_baseline(ReActDice(clip_c=0.9, sparsity_p=70.0), features, head)
        batch = combo.score_batch(features, None)
        singles = [
            dice_score(react_clip(feat(h), 0.9), head, combo.dice_mask) for h in features
        ]
        np.testing.assert_allclose(batch, singles, rtol=1e-12)

        index = knn_build(features, k=5)
        from catalyst_ood import Knn

        knn_fitted = fit_baseline(Knn(k=5), features, head)
        batch = knn_fitted.score_batch(features, None)
        singles = [knn_score(feat(h), index) for h in features]
        np.testing.assert_allclose(batch, singles, rtol=1e-12)


class TestSerialization:
    def test_dice_mask_round_trip(self, tmp_path, rng):
        head = head_of(rng.normal(size=(9, 4)), np.zeros(4))
        mask = dice_build(head, [feat(rng.random(9))], 70.0)
        path = save_dice_mask(mask, tmp_path / "mask.catm")
        again = load_dice_mask(path)
        np.testing.assert_array_equal(again.mask, mask.mask)
        assert again.sparsity_p == pytest.approx(mask.sparsity_p)

    def test_knn_index_round_trip(self, tmp_path, rng):
        index = knn_build(rng.normal(size=(12, 5)).astype(np.float32).astype(np.float64), k=4)
        path = save_knn_index(index, tmp_path / "index.catk")
        again = load_knn_index(path)
        assert again.k == 4
        np.testing.assert_array_equal(again.features, index.features)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.catm"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        from catalyst_ood import FormatError

        with pytest.raises(FormatError, match="bad magic"):
            load_dice_mask(path)
