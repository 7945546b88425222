"""Simplex weight vectors and the exponentiated-gradient update."""

import numpy as np
import pytest

from grapemix import (
    ASCEND,
    DESCEND,
    DegenerateWeights,
    DimensionError,
    DivergenceUndefined,
    ScoreError,
    SimplexWeights,
    UpdateParams,
    bregman_entropy_divergence,
    multiplicative_update,
    normalize,
)
from grapemix.verify import closed_form_update


class TestNormalize:
    def test_symmetric_pair(self):
        w = normalize([2.0, 2.0])
        np.testing.assert_allclose(w.values, [0.5, 0.5])

    def test_one_hot_passthrough(self):
        w = normalize([1.0, 0.0, 0.0])
        np.testing.assert_array_equal(w.values, [1.0, 0.0, 0.0])

    def test_proportions_preserved(self):
        # 0.18394 / (0.18394 + 1.35914) computed with extended precision
        w = normalize([0.18394, 1.35914])
        np.testing.assert_allclose(w.values, [0.11920315213728387, 0.8807968478627162], rtol=1e-12)
        assert w.values.sum() == pytest.approx(1.0, abs=1e-12)

    def test_all_zero_rejected(self):
        with pytest.raises(DegenerateWeights):
            normalize([0.0, 0.0])

    def test_nan_rejected(self):
        with pytest.raises(DegenerateWeights):
            normalize([np.nan, 1.0])

    def test_negative_rejected(self):
        with pytest.raises(DegenerateWeights):
            normalize([-0.1, 1.1])


class TestMultiplicativeUpdate:
    def test_uniform_scores_cancel(self):
        w = SimplexWeights(np.array([0.5, 0.5]))
        for c in (0.0, 3.7, -123.0):
            for direction in (ASCEND, DESCEND):
                out = multiplicative_update(w, [c, c], UpdateParams(2.0, direction))
                np.testing.assert_allclose(out.values, [0.5, 0.5], atol=1e-15)

    def test_descend_two_entries(self):
        # 0.5 e^{-1} / (0.5 e^{-1} + 0.5 e^{1}) = 1 / (1 + e^2)
        w = SimplexWeights(np.array([0.5, 0.5]))
        out = multiplicative_update(w, [0.1, -0.1], UpdateParams(10.0, DESCEND))
        np.testing.assert_allclose(
            out.values, [0.11920292202211755, 0.8807970779778824], rtol=1e-12
        )

    def test_ascend_four_entries(self):
        # e^{.3}, 1, e^{-.3}, 1 over their sum
        w = SimplexWeights.uniform(4)
        out = multiplicative_update(w, [0.2, 0.0, -0.2, 0.0], UpdateParams(1.5, ASCEND))
        np.testing.assert_allclose(
            out.values,
            [0.32998420512091314, 0.24445831169074586, 0.18109917149759513, 0.24445831169074586],
            rtol=1e-12,
        )

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            m = int(rng.integers(2, 7))
            w = normalize(rng.random(m) + 1e-3)
            scores = rng.uniform(-4, 4, size=m)
            shift = rng.uniform(-50, 50)
            params = UpdateParams(rng.uniform(0.1, 15.0), ASCEND if rng.random() < 0.5 else DESCEND)
            a = multiplicative_update(w, scores, params)
            b = multiplicative_update(w, scores + shift, params)
            np.testing.assert_allclose(a.values, b.values, atol=1e-12)

    def test_sum_preserved_over_many_updates(self):
        rng = np.random.default_rng(11)
        w = SimplexWeights.uniform(5)
        for _ in range(500):
            scores = rng.uniform(-3, 3, size=5)
            params = UpdateParams(rng.uniform(0.0, 10.0), ASCEND if rng.random() < 0.5 else DESCEND)
            w = multiplicative_update(w, scores, params)
            assert abs(w.values.sum() - 1.0) <= 1e-9
            assert np.all(w.values >= 0.0)

    def test_zero_ratio_is_identity(self):
        w = normalize([0.3, 0.2, 0.5])
        out = multiplicative_update(w, [5.0, -2.0, 1.0], UpdateParams(0.0, DESCEND))
        np.testing.assert_array_equal(out.values, normalize(w.values).values)

    def test_no_overflow_for_huge_exponents(self):
        w = SimplexWeights(np.array([0.5, 0.5]))
        out = multiplicative_update(w, [1000.0, -1000.0], UpdateParams(20.0, ASCEND))
        assert np.all(np.isfinite(out.values))
        np.testing.assert_allclose(out.values, [1.0, 0.0], atol=1e-300)

    def test_dead_entry_stays_dead(self):
        w = SimplexWeights(np.array([0.0, 0.4, 0.6]))
        out = multiplicative_update(w, [100.0, 0.0, 0.0], UpdateParams(5.0, ASCEND))
        assert out.values[0] == 0.0

    def test_floor_revives_and_renormalizes(self):
        w = SimplexWeights(np.array([0.5, 0.5]))
        out = multiplicative_update(w, [10.0, -10.0], UpdateParams(5.0, DESCEND), floor=0.01)
        assert out.values.min() >= 0.009  # floor then renormalize
        assert abs(out.values.sum() - 1.0) <= 1e-12

    def test_nonfinite_scores_rejected(self):
        w = SimplexWeights.uniform(2)
        with pytest.raises(ScoreError):
            multiplicative_update(w, [np.inf, 0.0], UpdateParams(1.0, ASCEND))

    def test_length_mismatch_rejected(self):
        w = SimplexWeights.uniform(2)
        with pytest.raises(DimensionError):
            multiplicative_update(w, [1.0, 2.0, 3.0], UpdateParams(1.0, ASCEND))

    def test_matches_extended_precision_closed_form(self):
        rng = np.random.default_rng(99)
        worst = 0.0
        for _ in range(200):
            m = int(rng.integers(2, 9))
            w = normalize(rng.random(m))
            scores = rng.uniform(-5, 5, size=m)
            ratio = rng.uniform(1e-3, 20.0)
            direction = ASCEND if rng.random() < 0.5 else DESCEND
            ours = multiplicative_update(w, scores, UpdateParams(ratio, direction))
            oracle = closed_form_update(w.values, scores, ratio, direction)
            rel = max(abs((float(o) - g) / float(o)) for g, o in zip(ours.values, oracle))
            worst = max(worst, rel)
        assert worst <= 1e-12


class TestBregmanDivergence:
    def test_identical_is_zero(self):
        w = SimplexWeights(np.array([0.5, 0.5]))
        assert bregman_entropy_divergence(w, w) == 0.0

    def test_onehot_vs_uniform_is_log2(self):
        p = SimplexWeights(np.array([1.0, 0.0]))
        q = SimplexWeights(np.array([0.5, 0.5]))
        assert bregman_entropy_divergence(p, q) == pytest.approx(np.log(2.0), rel=1e-12)

    def test_support_violation(self):
        p = SimplexWeights(np.array([0.5, 0.5]))
        q = SimplexWeights(np.array([1.0, 0.0]))
        with pytest.raises(DivergenceUndefined):
            bregman_entropy_divergence(p, q)

    def test_nonnegative_and_zero_iff_equal(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            p = normalize(rng.random(4) + 1e-6)
            q = normalize(rng.random(4) + 1e-6)
            d = bregman_entropy_divergence(p, q)
            assert d >= -1e-15
        assert bregman_entropy_divergence(p, p) == 0.0


class TestWeightPlumbing:
    def test_construction_validates(self):
        with pytest.raises(DegenerateWeights):
            SimplexWeights(np.array([0.7, 0.7]))
        with pytest.raises(DegenerateWeights):
            SimplexWeights(np.array([-0.1, 1.1]))

    def test_labels_roundtrip(self, tmp_path):
        w = SimplexWeights(np.array([0.25, 0.75]), ("books", "web"))
        path = tmp_path / "weights.json"
        w.save(path)
        back = SimplexWeights.load(path)
        assert back.labels == ("books", "web")
        np.testing.assert_array_equal(back.values, w.values)
        assert back["web"] == 0.75

    def test_update_params_validation(self):
        with pytest.raises(ValueError):
            UpdateParams(-1.0, ASCEND)
        with pytest.raises(ValueError):
            UpdateParams(1.0, "sideways")
        UpdateParams(0.0, DESCEND)  # zero allowed: degenerates to the identity

    def test_values_immutable(self):
        w = SimplexWeights.uniform(3)
        with pytest.raises(ValueError):
            w.values[0] = 0.9
