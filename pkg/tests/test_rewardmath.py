import math

import numpy as np
import pytest

from darlr import rewardmath as rm
from darlr.nncore import rng_stream


class TestCosine:
    def test_identical_unit(self):
        assert rm.cosine([1.0, 0.0], [1.0, 0.0]) == 1.0

    def test_orthogonal(self):
        assert rm.cosine([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_closed_form(self):
        assert abs(rm.cosine([1.0, 1.0], [1.0, 0.0]) - 1.0 / math.sqrt(2)) < 1e-12

    def test_zero_norm_raises(self):
        with pytest.raises(ValueError, match="zero-norm"):
            rm.cosine([0.0, 0.0], [1.0, 0.0])

    def test_bounded(self):
        rng = rng_stream(0, "cos")
        for _ in range(200):
            a, b = rng.normal(size=(2, 5))
            assert -1.0 <= rm.cosine(a, b) <= 1.0


class TestSimilarityGain:
    def test_identical_rows(self):
        row = np.array([0.2, 0.5, 0.3])
        assert rm.similarity_gain(row, row) == pytest.approx(1.0, abs=1e-12)

    def test_anti_proportional(self):
        row = np.array([0.2, 0.5, 0.3])
        assert rm.similarity_gain(row, -2.0 * row) == pytest.approx(-1.0, abs=1e-12)

    def test_independent_scalar_oracle(self):
        a = [0.2, 0.8, 0.1]
        b = [0.1, 0.9, 0.0]
        num = math.fsum(x * y for x, y in zip(a, b))
        den = math.sqrt(math.fsum(x * x for x in a)) * math.sqrt(math.fsum(y * y for y in b))
        assert rm.similarity_gain(a, b) == pytest.approx(num / den, abs=1e-9)

    def test_symmetric_and_scale_invariant(self):
        rng = rng_stream(1, "sim")
        for _ in range(100):
            a, b = rng.normal(size=(2, 6))
            c = rng.random() * 5 + 0.1
            assert rm.similarity_gain(a, b) == pytest.approx(rm.similarity_gain(b, a), abs=1e-12)
            assert rm.similarity_gain(a, c * b) == pytest.approx(rm.similarity_gain(a, b), abs=1e-9)


class TestDiversityGain:
    def test_empty_selection_is_zero(self):
        assert rm.diversity_gain(np.ones(3), []) == 0.0

    def test_self_selection_is_zero(self):
        row = np.array([0.4, 0.1, 0.5])
        assert rm.diversity_gain(row, [row]) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_selection_is_one(self):
        assert rm.diversity_gain(np.array([1.0, 0.0]), [np.array([0.0, 1.0])]) == pytest.approx(1.0)

    def test_order_invariant_and_bounded(self):
        rng = rng_stream(2, "div")
        for _ in range(50):
            cand = rng.normal(size=5)
            rows = list(rng.normal(size=(4, 5)))
            fwd = rm.diversity_gain(cand, rows)
            rev = rm.diversity_gain(cand, rows[::-1])
            assert fwd == pytest.approx(rev, abs=1e-12)
            assert 0.0 <= fwd <= 2.0


class TestIntrinsicReward:
    def test_zero_coefficients(self):
        c = rm.PenaltyCoeffs(lambda_s=0.0, lambda_d=0.0)
        assert rm.intrinsic_reward(0.37, rm.GainPair(0.9, 0.4), c) == 0.37

    def test_arithmetic(self):
        c = rm.PenaltyCoeffs(lambda_s=2.0, lambda_d=0.0)
        assert rm.intrinsic_reward(0.5, rm.GainPair(1.0, 0.0), c) == pytest.approx(2.5, abs=1e-12)

    def test_arithmetic_two_terms(self):
        c = rm.PenaltyCoeffs(lambda_s=1.0, lambda_d=0.1)
        assert rm.intrinsic_reward(0.4, rm.GainPair(0.8, 0.3), c) == pytest.approx(1.23, abs=1e-12)

    def test_linear_in_coefficients(self):
        # superposition: f(a+b) = f(a) + f(b) - f(0) for the coefficient terms
        g = rm.GainPair(0.37, 0.81)
        base = rm.intrinsic_reward(0.2, g, rm.PenaltyCoeffs(lambda_s=0.0, lambda_d=0.0))
        fa = rm.intrinsic_reward(0.2, g, rm.PenaltyCoeffs(lambda_s=1.5, lambda_d=0.0))
        fb = rm.intrinsic_reward(0.2, g, rm.PenaltyCoeffs(lambda_s=0.0, lambda_d=0.7))
        fab = rm.intrinsic_reward(0.2, g, rm.PenaltyCoeffs(lambda_s=1.5, lambda_d=0.7))
        assert fab == pytest.approx(fa + fb - base, abs=1e-12)


class TestShapeReward:
    def test_single(self):
        assert rm.shape_reward([0.5]) == 0.5

    def test_three(self):
        assert rm.shape_reward([0.2, 0.4, 0.6]) == pytest.approx(0.4, abs=1e-12)

    def test_matches_fsum_oracle(self):
        vals = rng_stream(3, "shape").random(20).tolist()
        assert rm.shape_reward(vals) == pytest.approx(math.fsum(vals) / 20, abs=1e-12)

    def test_permutation_invariant_and_bounded(self):
        vals = rng_stream(4, "shape").random(9)
        a = rm.shape_reward(vals)
        b = rm.shape_reward(vals[::-1])
        assert a == pytest.approx(b, abs=1e-12)
        assert vals.min() <= a <= vals.max()

    def test_empty_raises(self):
        with pytest.raises(ValueError, match="empty"):
            rm.shape_reward([])


class TestDynamicUncertainty:
    def test_no_change_is_zero(self):
        assert rm.dynamic_uncertainty(0.4, 0.4, 0.9, 0.1) == 0.0

    def test_arithmetic(self):
        assert rm.dynamic_uncertainty(0.8, 0.5, 0.4, 0.2) == pytest.approx(0.5, abs=1e-12)

    def test_clamped_denominator(self):
        eps = 1e-6
        val = rm.dynamic_uncertainty(0.8, 0.5, -0.3, 0.1, eps)
        assert val == pytest.approx(0.3 / eps, rel=1e-12)

    def test_nonnegative_and_zero_iff_equal(self):
        rng = rng_stream(5, "dyn")
        for _ in range(100):
            r_new, r_prev, s, dgain = rng.normal(size=4)
            v = rm.dynamic_uncertainty(r_new, r_prev, s, dgain)
            assert v >= 0.0
            assert (v == 0.0) == (r_new == r_prev)


class TestRecommenderReward:
    def test_zero_coefficients(self):
        c = rm.PenaltyCoeffs(lambda_u=0.0, lambda_e=0.0)
        assert rm.recommender_reward(0.8, 5.0, -3.0, c) == 0.8

    def test_arithmetic(self):
        c = rm.PenaltyCoeffs(lambda_u=0.1, lambda_e=0.1)
        assert rm.recommender_reward(0.8, 0.5, -0.69, c) == pytest.approx(0.681, abs=1e-12)

    def test_matches_scalar_oracle(self):
        rng = rng_stream(6, "rec")
        for _ in range(100):
            r, pu, pe, lu, le = rng.normal(size=5)
            c = rm.PenaltyCoeffs(lambda_u=abs(lu), lambda_e=abs(le))
            oracle = math.fsum([r, -abs(lu) * pu, abs(le) * pe])
            assert rm.recommender_reward(r, pu, pe, c) == pytest.approx(oracle, abs=1e-12)

    def test_linear_in_coefficients(self):
        base = rm.recommender_reward(0.3, 0.7, -0.2, rm.PenaltyCoeffs(lambda_u=0.0, lambda_e=0.0))
        fu = rm.recommender_reward(0.3, 0.7, -0.2, rm.PenaltyCoeffs(lambda_u=0.4, lambda_e=0.0))
        fe = rm.recommender_reward(0.3, 0.7, -0.2, rm.PenaltyCoeffs(lambda_u=0.0, lambda_e=0.9))
        both = rm.recommender_reward(0.3, 0.7, -0.2, rm.PenaltyCoeffs(lambda_u=0.4, lambda_e=0.9))
        assert both == pytest.approx(fu + fe - base, abs=1e-12)


def test_negative_coefficients_rejected():
    with pytest.raises(ValueError):
        rm.PenaltyCoeffs(lambda_u=-0.1)
