from fractions import Fraction as F

import math
import pytest
from hypothesis import given, strategies as st

from oscilab.errors import DomainError, UnboundedError
from oscilab.exponents import (
    Monomial, ScaleBound, interpolation_threshold, kakeya_improved_threshold,
    kakeya_threshold_from_gain, loglog_fit, named_thresholds, pair_threshold,
    threshold_case_formula, threshold_p, worst_case, worst_case_min_exponent,
)


def brute_threshold(n):
    # independent route: float enumeration over k, then snap to the rational
    vals = [2 * min(k / (k - 1), (2 * n - k + 1) / (2 * n - k - 1)) for k in range(2, n + 1)]
    return max(vals)


class TestThresholds:
    def test_low_dimensions(self):
        assert threshold_p(3) == F(10, 3)
        assert threshold_p(4) == F(3)
        assert threshold_p(5) == F(8, 3)

    def test_matches_case_table(self):
        for n in range(3, 61):
            assert threshold_p(n) == threshold_case_formula(n)

    def test_float_enumeration_agrees(self):
        for n in range(3, 40):
            assert math.isclose(float(threshold_p(n)), brute_threshold(n), rel_tol=1e-14)

    def test_monotone_and_above_two(self):
        vals = [threshold_p(n) for n in range(3, 201)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert all(v > 2 for v in vals)

    def test_small_n_rejected(self):
        with pytest.raises(DomainError):
            threshold_p(2)

    def test_named(self):
        named = named_thresholds(3)
        assert named["trilinear"] == F(10, 3)
        assert named["polynomial_partitioning"] == F(10, 3)
        assert named_thresholds(4)["polynomial_partitioning"] == 3


class TestInterpolation:
    def test_wolff_crossing(self):
        assert interpolation_threshold((3, F(-1, 6)), (F(10, 3), F(1, 60))) == F(33, 10)

    def test_simple_crossing(self):
        assert interpolation_threshold((3, -1), (4, 1)) == F(24, 7)

    def test_zero_endpoint(self):
        assert interpolation_threshold((3, 0), (4, 1)) == 3

    def test_no_crossing(self):
        with pytest.raises(DomainError):
            interpolation_threshold((3, 1), (4, 1))

    def test_floats_refused(self):
        with pytest.raises(TypeError):
            interpolation_threshold((3, -0.5), (4, 1))

    @given(st.fractions(min_value=2, max_value=10), st.fractions(min_value=2, max_value=10),
           st.fractions(min_value=F(1, 100), max_value=5), st.fractions(min_value=F(1, 100), max_value=5),
           st.fractions(min_value=F(1, 10), max_value=10))
    def test_symmetric_and_scale_free(self, q1, q2, a, b, t):
        if q1 == q2:
            return
        b1, b2 = (q1, -a), (q2, b)
        q = interpolation_threshold(b1, b2)
        assert q == interpolation_threshold(b2, b1)
        assert q == interpolation_threshold((q1, -a * t), (q2, b * t))
        # the affine interpolant really vanishes at q
        s = 1 / q
        e = -a + (s - 1 / q1) * (b + a) / (1 / q2 - 1 / q1)
        assert e == 0


class TestWorstCase:
    def test_two_term_minimum(self):
        wc = worst_case((F(1, 10), F(-1, 5), 0), (F(-1, 2), 1, F(1, 10)))
        assert wc.exponent == F(1, 60)
        assert wc.lam_power == 0 and wc.mu_power == F(-1, 12)

    def test_identical_terms(self):
        t = Monomial(F(1, 10), F(-1, 5), F(3, 7))
        assert worst_case_min_exponent(t, t) == F(3, 7)

    def test_mu_free_second_term(self):
        # equalization happens along mu = 1 with lambda interior
        wc = worst_case((F(1, 10), F(-1, 5), 0), (F(-1, 2), 0, F(1, 10)))
        assert wc.exponent == F(1, 60) and wc.mu_power == 0 and wc.lam_power == F(1, 6)

    def test_unbounded(self):
        with pytest.raises(UnboundedError):
            worst_case_min_exponent((F(-1, 2), 1, 0))

    @given(st.lists(st.tuples(st.fractions(-2, 2, max_denominator=12), st.fractions(-2, 2, max_denominator=12),
                              st.fractions(-2, 2, max_denominator=12)), min_size=1, max_size=4))
    def test_agrees_with_grid_search(self, terms):
        # independent oracle: brute force over a log-grid in (u, w)
        rows = [(-c, -a, b) for a, b, c in terms]
        try:
            e = worst_case_min_exponent(*terms)
        except UnboundedError:
            far = max(min(c + a * u + b * w for c, a, b in rows)
                      for u, w in [(1e6, 0), (0, 1e6), (1e6, 1e6), (1e6, 3e6), (3e6, 1e6)]
                      + [(1e6 * i, 1e6 * j) for i in range(0, 9) for j in range(0, 9)])
            assert far > 10
            return
        grid = [F(i, 24) for i in range(0, 24 * 6)]
        best = max(min(c + a * u + b * w for c, a, b in rows) for u in grid[::3] for w in grid[::3])
        assert best <= -e
        # the LP value is attained at a point we can evaluate
        wc = worst_case(*terms)
        u, w = wc.lam_power, -wc.mu_power
        assert min(c + a * u + b * w for c, a, b in rows) == -e


class TestKakeyaThresholds:
    def test_optimal(self):
        assert kakeya_improved_threshold() == F(36, 11)

    def test_wolff(self):
        assert kakeya_improved_threshold("wolff") == F(33, 10)

    def test_trivial(self):
        assert kakeya_improved_threshold("trivial") == F(10, 3)

    def test_gain_family_consistent(self):
        assert kakeya_threshold_from_gain(0) == F(36, 11)
        assert kakeya_threshold_from_gain(F(1, 5)) == F(33, 10)
        assert kakeya_threshold_from_gain(F(4, 5)) == F(10, 3)

    def test_pair_threshold_reduces_to_scalar_interpolation(self):
        low = ScaleBound(3, (Monomial(delta=F(-1, 6)),))
        high = ScaleBound(F(10, 3), (Monomial(F(1, 10), F(-1, 5)), Monomial(F(-1, 2), 1, F(1, 10))))
        assert pair_threshold(low, high) == interpolation_threshold((3, F(-1, 6)), (F(10, 3), F(1, 60)))

    def test_unknown_input(self):
        with pytest.raises(DomainError):
            kakeya_improved_threshold("bogus")


class TestLogLogFit:
    def test_power_law(self):
        fit = loglog_fit([(x, x**-0.5) for x in (2, 4, 8, 16)])
        assert fit.slope == pytest.approx(-0.5, abs=1e-12)
        assert fit.residual_rms < 1e-12 and fit.n == 4

    def test_two_points(self):
        fit = loglog_fit([(1, 3), (10, 30)])
        assert fit.slope == pytest.approx(1.0) and fit.residual_rms < 1e-14

    def test_outlier(self):
        data = [(x, x**2.0) for x in (1, 2, 4, 8, 16)]
        data[2] = (4, 160.0)
        assert loglog_fit(data).residual_rms > 0.1

    def test_constant(self):
        assert loglog_fit([(x, 7.0) for x in (1, 2, 4)]).slope == pytest.approx(0, abs=1e-12)

    @pytest.mark.parametrize("bad", [[(1, 1)], [(0, 1), (1, 1)], [(1, -1), (2, 1)], [(2, 1), (2, 3)]])
    def test_rejects(self, bad):
        with pytest.raises(DomainError):
            loglog_fit(bad)
