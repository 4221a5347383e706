import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quanta.theory import (
    Axis,
    Constant,
    LogFreq,
    LogOffset,
    QuantaDistribution,
    TheoryError,
    expected_loss_closed,
    expected_loss_exact,
    expected_loss_exact_curve,
    exact_limit,
    loss_vs_data,
    loss_vs_params,
    loss_vs_steps,
    parse_profile,
    quanta_from_data,
    quanta_from_steps,
    scaling_prediction,
    zeta,
    zipf_pmf,
)

# Brute-force series sum_{k<=1e8} k^-1.4 plus the trapezoid-corrected
# integral tail (computed once, chunked float64 sums combined with fsum).
ZETA_1_4_BRUTE = 3.1055472779775806
# 1 - sum_{k<=10} k^-1.4 / zeta(1.4), from the brute-force zeta above.
TAIL_10_ALPHA_0_4 = 0.3142204290400442


def loglog_slope(x, y):
    return np.polyfit(np.log(x), np.log(y), 1)[0]


class TestZeta:
    def test_basel(self):
        assert zeta(2.0) == pytest.approx(math.pi**2 / 6, abs=1e-12)

    def test_large_s(self):
        assert abs(zeta(60.0) - 1.0) < 1e-15

    def test_brute_force_oracle(self):
        assert zeta(1.4) == pytest.approx(ZETA_1_4_BRUTE, abs=1e-9)

    @pytest.mark.parametrize("s", [1.001, 1.05, 1.2, 1.7, 2.5, 4.0, 9.0])
    def test_against_scipy(self, s):
        from scipy.special import zeta as scipy_zeta

        assert zeta(s) == pytest.approx(float(scipy_zeta(s)), abs=1e-9)

    @pytest.mark.parametrize("s", [1.0, 0.5, -2.0])
    def test_divergent(self, s):
        with pytest.raises(TheoryError):
            zeta(s)


class TestZipf:
    def test_single_atom(self):
        assert zipf_pmf(1, QuantaDistribution(0.7, 1)) == 1.0

    def test_two_terms(self):
        assert zipf_pmf(2, QuantaDistribution(1.0, 2)) == pytest.approx(0.2, abs=1e-15)

    def test_infinite_first(self):
        assert zipf_pmf(1, QuantaDistribution(0.4)) == pytest.approx(1 / ZETA_1_4_BRUTE, rel=1e-10)

    def test_outside_support(self):
        with pytest.raises(TheoryError):
            zipf_pmf(4, QuantaDistribution(0.4, 3))
        with pytest.raises(TheoryError):
            zipf_pmf(0, QuantaDistribution(0.4))

    @pytest.mark.parametrize("alpha,K", [(0.4, 500), (0.2, 37), (1.5, 1)])
    def test_finite_sums_to_one(self, alpha, K):
        d = QuantaDistribution(alpha, K)
        total = math.fsum(zipf_pmf(k, d) for k in range(1, K + 1))
        assert total == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(d.pmf().sum(), 1.0, atol=1e-12)

    def test_infinite_mass(self):
        d = QuantaDistribution(0.4)
        assert expected_loss_exact(0, d, Constant(0, 1)) == pytest.approx(1.0, abs=1e-9)

    def test_invalid(self):
        with pytest.raises(TheoryError):
            QuantaDistribution(0.0)
        with pytest.raises(TheoryError):
            QuantaDistribution(0.4, 0)


class TestExpectedLoss:
    def test_nothing_learned(self):
        for alpha in (0.2, 0.4, 1.0):
            assert expected_loss_exact(0, QuantaDistribution(alpha), Constant(0, 1)) == pytest.approx(1.0, abs=1e-8)

    def test_everything_learned(self):
        d = QuantaDistribution(1.0)
        assert expected_loss_exact(10**7, d, Constant(0.3, 1.0)) == pytest.approx(0.3, abs=1e-6)

    def test_tail_oracle(self):
        d = QuantaDistribution(0.4)
        assert expected_loss_exact(10, d, Constant(0, 1)) == pytest.approx(TAIL_10_ALPHA_0_4, abs=1e-8)

    def test_finite_support_exact(self):
        d = QuantaDistribution(0.4, 5)
        p = [k**-1.4 for k in range(1, 6)]
        z = sum(p)
        assert expected_loss_exact(2, d, Constant(0.1, 2.0)) == pytest.approx(
            (0.1 * (p[0] + p[1]) + 2.0 * sum(p[2:])) / z, abs=1e-14
        )
        assert expected_loss_exact(5, d, Constant(0.1, 2.0)) == pytest.approx(0.1, abs=1e-14)

    def test_curve_matches_pointwise(self):
        d = QuantaDistribution(0.4)
        ns = [0, 1, 7, 100, 2500]
        for profile in (Constant(0.2, 1.5), LogFreq(), LogOffset(3.0)):
            curve = expected_loss_exact_curve(ns, d, profile)
            point = [expected_loss_exact(n, d, profile) for n in ns]
            np.testing.assert_allclose(curve, point, atol=1e-10)

    @pytest.mark.parametrize("profile", [Constant(0, 1), Constant(0.5, 0.9), LogFreq(), LogOffset(2.0)])
    def test_monotone(self, profile):
        d = QuantaDistribution(0.4)
        curve = expected_loss_exact_curve(np.arange(0, 2000), d, profile)
        assert np.all(np.diff(curve) <= 1e-15)

    @pytest.mark.parametrize("alpha", [0.2, 0.4, 1.0])
    def test_constant_slope(self, alpha):
        ns = np.unique(np.logspace(2, 4, 30).astype(int))
        y = expected_loss_exact_curve(ns, QuantaDistribution(alpha), Constant(0, 1))
        assert loglog_slope(ns, y) == pytest.approx(-alpha, abs=0.02)

    @pytest.mark.parametrize("alpha", [0.2, 0.4])
    def test_logfreq_slope(self, alpha):
        ns = np.unique(np.logspace(2, 4, 30).astype(int))
        y = expected_loss_exact_curve(ns, QuantaDistribution(alpha), LogFreq())
        assert loglog_slope(ns, y) == pytest.approx(-alpha, abs=0.1)

    def test_logfreq_slope_log_correction(self):
        # At alpha=1 the n^-alpha log n term flattens the slope to about -0.875
        # over [1e2, 1e4]; the exact series must track the closed form there.
        d = QuantaDistribution(1.0)
        ns = np.unique(np.logspace(2, 4, 30).astype(int))
        exact = loglog_slope(ns, expected_loss_exact_curve(ns, d, LogFreq()))
        closed = loglog_slope(ns, [expected_loss_closed(n, d, LogFreq()) for n in ns])
        assert exact == pytest.approx(closed, abs=0.01)
        assert -1.0 < exact < -0.8


class TestClosedForm:
    @given(
        alpha=st.floats(0.1, 2.0),
        a=st.floats(0.0, 1.0),
        extra=st.floats(0.01, 2.0),
        n=st.integers(1, 10**4),
    )
    @settings(max_examples=60, deadline=None)
    def test_constant_ratio(self, alpha, a, extra, n):
        d = QuantaDistribution(alpha)
        prof = Constant(a, a + extra)
        ratio = (expected_loss_closed(2 * n, d, prof) - a) / (expected_loss_closed(n, d, prof) - a)
        # subtracting a cancels up to ~1e-16 / (L - a) of relative precision
        assert ratio == pytest.approx(2**-alpha, rel=1e-6)

    def test_constant_vs_exact(self):
        d = QuantaDistribution(0.4)
        exact = expected_loss_exact(100, d, Constant(0, 1))
        assert expected_loss_closed(100, d, Constant(0, 1)) == pytest.approx(exact, rel=0.02)

    def test_logfreq_vs_exact(self):
        d = QuantaDistribution(0.4)
        exact = expected_loss_exact(1000, d, LogFreq())
        assert expected_loss_closed(1000, d, LogFreq()) == pytest.approx(exact, rel=0.05)

    def test_logoffset_limit(self):
        d = QuantaDistribution(0.4)
        prof = LogOffset(2.0)
        ns = np.unique(np.logspace(2, 4, 20).astype(int))
        residual = expected_loss_exact_curve(ns, d, prof) - exact_limit(d, prof)
        assert np.all(residual > 0)
        assert loglog_slope(ns, residual) == pytest.approx(-0.4, abs=0.05)

    def test_finite_support_rejected(self):
        with pytest.raises(TheoryError):
            expected_loss_closed(10, QuantaDistribution(0.4, 100), Constant())


class TestScaling:
    dist = QuantaDistribution(0.4)
    prof = Constant(0, 1)

    def test_prediction_exponents(self):
        for alpha in (0.2, 0.4, 1.0, 2.5):
            d = QuantaDistribution(alpha)
            assert abs(scaling_prediction("params", d).exponent - alpha) < 1e-12
            assert abs(scaling_prediction(Axis.DATA, d).exponent - alpha / (alpha + 1)) < 1e-12
            assert abs(scaling_prediction(Axis.STEPS, d).exponent - alpha / (alpha + 1)) < 1e-12

    def test_params_identity(self):
        pred = scaling_prediction("params", self.dist, capacity_per_quantum=1)
        for N in (1, 5, 64, 1000):
            assert loss_vs_params(N, pred, self.dist, self.prof) == expected_loss_closed(N, self.dist, self.prof)

    def test_params_below_capacity(self):
        pred = scaling_prediction("params", self.dist, capacity_per_quantum=10)
        assert loss_vs_params(9.5, pred, self.dist, self.prof) == pytest.approx(1.0, abs=1e-8)

    def test_params_doubling(self):
        pred = scaling_prediction("params", self.dist, capacity_per_quantum=3)
        l1 = loss_vs_params(300, pred, self.dist, self.prof)
        l2 = loss_vs_params(600, pred, self.dist, self.prof)
        assert l2 / l1 == pytest.approx(2**-0.4, rel=1e-12)

    def test_params_vs_exact(self):
        pred = scaling_prediction("params", self.dist)
        assert loss_vs_params(500, pred, self.dist, self.prof) == pytest.approx(
            expected_loss_exact(500, self.dist, self.prof), rel=0.02
        )

    def test_data_threshold_oracle(self):
        pred = scaling_prediction("data", self.dist, data_threshold=1.0)
        D = 1e4
        # brute force: largest n with D p_n >= tau
        n = 0
        while D * zipf_pmf(n + 1, self.dist) >= 1.0:
            n += 1
        assert quanta_from_data(D, pred, self.dist) == n
        assert loss_vs_data(D, pred, self.dist, self.prof) == expected_loss_closed(n, self.dist, self.prof)

    def test_data_nothing_learned(self):
        pred = scaling_prediction("data", self.dist, data_threshold=10.0)
        assert loss_vs_data(5.0, pred, self.dist, self.prof) == pytest.approx(1.0, abs=1e-8)

    def test_data_doubling(self):
        pred = scaling_prediction("data", self.dist)
        D = 5e5
        n1 = quanta_from_data(D, pred, self.dist)
        n2 = quanta_from_data(D * 2**1.4, pred, self.dist)
        assert abs(n2 - 2 * n1) <= 2

    def test_steps(self):
        pred = scaling_prediction("steps", self.dist, first_quantum_steps=100.0)
        assert loss_vs_steps(99, pred, self.dist, self.prof) == pytest.approx(1.0, abs=1e-8)
        for m in (1, 2, 7, 40):
            assert quanta_from_steps(100.0 * m**1.4, pred, self.dist) == m
        # independent evaluation of the chain at S = 1e5
        n = math.floor((1e5 / 100.0) ** (1 / 1.4))
        expected = 1.0 / (0.4 * ZETA_1_4_BRUTE) * n**-0.4
        assert loss_vs_steps(1e5, pred, self.dist, self.prof) == pytest.approx(expected, rel=1e-9)

    @pytest.mark.parametrize("alpha", [0.2, 0.4, 1.0])
    def test_data_and_step_slopes(self, alpha):
        d = QuantaDistribution(alpha)
        target = -alpha / (alpha + 1)
        z = zeta(alpha + 1)
        lo = z * 100 ** (alpha + 1)  # D giving n ~ 100
        D = np.logspace(np.log10(lo), np.log10(lo) + 3, 40)
        pd = scaling_prediction("data", d)
        ps = scaling_prediction("steps", d)
        yd = [loss_vs_data(x, pd, d, self.prof) for x in D]
        ys = [loss_vs_steps(x, ps, d, self.prof) for x in D]
        assert loglog_slope(D, yd) == pytest.approx(target, abs=0.02)
        assert loglog_slope(D, ys) == pytest.approx(target, abs=0.02)


def test_parse_profile():
    assert parse_profile("constant:0,1") == Constant(0, 1)
    assert parse_profile("logfreq") == LogFreq()
    assert parse_profile("logoffset:3") == LogOffset(3.0)
    with pytest.raises(TheoryError):
        parse_profile("cubic")
