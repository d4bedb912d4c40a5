import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from oracles import qr_bruteforce
from quacc.quantreg import (
    QuantileFit,
    QuantRegError,
    bandwidth,
    check_loss,
    design_limits,
    fit_qr,
    predict,
    qr_variance,
    sandwich_density,
)

taus = st.sampled_from([0.1, 0.25, 0.5, 0.8, 0.9])


def _objective(Z, y, beta, tau):
    X = np.column_stack([np.ones(y.size), Z]) if Z is not None else np.ones((y.size, 1))
    return float(check_loss(y - X @ beta, tau).mean())


def _sign_invariant(fit, Z, y):
    X = np.column_stack([np.ones(y.size), Z]) if Z is not None else np.ones((y.size, 1))
    r = y - X @ fit.coefficients
    n, slack = y.size, (fit.p + 1) / y.size
    neg = np.mean(r < -1e-9 * max(1.0, np.abs(y).max()))
    nonpos = np.mean(r <= 1e-9 * max(1.0, np.abs(y).max()))
    return fit.tau - slack - 1e-12 <= neg <= fit.tau + 1e-12 and nonpos >= fit.tau - slack - 1e-12


class TestFit:
    def test_median_odd(self):
        fit = fit_qr(None, np.array([1.0, 2, 3, 4, 5]), 0.5)
        assert fit.coefficients[0] == 3.0

    def test_normal_decile(self, rng):
        fit = fit_qr(None, rng.normal(size=100_000), 0.1)
        assert abs(fit.coefficients[0] - norm.ppf(0.1)) < 0.02

    def test_oracle_n10_p1(self, rng):
        Z = rng.normal(size=(10, 1))
        y = Z[:, 0] + rng.normal(size=10)
        fit = fit_qr(Z, y, 0.3)
        assert fit.objective == pytest.approx(qr_bruteforce(Z, y, 0.3), abs=1e-8)

    def test_linear_model_slope(self, rng):
        Z = rng.normal(size=(4000, 2))
        y = 1.0 + Z @ [2.0, -1.0] + rng.normal(size=4000)
        fit = fit_qr(Z, y, 0.5)
        np.testing.assert_allclose(fit.coefficients, [1.0, 2.0, -1.0], atol=0.08)

    def test_errors(self, rng):
        with pytest.raises(QuantRegError):
            fit_qr(None, np.ones(5), 1.0)
        with pytest.raises(QuantRegError, match="collinear"):
            z = rng.normal(size=20)
            fit_qr(np.column_stack([z, 2 * z]), rng.normal(size=20), 0.5)
        with pytest.raises(QuantRegError, match="non-finite"):
            fit_qr(None, np.array([1.0, np.nan, 2.0]), 0.5)
        with pytest.raises(QuantRegError, match="more than"):
            fit_qr(np.ones((2, 1)), np.ones(2), 0.5)

    @given(
        n=st.integers(4, 12),
        p=st.integers(0, 2),
        tau=st.sampled_from([0.25, 0.5, 0.8]),
        seed=st.integers(0, 10_000),
    )
    def test_matches_bruteforce(self, n, p, tau, seed):
        r = np.random.default_rng(seed)
        Z = r.normal(size=(n, p)) if p else None
        y = r.standard_t(3, size=n) + (Z.sum(1) if p else 0)
        if n <= p + 1:
            return
        fit = fit_qr(Z, y, tau)
        assert fit.objective == pytest.approx(qr_bruteforce(Z, y, tau), abs=1e-8)
        assert _sign_invariant(fit, Z, y)

    @given(tau=taus, seed=st.integers(0, 10_000), j=st.integers(0, 2), sign=st.sampled_from([-1, 1]))
    def test_local_optimality(self, tau, seed, j, sign):
        r = np.random.default_rng(seed)
        Z = r.normal(size=(60, 2))
        y = Z @ [0.5, -0.3] + r.normal(size=60)
        fit = fit_qr(Z, y, tau)
        b = fit.coefficients.copy()
        b[j] += sign * 1e-3
        assert _objective(Z, y, b, tau) >= fit.objective - 1e-9

    @given(tau=taus, seed=st.integers(0, 10_000), c=st.floats(-50, 50), a=st.floats(0.1, 20))
    def test_equivariance(self, tau, seed, c, a):
        r = np.random.default_rng(seed)
        Z = r.normal(size=(80, 1))
        y = Z[:, 0] + r.normal(size=80)
        base = fit_qr(Z, y, tau)
        shifted = fit_qr(Z, y + c, tau)
        scaled = fit_qr(Z, a * y, tau)
        np.testing.assert_allclose(shifted.coefficients, base.coefficients + [c, 0.0], atol=1e-7 * (1 + abs(c)))
        np.testing.assert_allclose(scaled.coefficients, a * base.coefficients, atol=1e-7 * a)


class TestPredict:
    def test_affine(self):
        fit = QuantileFit(0.5, np.array([1.0, 2.0]), 10, 0.0)
        assert predict(fit, [3.0]) == 7.0
        assert predict(fit, [0.0]) == 1.0

    def test_batch(self):
        fit = QuantileFit(0.5, np.array([1.0, 2.0, -1.0]), 10, 0.0)
        np.testing.assert_allclose(predict(fit, np.array([[1.0, 1.0], [0.0, 2.0]])), [2.0, -1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(QuantRegError):
            predict(QuantileFit(0.5, np.array([1.0, 2.0]), 10, 0.0), [1.0, 2.0])

    def test_no_crossing_gaussian(self, rng):
        Z = rng.uniform(-2, 2, size=(10_000, 1))
        y = 1 + 0.5 * Z[:, 0] + rng.normal(size=10_000)
        lo, hi = fit_qr(Z, y, 0.1), fit_qr(Z, y, 0.9)
        grid = np.linspace(-2, 2, 41)[:, None]
        assert np.all(predict(lo, grid) <= predict(hi, grid))


class TestBandwidth:
    def test_hall_sheather_rate(self):
        assert bandwidth(8000, 0.5) / bandwidth(1000, 0.5) == pytest.approx(0.5)

    def test_bofinger_rate(self):
        assert bandwidth(32_000, 0.3, "bofinger") / bandwidth(1000, 0.3, "bofinger") == pytest.approx(0.5)

    def test_known_value(self):
        # Hall-Sheather at the median: n^-1/3 * 1.96^(2/3) * (1.5 * phi(0)^2)^(1/3)
        h = 1000 ** (-1 / 3) * norm.ppf(0.975) ** (2 / 3) * (1.5 * norm.pdf(0) ** 2) ** (1 / 3)
        assert bandwidth(1000, 0.5) == pytest.approx(h)

    @given(n=st.integers(2, 10**6), tau=st.floats(0.001, 0.999), rule=st.sampled_from(["hall_sheather", "bofinger"]))
    def test_clamped(self, n, tau, rule):
        h = bandwidth(n, tau, rule)
        assert h > 0 and 0 < tau - h and tau + h < 1

    def test_errors(self):
        with pytest.raises(QuantRegError):
            bandwidth(1, 0.5)
        with pytest.raises(QuantRegError):
            bandwidth(10, 0.5, "silverman")


class TestSandwich:
    def test_identity(self):
        h = 0.05
        hi = QuantileFit(0.55, np.array([h]), 10, 0.0)
        lo = QuantileFit(0.45, np.array([-h]), 10, 0.0)
        assert sandwich_density(hi, lo, np.zeros(0), h) == (1.0, False)

    def test_crossing_flagged(self):
        hi = QuantileFit(0.55, np.array([0.0, -1.0]), 10, 0.0)
        lo = QuantileFit(0.45, np.array([0.0, 1.0]), 10, 0.0)
        dens, crossed = sandwich_density(hi, lo, np.array([[1.0], [-1.0]]), 0.1, floor=1e-6)
        assert crossed.tolist() == [True, False]
        assert dens[0] == pytest.approx(0.2 / 1e-6)
        assert np.isfinite(dens).all()

    def test_location_model(self, rng):
        Z = rng.normal(size=(10_000, 1))
        y = 2 * Z[:, 0] + rng.normal(size=10_000)
        h = bandwidth(10_000, 0.5)
        dens, _ = sandwich_density(fit_qr(Z, y, 0.5 + h), fit_qr(Z, y, 0.5 - h), np.array([0.0]), h)
        assert abs(dens / norm.pdf(0) - 1) < 0.2


class TestDesignLimits:
    def test_intercept_only(self):
        lim = design_limits(None, np.full(5, 0.3), 0.5)
        np.testing.assert_allclose(lim.D0, [[1.0]])
        np.testing.assert_allclose(lim.D1, [[0.3]])

    def test_unit_density(self, rng):
        Z = rng.normal(size=(20, 2))
        lim = design_limits(Z, np.ones(20), 0.5)
        np.testing.assert_allclose(lim.D1, lim.D0)

    def test_hand_case(self):
        lim = design_limits(np.array([[1.0], [2.0], [3.0]]), np.array([0.1, 0.2, 0.3]), 0.5)
        np.testing.assert_allclose(lim.D0, np.array([[3, 6], [6, 14]]) / 3)
        np.testing.assert_allclose(lim.D1, np.array([[0.6, 1.4], [1.4, 3.6]]) / 3)

    def test_bad_density(self):
        with pytest.raises(QuantRegError):
            design_limits(None, np.array([0.1, 0.0]), 0.5)

    @given(seed=st.integers(0, 1000))
    def test_psd(self, seed):
        r = np.random.default_rng(seed)
        lim = design_limits(r.normal(size=(30, 3)), r.uniform(0.01, 2, 30), 0.3)
        for M in (lim.D0, lim.D1):
            np.testing.assert_allclose(M, M.T)
            assert np.linalg.eigvalsh(M).min() >= -1e-12


class TestQrVariance:
    def test_scalar(self):
        lim = design_limits(None, np.full(4, 0.5), 0.3)
        assert qr_variance(lim, np.zeros(0)) == pytest.approx(0.21 / 0.25)

    def test_tau_factor(self, rng):
        Z = rng.normal(size=(50, 1))
        f = rng.uniform(0.2, 1, 50)
        assert qr_variance(design_limits(Z, f, 0.5), [0.3]) >= qr_variance(design_limits(Z, f, 0.1), [0.3])

    def test_singular(self):
        lim = design_limits(np.ones((5, 1)), np.ones(5), 0.5)
        with pytest.raises(QuantRegError, match="singular"):
            qr_variance(lim, [1.0])

    def test_median_variance_monte_carlo(self):
        # n Var(sample median) of N(0,1) tends to 0.25 / phi(0)^2 = pi / 2
        n = 10_000
        r = np.random.default_rng(5)
        meds = np.array([fit_qr(None, r.normal(size=n), 0.5).coefficients[0] for _ in range(500)])
        lim = design_limits(None, np.full(n, norm.pdf(0)), 0.5)
        assert qr_variance(lim, np.zeros(0)) == pytest.approx(math.pi / 2)
        assert abs(n * meds.var() / (math.pi / 2) - 1) < 0.2
