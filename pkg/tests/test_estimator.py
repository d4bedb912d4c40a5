import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import kstest, norm

from oracles import rho_double_loop
from quacc.dataset import Dataset
from quacc.estimator import (
    InsufficientDataError,
    QuaccError,
    fold_variance,
    kappa_weights,
    normalize,
    null_value,
    quacc_test,
    rho_fold,
    upper_bound,
    v_tau,
    v_xy,
)
from quacc.synth import CopulaSpec, sample_copula


def _clayton_normals(theta, n, seed):
    u, v = sample_copula(CopulaSpec("clayton", theta), n, np.random.default_rng(seed))
    return norm.ppf(u), norm.ppf(v)


class TestRhoFold:
    def test_hand_case(self):
        assert rho_fold(np.array([1.0, 2]), np.array([1.0, 1]), np.array([0.0, 3]), np.array([0.0, 0]), 0.9) == 0.5

    def test_ties_not_exceeding(self):
        one = np.ones(3)
        assert rho_fold(one, one, one, one, 0.9) == 0.0
        assert rho_fold(one, one, one, one, 0.1) == 0.0

    def test_empty(self):
        with pytest.raises(QuaccError):
            rho_fold(np.array([]), np.array([]), np.array([]), np.array([]), 0.5)

    def test_independent_normals(self):
        r = np.random.default_rng(1)
        y, x = r.normal(size=(2, 100_000))
        q = norm.ppf(0.9)
        assert abs(rho_fold(y, x, np.full_like(y, q), np.full_like(x, q), 0.9) - 0.01) < 0.003

    def test_clayton_analytic(self):
        y, x = _clayton_normals(2.0, 200_000, 2)
        q = np.full_like(y, norm.ppf(0.1))
        assert abs(rho_fold(y, x, q, q, 0.1) - 199 ** -0.5) < 0.003

    @given(
        data=arrays(float, st.tuples(st.just(4), st.integers(1, 30)), elements=st.integers(-3, 3).map(float)),
        tau=st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9]),
    )
    def test_double_loop(self, data, tau):
        y, x, qy, qx = data
        out = rho_fold(y, x, qy, qx, tau)
        assert 0.0 <= out <= 1.0
        assert out == pytest.approx(rho_double_loop(y, x, qy, qx, tau))

    @given(
        data=arrays(float, st.tuples(st.just(4), st.integers(1, 30)), elements=st.integers(-40, 40).map(lambda k: k / 8)),
        tau=st.sampled_from([0.1, 0.5, 0.9]),
    )
    def test_monotone_invariance(self, data, tau):
        y, x, qy, qx = data
        g = lambda a: np.exp(a) + a**3  # noqa: E731  strictly increasing
        assert rho_fold(g(y), x, g(qy), qx, tau) == rho_fold(y, x, qy, qx, tau)


class TestNullAndNormalize:
    @pytest.mark.parametrize("tau,expected", [(0.1, 0.01), (0.5, 0.25), (0.9, 0.01), (0.3, 0.09)])
    def test_null(self, tau, expected):
        assert null_value(tau) == pytest.approx(expected)

    def test_null_domain(self):
        with pytest.raises(QuaccError):
            null_value(1.0)

    def test_normalize_points(self):
        assert normalize(null_value(0.1), 0.1) == 0.0
        assert normalize(0.01, 0.1) == pytest.approx(0.0, abs=1e-12)
        assert normalize(0.1, 0.1) == pytest.approx(1.0)
        assert normalize(0.0, 0.1) == pytest.approx(-1.0)

    def test_normalize_out_of_range(self):
        with pytest.raises(QuaccError):
            normalize(0.2, 0.1)

    @given(tau=st.floats(0.02, 0.98), a=st.floats(0, 1), b=st.floats(0, 1))
    def test_normalize_monotone(self, tau, a, b):
        ub = upper_bound(tau)
        ra, rb = sorted((a * ub, b * ub))
        na, nb = normalize(ra, tau), normalize(rb, tau)
        assert -1 <= na <= nb <= 1
        if rb - ra > 1e-9:
            assert na < nb
        assert math.copysign(1, na) == math.copysign(1, ra - null_value(tau)) or na == 0


class TestVariancePieces:
    def test_v_tau_null(self):
        assert v_tau(0.1, 0.01) == pytest.approx(0.0081)

    def test_v_tau_median(self):
        assert v_tau(0.5, 0.25) == pytest.approx(0.0625)

    def test_v_tau_clayton(self):
        assert v_tau(0.1, 0.0709) == pytest.approx(0.047076)

    def test_v_tau_range(self):
        with pytest.raises(QuaccError):
            v_tau(0.1, 0.2)

    @given(tau=st.floats(0.01, 0.99), frac=st.floats(0, 1))
    def test_v_tau_is_indicator_variance(self, tau, frac):
        # at the null the formula reduces to the variance of a product of two Bernoulli(t) indicators
        t = min(tau, 1 - tau)
        p = frac * t
        assert v_tau(tau, p) >= 0 or abs(v_tau(tau, p)) < 1e-12
        assert v_tau(tau, t * t) == pytest.approx(t * t * (1 - t) ** 2)

    def test_kappa(self):
        c = np.full(10, 0.7)
        assert kappa_weights(0.9, c, c) == pytest.approx((0.07, 0.07))
        assert kappa_weights(0.1, c, c) == pytest.approx((0.07, 0.07))

    def test_kappa_normal(self):
        f = np.full(5, norm.pdf(norm.ppf(0.1)))
        assert kappa_weights(0.1, f, f)[1] == pytest.approx(0.01754, abs=1e-5)

    def test_kappa_bad(self):
        with pytest.raises(QuaccError):
            kappa_weights(0.5, np.array([0.0]), np.array([1.0]))

    def test_v_xy(self):
        assert v_xy(np.ones(4), np.arange(4.0)) == 0.0
        a = np.array([1.0, 5.0, 2.0])
        assert v_xy(a, a) == pytest.approx(a.var())
        assert v_xy(np.array([1.0, 2, 3]), np.array([2.0, 4, 6])) == pytest.approx(4 / 3)
        with pytest.raises(QuaccError):
            v_xy(np.ones(1), np.ones(1))

    def test_fold_variance(self):
        assert fold_variance(0.1, 0, 0, 1.0, 2.0, 3.0, 0.0081) == pytest.approx(0.0081)
        assert fold_variance(0.1, 0.3, 0.2, 0.0, 0.0, 0.0, 0.0081) == pytest.approx(0.0081)
        k, s = 0.01754, 2.925
        assert fold_variance(0.1, k, k, s, s, 0.0, 0.0081, cross=False) == pytest.approx(0.00990, abs=1e-5)
        assert fold_variance(0.1, k, k, s, s, 1.0, 0.0081) > fold_variance(0.1, k, k, s, s, 1.0, 0.0081, cross=False)
        with pytest.raises(QuaccError):
            fold_variance(0.1, 1, 1, 1, 1, -10, 0.0)


def _indep(n, seed, cols=("Y", "X", "Z1", "Z2")):
    return Dataset(cols, np.random.default_rng(seed).normal(size=(n, len(cols))))


class TestQuaccTest:
    def test_result_fields(self):
        res = quacc_test(_indep(300, 0), "Y", "X", ["Z1"], 0.5, 5, 1)
        assert res.null_value == 0.25
        assert res.p_value == pytest.approx(2 * norm.sf(abs(res.z)))
        assert len(res.folds) == 5 and sum(f.n_k for f in res.folds) == 300
        assert all(f.var_k > 0 and 0 <= f.rho_k <= 1 for f in res.folds)
        assert res.rho_hat == pytest.approx(np.mean([f.rho_k for f in res.folds]))
        assert res.se == pytest.approx(math.sqrt(sum(f.var_k / f.n_k for f in res.folds)) / 5)
        assert np.sign(res.rho_star) == np.sign(res.rho_hat - res.null_value)
        assert "rho=" in res.summary()

    @given(seed=st.integers(0, 10_000), tau=st.sampled_from([0.1, 0.5, 0.9]))
    def test_symmetric(self, seed, tau):
        d = _indep(120, seed)
        a = quacc_test(d, "Y", "X", ["Z1"], tau, 5, seed)
        b = quacc_test(d, "X", "Y", ["Z1"], tau, 5, seed)
        assert (a.rho_hat, a.z, a.p_value) == (b.rho_hat, b.z, b.p_value)

    def test_deterministic(self):
        d = _indep(200, 3)
        assert quacc_test(d, "Y", "X", ["Z1", "Z2"], 0.9, 5, 11) == quacc_test(d, "Y", "X", ["Z1", "Z2"], 0.9, 5, 11)

    def test_cache_matches_uncached(self):
        d = _indep(200, 4)
        cache = {}
        a = quacc_test(d, "Y", "X", ["Z1"], 0.1, 5, 2, cache=cache)
        b = quacc_test(d, "Y", "X", ["Z1"], 0.1, 5, 2, cache=cache)
        c = quacc_test(d, "Y", "X", ["Z1"], 0.1, 5, 2)
        assert a == b == c and len(cache) == 10

    def test_testwise_deletion(self):
        vals = np.random.default_rng(5).normal(size=(200, 3))
        vals[:20, 0] = np.nan
        vals[190:, 2] = np.nan
        d = Dataset(("Y", "X", "Z"), vals)
        assert quacc_test(d, "Y", "X", [], 0.5, 5, 0).n_effective == 180
        assert quacc_test(d, "Y", "X", ["Z"], 0.5, 5, 0).n_effective == 170

    def test_degenerate_pair(self):
        with pytest.raises(QuaccError, match="degenerate pair"):
            quacc_test(_indep(100, 0), "Y", "Y", [], 0.5)

    def test_insufficient(self):
        with pytest.raises(InsufficientDataError):
            quacc_test(_indep(24, 0), "Y", "X", [], 0.5, 5)
        with pytest.raises(InsufficientDataError):
            quacc_test(_indep(29, 0), "Y", "X", ["Z1", "Z2"], 0.5, 5)
        with pytest.raises(InsufficientDataError, match="tau too extreme"):
            quacc_test(_indep(60, 0), "Y", "X", [], 0.1, 5)

    def test_bad_config(self):
        d = _indep(100, 0)
        with pytest.raises(QuaccError):
            quacc_test(d, "Y", "X", [], 1.2)
        with pytest.raises(QuaccError):
            quacc_test(d, "Y", "X", ["Y"], 0.5)
        with pytest.raises(QuaccError):
            quacc_test(d, "Y", "X", [], 0.5, K=1)

    def test_detects_clayton(self):
        y, x = _clayton_normals(8.0, 1000, 9)
        d = Dataset(("Y", "X"), np.column_stack([y, x]))
        res = quacc_test(d, "Y", "X", [], 0.1, 5, 0)
        assert res.rejected and res.rho_star > 0.3

    def test_clayton_fig1_mean(self):
        rhos = []
        for s in range(5):
            y, x = _clayton_normals(4.0, 2000, 100 + s)
            rhos.append(quacc_test(Dataset(("Y", "X"), np.column_stack([y, x])), "Y", "X", [], 0.1, 5, s).rho_hat)
        assert abs(np.mean(rhos) - 0.08) < 0.02

    def test_theta_null_at_truth(self):
        # testing rho = theta at the population value should not reject at a strong dependence
        y, x = _clayton_normals(2.0, 5000, 12)
        d = Dataset(("Y", "X"), np.column_stack([y, x]))
        res = quacc_test(d, "Y", "X", [], 0.1, 5, 0, theta=199**-0.5)
        assert res.p_value > 0.01
        assert all(f.kappa_x > 0 for f in res.folds)
        with pytest.raises(QuaccError):
            quacc_test(d, "Y", "X", [], 0.1, theta=0.5)

    # z lives on a lattice with step ~ 1/sqrt(n * null) and carries an
    # O(n^-1/2) excess variance; n is large enough that both sit well below the
    # KS resolution at 500 replicates
    @pytest.mark.parametrize("tau,n", [(0.5, 20_000), (0.1, 20_000)])
    def test_marginal_null_z_normal(self, tau, n):
        zs = [quacc_test(_indep(n, 1000 + r, ("Y", "X")), "Y", "X", [], tau, 5, r).z for r in range(500)]
        assert kstest(zs, "norm").pvalue > 0.01
