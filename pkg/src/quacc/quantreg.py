"""Linear quantile regression and the density/variance pieces built on it.

The solver is a Frisch-Newton primal-dual interior point method on the dual
of the check-loss linear program, followed by a polishing step that snaps the
interior solution onto the basic (interpolating) solution when that is at
least as good.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Literal, Sequence

import numpy as np
from numba import njit
from scipy.stats import norm

BandwidthRule = Literal["hall_sheather", "bofinger"]

MAX_ITER = 200
GAP_TOL = 1e-8
STEP = 0.99995

log = logging.getLogger(__name__)


class QuantRegError(RuntimeError):
    """Quantile regression could not be fitted."""


@dataclass(frozen=True)
class QuantileFit:
    tau: float
    coefficients: np.ndarray  # intercept first
    n_train: int
    objective: float  # mean check loss on the training data
    iterations: int = 0

    @property
    def p(self) -> int:
        return self.coefficients.size - 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coefficients"] = [float(c) for c in self.coefficients]
        return d


def check_loss(u: np.ndarray, tau: float) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


def add_intercept(Z: np.ndarray | None, n: int | None = None) -> np.ndarray:
    if Z is None:
        return np.ones((n, 1))
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    return np.column_stack([np.ones(Z.shape[0]), Z])


@njit(cache=True)
def _bound(v, dv):
    best = 1e20
    for i in range(v.size):
        if dv[i] < 0.0:
            t = -v[i] / dv[i]
            if t < best:
                best = t
    return best


@njit(cache=True)
def _frisch_newton(X, y, tau, max_iter, tol):
    """Solve min sum rho_tau(y - X b) through its bounded dual.

    Dual: max y'a  s.t.  X'a = (1 - tau) X'1,  0 <= a <= 1 (shifted form).
    Mehrotra predictor-corrector steps; returns (coefficients, iterations, gap).
    """
    n, k = X.shape
    c = -y
    b = (1.0 - tau) * X.sum(axis=0)
    x = np.full(n, 1.0 - tau)
    s = 1.0 - x
    dual = np.linalg.solve(X.T @ X, X.T @ c)
    r = c - X @ dual
    z = np.zeros(n)
    w = np.zeros(n)
    for i in range(n):
        if r[i] == 0.0:
            r[i] = 0.001
        if r[i] > 0.0:
            z[i] = r[i]
        w[i] = z[i] - r[i]
    gap = c @ x - dual @ b + w.sum()
    it = 0
    while gap > tol and it < max_iter:
        it += 1
        q = 1.0 / (z / x + w / s)
        r = z - w
        M = (X.T * q) @ X
        dy = np.linalg.solve(M, X.T @ (q * r))
        dx = q * (X @ dy - r)
        ds = -dx
        dz = -z * (dx / x + 1.0)
        dw = -w * (ds / s + 1.0)
        fp = min(STEP * min(_bound(x, dx), _bound(s, ds)), 1.0)
        fd = min(STEP * min(_bound(w, dw), _bound(z, dz)), 1.0)
        if min(fp, fd) < 1.0:
            mu = z @ x + w @ s
            g = (z + fd * dz) @ (x + fp * dx) + (w + fd * dw) @ (s + fp * ds)
            mu = mu * (g / mu) ** 3 / (2 * n)
            dxdz = dx * dz
            dsdw = ds * dw
            xinv = 1.0 / x
            sinv = 1.0 / s
            xi = mu * (xinv - sinv)
            dy = np.linalg.solve(M, X.T @ (q * (r + dxdz - dsdw - xi)))
            dx = q * (X @ dy + xi - r - dxdz + dsdw)
            ds = -dx
            dz = mu * xinv - z - xinv * z * dx - dxdz
            dw = mu * sinv - w - sinv * w * ds - dsdw
            fp = min(STEP * min(_bound(x, dx), _bound(s, ds)), 1.0)
            fd = min(STEP * min(_bound(w, dw), _bound(z, dz)), 1.0)
        x_new = x + fp * dx
        s_new = s + fp * ds
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(s_new))):
            break
        if x_new.min() <= 0.0 or s_new.min() <= 0.0:
            break
        dual_new = dual + fd * dy
        if not np.all(np.isfinite(dual_new)):
            break
        x = x_new
        s = s_new
        dual = dual_new
        w = w + fd * dw
        z = z + fd * dz
        gap = c @ x - dual @ b + w.sum()
    return -dual, it, gap


def _initial_basis(X: np.ndarray, order: np.ndarray) -> list[int] | None:
    """First p+1 linearly independent rows of ``X`` taken in ``order``."""
    k = X.shape[1]
    chosen: list[int] = []
    for i in order:
        trial = chosen + [int(i)]
        if np.linalg.matrix_rank(X[trial], tol=1e-10) == len(trial):
            chosen = trial
            if len(chosen) == k:
                return chosen
    return None


def _exchange(X: np.ndarray, y: np.ndarray, tau: float, basis: list[int], max_pivots: int):
    """Basis-exchange descent from an interpolating solution to an exact optimum.

    At a basic solution the check loss is optimal iff the multipliers
    ``lam = -X_h^{-T} g`` all lie in ``[tau - 1, tau]``, where ``g`` is the
    subgradient contribution of the non-basic rows. Otherwise the offending
    row leaves the basis and an exact line search along the freed direction
    (a weighted-median problem) picks the entering row.
    """
    n, k = X.shape
    tol = 1e-10 * max(float(np.max(np.abs(y))), 1.0)
    basis = list(basis)
    for pivot in range(max_pivots + 1):
        Xh = X[basis]
        beta = np.linalg.solve(Xh, y[basis])
        r = y - X @ beta
        r[basis] = 0.0
        r[np.abs(r) <= tol] = 0.0
        nonbasic = np.ones(n, dtype=bool)
        nonbasic[basis] = False
        psi = np.where(r > 0, tau, tau - 1.0)
        # zero non-basic residuals get psi = 0, a valid subgradient choice
        active = nonbasic & (r != 0)
        g = X[active].T @ psi[active]
        lam = -np.linalg.solve(Xh.T, g)
        viol_hi = lam - tau
        viol_lo = (tau - 1.0) - lam
        j = int(np.argmax(np.maximum(viol_hi, viol_lo)))
        worst = max(viol_hi[j], viol_lo[j])
        if worst <= 1e-10:
            return beta, pivot
        sgn = 1.0 if viol_lo[j] > viol_hi[j] else -1.0
        e = np.zeros(k)
        e[j] = sgn
        d = np.linalg.solve(Xh, e)
        a = X @ d
        # slope of sum rho(r_i - t a_i) at t = 0+
        u_sign = np.where(r != 0, np.sign(r), -np.sign(a))
        slope = float(np.sum(-a * np.where(u_sign > 0, tau, tau - 1.0)))
        if slope >= -1e-12 * float(np.sum(np.abs(a))):
            return beta, pivot
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(a != 0, r / a, np.inf)
        cand = np.flatnonzero((t > 0) & np.isfinite(t) & (np.abs(a) > 1e-14))
        if cand.size == 0:
            raise QuantRegError("unbounded quantile regression direction")
        order = cand[np.argsort(t[cand], kind="stable")]
        cum = slope + np.cumsum(np.abs(a[order]))
        stop = int(np.argmax(cum >= 0)) if np.any(cum >= 0) else order.size - 1
        entering = int(order[stop])
        basis[j] = entering
        if np.linalg.matrix_rank(X[basis], tol=1e-10) < k:
            raise QuantRegError("singular basis during exchange")
    raise QuantRegError(f"quantile regression did not converge after {max_pivots} pivots")


def _order_index(n: int, tau: float) -> int:
    return min(max(int(np.ceil(n * tau)) - 1, 0), n - 1)


def fit_qr(
    Z: np.ndarray | None,
    y: np.ndarray,
    tau: float,
    *,
    max_iter: int = MAX_ITER,
) -> QuantileFit:
    """Fit ``Q(tau | Z) = b0 + Z b`` by minimising the check loss.

    ``Z`` may be ``None`` or have zero columns for an intercept-only fit.
    """
    if not 0.0 < tau < 1.0:
        raise QuantRegError(f"tau must lie in (0, 1), got {tau}")
    y = np.asarray(y, dtype=float)
    n = y.size
    X = add_intercept(Z, n)
    k = X.shape[1]
    if X.shape[0] != n:
        raise QuantRegError("Z and y have different numbers of rows")
    if n <= k:
        raise QuantRegError(f"need more than {k} rows, got {n}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise QuantRegError("missing or non-finite values in quantile regression input")
    if k > 1 and np.linalg.matrix_rank(X) < k:
        raise QuantRegError("collinear design matrix")

    if k == 1:
        # intercept only: the minimiser is an order statistic, or the whole gap
        # between two when n * tau is an integer; take the gap midpoint so the
        # fitted quantile is not biased towards either tail
        m = n * tau
        if abs(m - round(m)) < 1e-9 and 1 <= round(m) < n:
            m = int(round(m))
            lo, hi = np.partition(y, (m - 1, m))[[m - 1, m]]
            q = float(0.5 * (lo + hi))
        else:
            q = float(np.partition(y, _order_index(n, tau))[_order_index(n, tau)])
        obj = float(check_loss(y - q, tau).mean())
        return QuantileFit(float(tau), np.array([q]), n, obj, 0)

    scale = max(float(np.abs(y).sum()), 1.0)
    try:
        beta, it, gap = _frisch_newton(
            np.ascontiguousarray(X), np.ascontiguousarray(y), float(tau), int(max_iter), GAP_TOL * scale
        )
    except np.linalg.LinAlgError:
        # the scaled normal matrix can lose rank when weights underflow; the
        # exchange below is exact from any start, so restart it from least squares
        log.debug("interior point hit a singular system; starting exchange from least squares")
        beta, it = np.linalg.lstsq(X, y, rcond=None)[0], 0
    if not np.all(np.isfinite(beta)):
        beta, it = np.linalg.lstsq(X, y, rcond=None)[0], 0
    basis = _initial_basis(X, np.argsort(np.abs(y - X @ beta), kind="stable"))
    if basis is None:
        raise QuantRegError("no non-singular basis found")
    beta, pivots = _exchange(X, y, tau, basis, max(max_iter, n))
    obj = float(check_loss(y - X @ beta, tau).mean())
    return QuantileFit(float(tau), beta, n, obj, it + pivots)


def predict(fit: QuantileFit, z: np.ndarray | Sequence[float]) -> np.ndarray | float:
    """Evaluate the fitted quantile at one point (1-d) or many rows (2-d)."""
    z = np.asarray(z, dtype=float)
    if z.ndim <= 1:
        z = z.reshape(-1)
        if z.size != fit.p:
            raise QuantRegError(f"expected {fit.p} covariates, got {z.size}")
        return float(fit.coefficients[0] + z @ fit.coefficients[1:])
    if z.shape[1] != fit.p:
        raise QuantRegError(f"expected {fit.p} covariates, got {z.shape[1]}")
    return fit.coefficients[0] + z @ fit.coefficients[1:]


def bandwidth(n: int, tau: float, rule: BandwidthRule = "hall_sheather", alpha: float = 0.05) -> float:
    """Hall-Sheather (n^-1/3) or Bofinger (n^-1/5) bandwidth, clamped inside (0, 1)."""
    if n < 2:
        raise QuantRegError("bandwidth needs n >= 2")
    x = norm.ppf(tau)
    f = norm.pdf(x)
    if rule == "hall_sheather":
        h = n ** (-1 / 3) * norm.ppf(1 - alpha / 2) ** (2 / 3) * (1.5 * f**2 / (2 * x**2 + 1)) ** (1 / 3)
    elif rule == "bofinger":
        h = n ** (-0.2) * (4.5 * f**4 / (2 * x**2 + 1) ** 2) ** 0.2
    else:
        raise QuantRegError(f"unknown bandwidth rule {rule!r}")
    return float(min(h, 0.999 * min(tau, 1 - tau)))


def crossing_floor(y: np.ndarray) -> float:
    spread = float(np.ptp(y)) if np.size(y) else 1.0
    return np.finfo(float).eps ** (2 / 3) * max(spread, 1.0)


def sandwich_density(
    fit_hi: QuantileFit,
    fit_lo: QuantileFit,
    z: np.ndarray,
    h: float,
    floor: float | None = None,
) -> tuple[np.ndarray | float, np.ndarray | bool]:
    """Difference-quotient density ``2h / (Q(tau+h|z) - Q(tau-h|z))``.

    Returns ``(density, crossed)``; where the fitted quantiles cross the
    denominator is replaced by ``floor`` and ``crossed`` is set.
    """
    if h <= 0:
        raise QuantRegError("bandwidth must be positive")
    if fit_hi.p != fit_lo.p:
        raise QuantRegError("fits do not share a design")
    if floor is None:
        floor = crossing_floor(np.array([0.0, 1.0]))
    diff = np.asarray(predict(fit_hi, z)) - np.asarray(predict(fit_lo, z))
    crossed = diff <= 0
    dens = 2 * h / np.maximum(diff, floor)
    if dens.ndim == 0:
        return float(dens), bool(crossed)
    return dens, crossed


@dataclass(frozen=True)
class DesignLimits:
    D0: np.ndarray
    D1: np.ndarray
    tau: float


def design_limits(Z: np.ndarray | None, densities: np.ndarray, tau: float) -> DesignLimits:
    densities = np.asarray(densities, dtype=float)
    if np.any(densities <= 0) or not np.all(np.isfinite(densities)):
        raise QuantRegError("densities must be positive and finite")
    X = add_intercept(Z, densities.size)
    if X.shape[0] != densities.size:
        raise QuantRegError("densities and Z have different lengths")
    n = X.shape[0]
    D0 = X.T @ X / n
    D1 = (X * densities[:, None]).T @ X / n
    return DesignLimits(D0, D1, float(tau))


def qr_variance(limits: DesignLimits, z: np.ndarray) -> np.ndarray | float:
    """Asymptotic variance ``tau(1-tau) z~' D1^-1 D0 D1^-1 z~`` of a fitted quantile.

    ``z`` excludes the intercept; pass a 2-d array for many points.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim <= 1
    Xz = add_intercept(z.reshape(1, -1) if single else z)
    if Xz.shape[1] != limits.D1.shape[0]:
        raise QuantRegError("dimension mismatch between z and design limits")
    if np.linalg.cond(limits.D1) > 1e12:
        raise QuantRegError("singular D1 matrix")
    D1inv = np.linalg.inv(limits.D1)
    M = D1inv @ limits.D0 @ D1inv
    t = limits.tau
    var = t * (1 - t) * np.einsum("ij,jk,ik->i", Xz, M, Xz)
    return float(var[0]) if single else var
