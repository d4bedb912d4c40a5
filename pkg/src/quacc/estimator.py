"""Cross-fitted QuACC estimator, its variance pieces and the z-test.

QuACC at level ``tau`` is the probability that ``Y`` and ``X`` both fall
below (``tau < 0.5``) or both rise above (``tau >= 0.5``) their conditional
``tau``-quantiles given ``Z``. Quantiles are estimated by linear quantile
regression on the out-of-fold rows and the joint exceedance is counted on
the held-out fold.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Hashable, MutableMapping, Sequence

import numpy as np
from scipy.stats import norm

from .dataset import DataError, Dataset, FoldAssignment, complete_rows, kfold_split
from .quantreg import (
    BandwidthRule,
    QuantileFit,
    QuantRegError,
    bandwidth,
    crossing_floor,
    design_limits,
    fit_qr,
    predict,
    qr_variance,
    sandwich_density,
)

_FLOOR_TOL = 1e-9


class QuaccError(RuntimeError):
    """Estimation failed."""


class InsufficientDataError(QuaccError):
    """Too few complete rows for the requested test."""


def _upper(tau: float) -> bool:
    return tau >= 0.5


def _tail(tau: float) -> float:
    """Marginal probability of the counted tail: tau below the median, 1 - tau above."""
    return 1.0 - tau if _upper(tau) else tau


def rho_fold(y: np.ndarray, x: np.ndarray, qy: np.ndarray, qx: np.ndarray, tau: float) -> float:
    """Share of rows where y and x are jointly beyond their fitted quantiles.

    Strict inequalities: a value equal to its fitted quantile is not beyond it.
    """
    y, x, qy, qx = (np.asarray(a, dtype=float) for a in (y, x, qy, qx))
    if y.size == 0:
        raise QuaccError("rho_fold needs at least one row")
    if not (y.shape == x.shape == qy.shape == qx.shape):
        raise QuaccError("rho_fold inputs must have equal lengths")
    if _upper(tau):
        hits = (y > qy) & (x > qx)
    else:
        hits = (y < qy) & (x < qx)
    return float(hits.mean())


def null_value(tau: float) -> float:
    """QuACC under independence: ``tau**2`` below the median, ``(1 - tau)**2`` otherwise."""
    if not 0.0 < tau < 1.0:
        raise QuaccError(f"tau must lie in (0, 1), got {tau}")
    return _tail(tau) ** 2


def upper_bound(tau: float) -> float:
    return _tail(tau)


def normalize(rho: float, tau: float) -> float:
    """Rescale QuACC to [-1, 1]: 0 at independence, 1 at the upper bound, -1 at 0."""
    null = null_value(tau)
    b = upper_bound(tau)
    if not -1e-12 <= rho <= b + 1e-12:
        raise QuaccError(f"rho={rho} outside the feasible range [0, {b}] for tau={tau}")
    if rho > null:
        return min((rho - null) / (b - null), 1.0)
    return max((rho - null) / null, -1.0)


def v_tau(tau: float, p_joint: float) -> float:
    """Variance of the centred concordance indicator at joint probability ``p_joint``."""
    t = _tail(tau)
    if not -1e-12 <= p_joint <= t + 1e-12:
        raise QuaccError(f"p_joint={p_joint} outside [0, {t}] for tau={tau}")
    return t**2 * (1 - t) ** 2 + (1 - 4 * t + 4 * t**2) * (p_joint - t**2)


def kappa_weights(tau: float, density_y: np.ndarray, density_x: np.ndarray) -> tuple[float, float]:
    """Sensitivity of the concordance probability to each fitted quantile.

    Densities are evaluated at the fitted quantiles of the held-out rows
    (conditional on the other variable being in its tail, or unconditionally
    under the independence null). Returns ``(kappa_y, kappa_x)``.
    """
    dy = np.asarray(density_y, dtype=float)
    dx = np.asarray(density_x, dtype=float)
    if dy.shape != dx.shape or dy.size == 0:
        raise QuaccError("density vectors must be non-empty and of equal length")
    if np.any(dy <= 0) or np.any(dx <= 0):
        raise QuaccError("densities must be positive")
    t = _tail(tau)
    # the partner's conditional CDF at its true quantile is exactly tau (or 1 - tau)
    return float(dy.mean() * t), float(dx.mean() * t)


def v_xy(qy: np.ndarray, qx: np.ndarray) -> float:
    """Population covariance of the fitted quantiles over the held-out rows."""
    qy = np.asarray(qy, dtype=float)
    qx = np.asarray(qx, dtype=float)
    if qy.size < 2 or qy.shape != qx.shape:
        raise QuaccError("v_xy needs two equal-length vectors of length >= 2")
    return float(np.mean((qy - qy.mean()) * (qx - qx.mean())))


def fold_variance(
    tau: float,
    kappa_y: float,
    kappa_x: float,
    sigma2_qy: float,
    sigma2_qx: float,
    vxy: float,
    vt: float,
    *,
    cross: bool = True,
) -> float:
    """Combine the fold's variance components.

    ``cross=False`` drops the ``2 kappa_y kappa_x V_xy`` term, as in the
    independence-null distribution.
    """
    if min(sigma2_qy, sigma2_qx, vt) < 0:
        raise QuaccError("variance components must be non-negative")
    total = kappa_y * sigma2_qy * kappa_y + kappa_x * sigma2_qx * kappa_x + vt
    if cross:
        total += 2 * kappa_y * kappa_x * vxy
    if not total > 0:
        raise QuaccError(f"non-positive fold variance {total} (degenerate inputs)")
    return float(total)


@dataclass(frozen=True)
class FoldEstimate:
    fold: int
    n_k: int
    rho_k: float
    var_k: float
    kappa_y: float
    kappa_x: float
    sigma2_qy: float
    sigma2_qx: float
    v_tau: float
    v_xy: float
    crossings: int = 0


@dataclass(frozen=True)
class QuaccResult:
    tau: float
    y: str
    x: str
    Z: tuple[str, ...]
    rho_hat: float
    rho_star: float
    null_value: float
    z: float
    p_value: float
    se: float
    n_effective: int
    significance: float
    rejected: bool
    folds: tuple[FoldEstimate, ...] = field(default=())
    theta: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["Z"] = list(self.Z)
        d["folds"] = [asdict(f) for f in self.folds]
        return d

    def summary(self) -> str:
        cond = ",".join(self.Z) if self.Z else "{}"
        return (
            f"tau={self.tau:g} {self.y}~{self.x}|{cond} n={self.n_effective} "
            f"rho={self.rho_hat:.4f} rho*={self.rho_star:+.4f} z={self.z:+.3f} "
            f"p={self.p_value:.4g}"
        )


@dataclass(frozen=True)
class MarginModels:
    """Quantile fits of one variable at tau and tau -/+ h on one training fold."""

    fit: QuantileFit
    lo: QuantileFit
    hi: QuantileFit
    h: float


def fit_margin_models(
    Z: np.ndarray | None, y: np.ndarray, tau: float, rule: BandwidthRule = "hall_sheather"
) -> MarginModels:
    h = bandwidth(y.size, tau, rule)
    return MarginModels(fit_qr(Z, y, tau), fit_qr(Z, y, tau - h), fit_qr(Z, y, tau + h), h)


def check_sample_size(n: int, K: int, n_cond: int, tau: float) -> None:
    need = max(5 * K, 10 * (n_cond + 1))
    if n < need:
        raise InsufficientDataError(f"need at least {need} complete rows, got {n}")
    # the pooled estimate averages all folds, so require one expected joint
    # exceedance over the whole sample rather than per fold
    if n * _tail(tau) ** 2 < 1 - _FLOOR_TOL:
        raise InsufficientDataError("tau too extreme for n")


def _cond_density(
    Zt: np.ndarray | None,
    target: np.ndarray,
    partner_beyond: np.ndarray,
    level: float,
    Z_eval: np.ndarray | None,
    n_eval: int,
    rule: BandwidthRule,
) -> np.ndarray:
    """Sandwich density of ``target`` among training rows whose partner is in its tail.

    The density is taken at the conditional quantile level ``level`` of that
    sub-sample, which is where the unconditional quantile sits when the joint
    tail probability equals the hypothesised value.
    """
    Zs = None if Zt is None else Zt[partner_beyond]
    ys = target[partner_beyond]
    n_par = 0 if Zt is None else Zt.shape[1]
    if ys.size < max(10 * (n_par + 1), 20):
        raise QuaccError("too few tail rows for conditional density")
    level = min(max(level, 0.02), 0.98)
    h = bandwidth(ys.size, level, rule)
    hi = fit_qr(Zs, ys, level + h)
    lo = fit_qr(Zs, ys, level - h)
    dens, _ = sandwich_density(hi, lo, _eval(Z_eval, n_eval), h, crossing_floor(ys))
    return np.broadcast_to(dens, (n_eval,)).astype(float)


def _eval(Z: np.ndarray | None, n: int) -> np.ndarray:
    """Covariate rows to evaluate fits at; zero-width for intercept-only models."""
    return np.empty((n, 0)) if Z is None else Z


def quacc_test(
    data: Dataset,
    y: str,
    x: str,
    Z: Sequence[str] = (),
    tau: float = 0.5,
    K: int = 5,
    rng: np.random.Generator | int = 0,
    significance: float = 0.05,
    *,
    bandwidth_rule: BandwidthRule = "hall_sheather",
    theta: float | None = None,
    cache: MutableMapping[Hashable, MarginModels] | None = None,
) -> QuaccResult:
    """Estimate QuACC of ``(y, x)`` given ``Z`` with K-fold cross-fitting and test it.

    The default null is independence (``rho = null_value(tau)``); pass
    ``theta`` to test ``rho = theta`` instead, which uses the full variance
    with the cross term and tail-conditional densities.

    ``cache`` memoises the per-fold quantile fits. It is keyed on the row
    set, the seed, and the variables, so it must only be shared between
    calls on the same ``data`` with an integer ``rng``.
    """
    Z = tuple(Z)
    if y == x:
        raise QuaccError("degenerate pair: y and x are the same column")
    if y in Z or x in Z:
        raise QuaccError("conditioning set contains a tested variable")
    if len(set(Z)) != len(Z):
        raise QuaccError("duplicate names in the conditioning set")
    if not 0.0 < tau < 1.0:
        raise QuaccError(f"tau must lie in (0, 1), got {tau}")
    if not K >= 2:
        raise QuaccError("K must be at least 2")
    null = null_value(tau)
    if theta is not None and not 0 <= theta <= upper_bound(tau):
        raise QuaccError(f"theta={theta} outside [0, {upper_bound(tau)}]")

    names = [y, x, *Z]
    try:
        keep = complete_rows(data, names)
    except DataError as exc:
        raise QuaccError(str(exc)) from exc
    n = int(keep.sum())
    check_sample_size(n, K, len(Z), tau)

    vals = data.matrix(names)[keep]
    yv, xv = vals[:, 0], vals[:, 1]
    Zm = vals[:, 2:] if Z else None

    if isinstance(rng, (int, np.integer)):
        seed_key: Hashable = int(rng)
        folds = kfold_split(n, K, np.random.default_rng(int(rng)))
    else:
        seed_key = None
        folds = kfold_split(n, K, rng)
    use_cache = cache is not None and seed_key is not None
    rows_key = hash(keep.tobytes()) if use_cache else None

    def margin(name: str, values: np.ndarray, k: int, train: np.ndarray) -> MarginModels:
        key = (rows_key, seed_key, K, name, Z, tau, bandwidth_rule, k)
        if use_cache and key in cache:
            return cache[key]
        mm = fit_margin_models(None if Zm is None else Zm[train], values[train], tau, bandwidth_rule)
        if use_cache:
            cache[key] = mm
        return mm

    fold_estimates = []
    for k in range(K):
        try:
            fe = _one_fold(k, folds, yv, xv, Zm, y, x, tau, theta, bandwidth_rule, margin)
        except (QuantRegError, QuaccError) as exc:
            raise QuaccError(f"fold {k}: {exc}") from exc
        fold_estimates.append(fe)

    rho_hat = float(np.mean([f.rho_k for f in fold_estimates]))
    se = math.sqrt(sum(f.var_k / f.n_k for f in fold_estimates)) / K
    center = null if theta is None else theta
    z = (rho_hat - center) / se
    p = float(min(1.0, 2.0 * norm.sf(abs(z))))
    rho_star = normalize(min(max(rho_hat, 0.0), upper_bound(tau)), tau)
    return QuaccResult(
        tau=float(tau),
        y=y,
        x=x,
        Z=Z,
        rho_hat=rho_hat,
        rho_star=rho_star,
        null_value=null,
        z=float(z),
        p_value=p,
        se=se,
        n_effective=n,
        significance=float(significance),
        rejected=p < significance,
        folds=tuple(fold_estimates),
        theta=theta,
    )


def _one_fold(k, folds: FoldAssignment, yv, xv, Zm, y_name, x_name, tau, theta, rule, margin) -> FoldEstimate:
    test = folds.fold_of_row == k
    train = ~test
    n_k = int(test.sum())
    n_train = int(train.sum())
    Ztest = None if Zm is None else Zm[test]
    Ztrain = None if Zm is None else Zm[train]
    my = margin(y_name, yv, k, train)
    mx = margin(x_name, xv, k, train)

    ev_test = _eval(Ztest, n_k)
    ev_train = _eval(Ztrain, n_train)
    qy = np.broadcast_to(predict(my.fit, ev_test), (n_k,))
    qx = np.broadcast_to(predict(mx.fit, ev_test), (n_k,))
    rho_k = rho_fold(yv[test], xv[test], qy, qx, tau)

    floor_y = crossing_floor(yv[train])
    floor_x = crossing_floor(xv[train])
    fy_train, cy = sandwich_density(my.hi, my.lo, ev_train, my.h, floor_y)
    fx_train, cx = sandwich_density(mx.hi, mx.lo, ev_train, mx.h, floor_x)
    fy_test, cy2 = sandwich_density(my.hi, my.lo, ev_test, my.h, floor_y)
    fx_test, cx2 = sandwich_density(mx.hi, mx.lo, ev_test, mx.h, floor_x)
    crossings = int(np.sum(cy) + np.sum(cx) + np.sum(cy2) + np.sum(cx2))

    # average prediction variance over held-out rows, per training observation
    lim_y = design_limits(Ztrain, np.broadcast_to(fy_train, (n_train,)), tau)
    lim_x = design_limits(Ztrain, np.broadcast_to(fx_train, (n_train,)), tau)
    sigma2_qy = float(np.mean(qr_variance(lim_y, ev_test))) / n_train
    sigma2_qx = float(np.mean(qr_variance(lim_x, ev_test))) / n_train

    vxy = v_xy(qy, qx) if n_k >= 2 else 0.0
    if theta is None:
        ky, kx = kappa_weights(tau, np.broadcast_to(fy_test, (n_k,)), np.broadcast_to(fx_test, (n_k,)))
        vt = v_tau(tau, null_value(tau))
        var_k = fold_variance(tau, ky, kx, sigma2_qy, sigma2_qx, vxy, vt, cross=False)
    else:
        ky, kx = _conditional_kappas(
            tau, theta, yv[train], xv[train], Ztrain, Ztest, n_k, my, mx, ev_train, rule
        )
        vt = v_tau(tau, theta)
        var_k = fold_variance(tau, ky, kx, sigma2_qy, sigma2_qx, vxy, vt, cross=True)
    return FoldEstimate(k, n_k, rho_k, var_k, ky, kx, sigma2_qy, sigma2_qx, vt, vxy, crossings)


def _conditional_kappas(tau, theta, ytr, xtr, Ztrain, Ztest, n_k, my, mx, ev_train, rule):
    qy_tr = predict(my.fit, ev_train)
    qx_tr = predict(mx.fit, ev_train)
    if _upper(tau):
        y_beyond, x_beyond = ytr > qy_tr, xtr > qx_tr
        # level of the unconditional quantile inside the tail sub-sample
        level = 1.0 - theta / _tail(tau)
    else:
        y_beyond, x_beyond = ytr < qy_tr, xtr < qx_tr
        level = theta / _tail(tau)
    fx = _cond_density(Ztrain, xtr, y_beyond, level, Ztest, n_k, rule)
    fy = _cond_density(Ztrain, ytr, x_beyond, level, Ztest, n_k, rule)
    return kappa_weights(tau, fy, fx)
