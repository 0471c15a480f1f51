"""Bootstrap confidence intervals, lag-order selection, forecasting.

The residual bootstrap recenters fitted residuals, redraws them with
replacement, rebuilds panels through the fitted recursion, and refits
the same estimator on each draw; covariates are treated as fixed
regressors.  For a feasible-GLS base fit the estimated error covariance
is held fixed across draws.  Draw indices are generated in one block up
front, so results do not depend on chunking or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import error_covariance as ec
from .errors import DataError, NumericalError
from .estimation import (
    CompactPanel,
    RidgePenalty,
    build_panel,
    fit_egls,
    fit_ols,
    FitResult,
)
from .model import CoefVector, build_design

__all__ = [
    "BootstrapResult",
    "QSelection",
    "residual_bootstrap",
    "select_q_bic",
    "forecast_one_step",
    "pmse",
]

#: burn-in steps prepended when rebuilding bootstrap panels of order > 1
BOOT_BURN_IN = 50


@dataclass(frozen=True)
class BootstrapResult:
    """Percentile bootstrap intervals around a base fit.

    draws holds the retained coefficient vectors over the free
    positions; ci_lo/ci_hi are in full layout with NaN padding.
    """

    beta_hat: CoefVector
    draws: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    level: float
    b_reps: int
    n_fail: int
    estimator: str

    def __post_init__(self):
        for arr in (self.draws, self.ci_lo, self.ci_hi):
            np.asarray(arr).setflags(write=False)


def _coef_arrays(fit: FitResult):
    """Per-lag coefficient vectors used to drive the bootstrap recursion."""
    beta = fit.beta
    a = [beta.a_block(l) for l in range(1, fit.q1 + 1)]
    b = [beta.b_block(l) for l in range(1, fit.q2 + 1)]
    return a, b, beta.gamma_matrix()


def _rebuild_paths(fit: FitResult, eta: np.ndarray, idx: np.ndarray,
                   y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Recursively rebuild bootstrap panels for a block of draws.

    idx: (B, n_draws) residual row indices; returns (B, q + T_eff, N).
    Order-1 fits follow the resampling scheme exactly (one draw seeds
    the initial value, no burn-in); higher orders seed each initial lag
    with an independent draw and discard a short burn-in.
    """
    bsize = idx.shape[0]
    n, q, t_eff = fit.n, fit.q, fit.t_eff
    a, b, gamma = _coef_arrays(fit)
    p = fit.p
    burn = 0 if q == 1 else BOOT_BURN_IN
    # covariate contribution per response row, identical across draws
    if p:
        gy = np.einsum("ik,tik->ti", gamma, y)  # y[t] drives response row t
    else:
        gy = np.zeros((t_eff, n))
    eps = eta[idx]  # (B, n_draws, N)
    path = np.empty((bsize, burn + q + t_eff, n))
    path[:, :q] = eps[:, :q]
    pos = q
    for s in range(burn):
        cur = eps[:, q + s].copy()
        for l in range(1, q + 1):
            lagged = path[:, pos - l]
            if l <= fit.q1:
                cur += lagged * a[l - 1]
            if l <= fit.q2:
                cur += (lagged @ w.T) * b[l - 1]
        path[:, pos] = cur
        pos += 1
    for t in range(t_eff):
        cur = eps[:, q + burn + t] + gy[t]
        for l in range(1, q + 1):
            lagged = path[:, pos - l]
            if l <= fit.q1:
                cur += lagged * a[l - 1]
            if l <= fit.q2:
                cur += (lagged @ w.T) * b[l - 1]
        path[:, pos] = cur
        pos += 1
    return path[:, burn:]


def _batch_design(fit: FitResult, paths: np.ndarray, y: np.ndarray,
                  w: np.ndarray):
    """Compact designs for a block of rebuilt panels: (B, T_eff, N, K)."""
    bsize = paths.shape[0]
    n, q, p, t_eff = fit.n, fit.q, fit.p, fit.t_eff
    k = 2 * q + p
    v = np.empty((bsize, t_eff, n, k))
    wp = paths @ w.T
    for l in range(1, q + 1):
        sl = slice(q - l, q - l + t_eff)
        v[:, :, :, 2 * (l - 1)] = paths[:, sl]
        v[:, :, :, 2 * (l - 1) + 1] = wp[:, sl]
    for kk in range(p):
        v[:, :, :, 2 * q + kk] = y[:, :, kk][None, :, :]
    return v


def _refit_ols_batch(panel_free_blocks, v, resp):
    """Node-by-node normal equations for every draw at once."""
    vf = v[:, :, :, panel_free_blocks]  # (B, T, N, Kf)
    gram = np.einsum("btia,btic->biac", vf, vf)
    rhs = np.einsum("btia,bti->bia", vf, resp)
    return np.linalg.solve(gram, rhs[..., None])[..., 0]  # (B, N, Kf)


def _refit_gls_batch(free_idx, k, m_inv, v, resp):
    """Full weighted normal equations per draw (fixed inverse covariance)."""
    bsize, t_eff, n, _ = v.shape
    vr = np.ascontiguousarray(v.transpose(0, 1, 3, 2)).reshape(bsize, t_eff, -1)
    gram = np.matmul(vr.transpose(0, 2, 1), vr) * np.tile(m_inv, (k, k))
    xw = resp @ m_inv.T
    rhs = np.einsum("btia,bti->bai", v, xw).reshape(bsize, -1)
    gf = gram[:, free_idx[:, None], free_idx[None, :]]
    return np.linalg.solve(gf, rhs[:, free_idx, None])[..., 0]  # (B, d_free)


def _scatter_node_major(sol, free_blocks, n):
    """(B, N, Kf) node-major solutions -> (B, d_free) layout order."""
    bsize = sol.shape[0]
    kf = len(free_blocks)
    out = np.empty((bsize, kf * n))
    for j in range(kf):
        out[:, j * n : (j + 1) * n] = sol[:, :, j]
    return out


def residual_bootstrap(x, y, w, q1: int, q2: int, estimator: str = "ols",
                       b_reps: int = 500, level: float = 0.95, seed=0,
                       cov: str = "sar", phi=None, pen: RidgePenalty | None = None,
                       chunk: int = 128, max_fail_frac: float = 0.05,
                       threads: int = 1) -> BootstrapResult:
    """Residual bootstrap percentile intervals for OLS or feasible GLS.

    Fits the base estimator, recenters its residuals, and for each of
    b_reps draws resamples them with replacement, rebuilds the panel
    from the fitted coefficients (covariates fixed), and refits.  For
    estimator "egls" the error covariance fitted on the original data
    is held fixed across draws.  Draws whose refit fails numerically
    are dropped; more than max_fail_frac failures aborts.
    """
    if not 0 < level < 1:
        raise DataError(f"level must be in (0, 1), got {level}")
    if b_reps < 2:
        raise DataError(f"b_reps must be at least 2, got {b_reps}")
    if estimator == "ols":
        base = fit_ols(x, y, w, q1, q2)
        m_inv = None
    elif estimator == "egls":
        base = fit_egls(x, y, w, q1, q2, cov=cov, phi=phi, pen=pen)
        m_inv = ec.sigma_inverse(base.sigma_detail)
    else:
        raise DataError(
            f"bootstrap supports 'ols' and 'egls', got {estimator!r}"
        )
    w = np.asarray(w, dtype=float)
    panel = build_panel(x, y, w, q1, q2)
    y_resp = None
    if base.p:
        y_arr = np.asarray(y, dtype=float)
        if y_arr.ndim == 2:
            y_arr = y_arr[:, :, None]
        # covariate rows aligned with responses: row t uses y[q - 1 + t]
        y_resp = y_arr[base.q - 1 : base.q - 1 + base.t_eff]
    eta = base.residuals - base.residuals.mean(axis=0)
    q = base.q
    burn = 0 if q == 1 else BOOT_BURN_IN
    n_draws = q + burn + base.t_eff

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    idx_all = rng.integers(0, base.t_eff, size=(b_reps, n_draws))

    free_blocks = panel.free_blocks()
    free_idx = panel.free_idx()
    k = panel.k

    def run_chunk(idx):
        paths = _rebuild_paths(base, eta, idx, y_resp, w)
        v = _batch_design(base, paths, y_resp, w)
        resp = paths[:, q:]
        try:
            if m_inv is None:
                sol = _refit_ols_batch(free_blocks, v, resp)
                return _scatter_node_major(sol, free_blocks, base.n), 0
            return _refit_gls_batch(free_idx, k, m_inv, v, resp), 0
        except np.linalg.LinAlgError:
            rows, fails = [], 0
            for b in range(idx.shape[0]):
                try:
                    if m_inv is None:
                        s1 = _refit_ols_batch(free_blocks, v[b : b + 1],
                                              resp[b : b + 1])
                        rows.append(
                            _scatter_node_major(s1, free_blocks, base.n)[0]
                        )
                    else:
                        rows.append(
                            _refit_gls_batch(free_idx, k, m_inv,
                                             v[b : b + 1], resp[b : b + 1])[0]
                        )
                except np.linalg.LinAlgError:
                    fails += 1
            out = (np.vstack(rows) if rows
                   else np.empty((0, free_idx.size)))
            return out, fails

    chunks = [idx_all[i : i + chunk] for i in range(0, b_reps, chunk)]
    results = []
    if threads > 1 and len(chunks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_chunk, chunks))
    else:
        results = [run_chunk(c) for c in chunks]
    draws = np.vstack([r[0] for r in results])
    n_fail = sum(r[1] for r in results)
    if n_fail > max_fail_frac * b_reps:
        raise NumericalError(
            f"{n_fail} of {b_reps} bootstrap refits failed "
            f"(limit {max_fail_frac:.0%})"
        )
    alpha = (1.0 - level) / 2.0
    lo_f = np.quantile(draws, alpha, axis=0)
    hi_f = np.quantile(draws, 1.0 - alpha, axis=0)
    ci_lo = np.full(base.beta.size, np.nan)
    ci_hi = np.full(base.beta.size, np.nan)
    ci_lo[free_idx] = lo_f
    ci_hi[free_idx] = hi_f
    return BootstrapResult(
        beta_hat=base.beta, draws=draws, ci_lo=ci_lo, ci_hi=ci_hi,
        level=level, b_reps=b_reps, n_fail=n_fail, estimator=estimator,
    )


@dataclass(frozen=True)
class QSelection:
    """Lag order chosen by BIC over a common sample window."""

    q_hat: int
    bic_values: np.ndarray
    regularized: tuple
    t_common: int


def select_q_bic(x, y, w, qmax: int) -> QSelection:
    """BIC over symmetric lag orders 1..qmax.

    Every candidate is fitted by least squares on the window whose
    responses start at qmax, so all criteria share one sample.
    BIC(q) = log|Sigma_hat(q)| + (2Nq + p) log(T)/T on that window; a
    singular residual covariance is jittered by 1e-8 tr/N and flagged.
    """
    if qmax < 1:
        raise DataError(f"qmax must be at least 1, got {qmax}")
    x = np.asarray(x, dtype=float)
    t_len, n = x.shape
    y_arr = None
    if y is not None:
        y_arr = np.asarray(y, dtype=float)
        if y_arr.ndim == 2:
            y_arr = y_arr[:, :, None]
    p = 0 if y_arr is None else y_arr.shape[2]
    t_common = t_len - qmax
    if t_common < 2:
        raise DataError(
            f"panel of length {t_len} too short for qmax={qmax}"
        )
    bics = np.full(qmax, np.inf)
    flags = [False] * qmax
    for qq in range(1, qmax + 1):
        start = qmax - qq
        sub_y = None if y_arr is None else y_arr[start:]
        try:
            fit = fit_ols(x[start:], sub_y, w, qq, qq)
        except NumericalError:
            flags[qq - 1] = True
            continue
        sigma = fit.sigma_eps
        eigs = np.linalg.eigvalsh(sigma)
        if eigs[0] <= 0 or eigs[0] < 1e-12 * eigs[-1]:
            delta = 1e-8 * np.trace(sigma) / n
            flags[qq - 1] = True
            if delta <= 0:
                continue
            eigs = eigs + delta
            if eigs[0] <= 0:
                continue
        logdet = float(np.sum(np.log(eigs)))
        bics[qq - 1] = logdet + (2 * n * qq + p) * np.log(t_common) / t_common
    if not np.any(np.isfinite(bics)):
        raise NumericalError("BIC degenerate for every candidate lag order")
    q_hat = int(np.argmin(bics)) + 1
    return QSelection(q_hat=q_hat, bic_values=bics, regularized=tuple(flags),
                      t_common=t_common)


def forecast_one_step(fit: FitResult, x_history, y_prev=None) -> np.ndarray:
    """One-step-ahead point forecast from the fitted coefficients.

    x_history: (>= q, N) most recent rows of the panel in time order
    (last row is the latest observation); y_prev: (N, p) covariates
    observed alongside that last row.
    """
    x_history = np.atleast_2d(np.asarray(x_history, dtype=float))
    q = fit.q
    if x_history.shape[0] < q or x_history.shape[1] != fit.n:
        raise DataError(
            f"history must supply at least {q} rows of {fit.n} nodes"
        )
    if fit.p and y_prev is None:
        raise DataError(f"fit uses {fit.p} covariates; y_prev is required")
    if y_prev is not None:
        y_prev = np.asarray(y_prev, dtype=float)
        if fit.p == 0:
            y_prev = None
        elif y_prev.shape != (fit.n, fit.p):
            raise DataError(
                f"y_prev must be ({fit.n}, {fit.p}), got {y_prev.shape}"
            )
    recent = x_history[-q:][::-1]
    z = build_design(recent, y_prev, fit.w).z
    return z @ fit.beta.values


def pmse(fit: FitResult, x, y=None) -> float:
    """Mean squared one-step-ahead prediction error over a window.

    The first q rows of x seed the lags; every later row is scored
    against its one-step forecast built from realized lags:
    (N |T|)^-1 sum_t ||X_t - Z_{t-1} beta_hat||^2.
    """
    x = np.asarray(x, dtype=float)
    panel = build_panel(x, y, fit.w, fit.q1, fit.q2)
    if panel.p != fit.p:
        raise DataError(
            f"fit uses {fit.p} covariates but the window carries {panel.p}"
        )
    beta_mat = fit.beta.values.reshape(panel.k, fit.n)
    pred = np.einsum("tia,ai->ti", panel.v, beta_mat)
    err = panel.resp - pred
    return float(np.sum(err * err) / err.size)
