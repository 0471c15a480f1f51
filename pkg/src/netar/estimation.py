"""Estimators for the stacked network autoregression.

All estimators share one compact design: row i of Z_{t-1} has exactly
2q + p nonzeros, one per block, at columns congruent to i mod N.  With
V the (T, N, 2q+p) array of those values and Vr its (T, (2q+p)N)
reshape in coefficient order,

    sum_t Z_{t-1}' M Z_{t-1} = (Vr' Vr) * tile(M)

elementwise for any N x N weighting M (identity for OLS, an inverse
covariance for GLS, a residual covariance for the sandwich middle).
One GEMM builds the Gram; dense Z is never materialized per period.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DataError, NumericalError
from .model import CoefVector

__all__ = [
    "RidgePenalty",
    "FitResult",
    "ContrastMatrix",
    "ConfidenceRegion",
    "CompactPanel",
    "build_panel",
    "fit_ols",
    "fit_ridge_ols",
    "fit_gls",
    "fit_ridge_gls",
    "fit_egls",
    "confidence_intervals",
    "confidence_region",
    "ESTIMATORS",
]


@dataclass(frozen=True)
class RidgePenalty:
    """Per-group ridge weights: lam_a on self-lags, lam_b on network
    lags, lam_gamma on covariates.  The solved system adds T * diag(M)."""

    lam_a: float
    lam_b: float
    lam_gamma: float

    def __post_init__(self):
        for v in (self.lam_a, self.lam_b, self.lam_gamma):
            if v < 0 or not np.isfinite(v):
                raise DataError(f"ridge weights must be nonnegative, got {v}")

    @classmethod
    def default(cls, t_eff: int) -> "RidgePenalty":
        # o(T^-1/2) rate keeps the penalized estimator first-order
        # equivalent to the unpenalized one
        lam = float(t_eff) ** -0.6
        return cls(lam, lam, lam)


@dataclass(frozen=True)
class CompactPanel:
    """Design in compact form for t = q .. T-1.

    v[t, i, blk] holds the node-i value of block blk at response index
    t; block order is (a, b) per lag then one block per covariate,
    matching the coefficient layout.
    """

    v: np.ndarray  # (T_eff, N, K)
    resp: np.ndarray  # (T_eff, N)
    n: int
    q1: int
    q2: int
    p: int

    @property
    def q(self) -> int:
        return max(self.q1, self.q2)

    @property
    def k(self) -> int:
        return 2 * self.q + self.p

    @property
    def t_eff(self) -> int:
        return self.resp.shape[0]

    @property
    def n_coef(self) -> int:
        return self.n * self.k

    def vr(self) -> np.ndarray:
        """(T_eff, K*N) reshape; column blk*N + i is (block blk, node i)."""
        t = self.t_eff
        return np.ascontiguousarray(self.v.transpose(0, 2, 1)).reshape(t, -1)

    def free_blocks(self) -> np.ndarray:
        """Indices of blocks that carry estimated coefficients."""
        blocks = []
        for lag in range(1, self.q + 1):
            if lag <= self.q1:
                blocks.append(2 * (lag - 1))
            if lag <= self.q2:
                blocks.append(2 * (lag - 1) + 1)
        blocks.extend(range(2 * self.q, 2 * self.q + self.p))
        return np.asarray(blocks, dtype=int)

    def free_idx(self) -> np.ndarray:
        """Free coefficient positions in stacked layout order."""
        mask = np.zeros(self.n_coef, dtype=bool)
        for blk in self.free_blocks():
            mask[blk * self.n : (blk + 1) * self.n] = True
        return np.flatnonzero(mask)


def _check_panel_inputs(x, y, w, q1, q2):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DataError(f"panel must be (T, N), got shape {x.shape}")
    t_len, n = x.shape
    if not np.all(np.isfinite(x)):
        raise DataError("panel contains non-finite values")
    w = np.asarray(w, dtype=float)
    if w.shape != (n, n):
        raise DataError(f"weight matrix shape {w.shape} does not match {n} nodes")
    if not np.all(np.isfinite(w)):
        raise DataError("weight matrix contains non-finite values")
    if np.any(np.abs(np.diag(w)) > 1e-10):
        raise DataError("weight matrix diagonal must be zero")
    if q1 < 1 or q2 < 1:
        raise DataError(f"lag orders must be at least 1, got ({q1}, {q2})")
    if y is None:
        y = np.zeros((t_len, n, 0))
    else:
        y = np.asarray(y, dtype=float)
        if y.ndim == 2:
            y = y[:, :, None]
        if y.shape[:2] != (t_len, n):
            raise DataError(
                f"covariates shaped {y.shape} do not align with panel ({t_len}, {n})"
            )
        if not np.all(np.isfinite(y)):
            raise DataError("covariates contain non-finite values")
    q = max(q1, q2)
    if t_len < q + 2:
        raise DataError(
            f"panel of length {t_len} too short for lag order {q} (need >= {q + 2})"
        )
    return x, y, w


def build_panel(x, y, w, q1: int, q2: int) -> CompactPanel:
    """Assemble the compact design from a raw panel.

    x : (T, N) observations; y : (T, N, p) covariates or None;
    responses are rows q..T-1, each using lags and the previous row of y.
    """
    x, y, w = _check_panel_inputs(x, y, w, q1, q2)
    t_len, n = x.shape
    p = y.shape[2]
    q = max(q1, q2)
    t_eff = t_len - q
    k = 2 * q + p
    wx = x @ w.T
    v = np.empty((t_eff, n, k))
    for lag in range(1, q + 1):
        sl = slice(q - lag, t_len - lag)
        v[:, :, 2 * (lag - 1)] = x[sl]
        v[:, :, 2 * (lag - 1) + 1] = wx[sl]
    for kk in range(p):
        v[:, :, 2 * q + kk] = y[q - 1 : t_len - 1, :, kk]
    return CompactPanel(v=v, resp=x[q:].copy(), n=n, q1=q1, q2=q2, p=p)


def _tile_gram(c: np.ndarray, m: np.ndarray, k: int) -> np.ndarray:
    return c * np.tile(m, (k, k))


def _rhs(panel: CompactPanel, xw: np.ndarray) -> np.ndarray:
    """sum_t Z' (M x_t) given xw = x @ M' stacked (T_eff, N)."""
    return np.einsum("tia,ti->ai", panel.v, xw).ravel()


def _ridge_diag(panel: CompactPanel, pen: RidgePenalty) -> np.ndarray:
    """Penalty weights aligned with the free positions."""
    per_block = []
    for lag in range(1, panel.q + 1):
        if lag <= panel.q1:
            per_block.append(pen.lam_a)
        if lag <= panel.q2:
            per_block.append(pen.lam_b)
    per_block.extend([pen.lam_gamma] * panel.p)
    return np.repeat(per_block, panel.n)


def _solve(a: np.ndarray, rhs: np.ndarray, context: str):
    try:
        sol = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"{context}: design Gram is singular; the panel is too short or "
            "collinear for this many coefficients, consider a ridge estimator"
        ) from None
    if not np.all(np.isfinite(sol)):
        raise NumericalError(f"{context}: non-finite solution")
    return sol


def _inv(a: np.ndarray, context: str):
    try:
        return np.linalg.inv(a)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{context}: matrix not invertible") from None


@dataclass(frozen=True)
class FitResult:
    """Fitted coefficients with their sampling covariance.

    vcov, bread, and qhat are indexed by the free coefficients (padding
    for lags beyond q1 or q2 carries no rows).  sigma_eps is the
    residual covariance estimate (1/T) sum e_t e_t'.
    """

    beta: CoefVector
    residuals: np.ndarray
    vcov: np.ndarray
    sigma_eps: np.ndarray
    estimator: str
    sigma_kind: str
    n: int
    q1: int
    q2: int
    p: int
    t_eff: int
    w: np.ndarray
    free_idx: np.ndarray
    bread: np.ndarray
    qhat: np.ndarray
    penalty: RidgePenalty | None = None
    sigma_detail: object = None

    def __post_init__(self):
        for arr in (self.residuals, self.vcov, self.sigma_eps, self.w,
                    self.free_idx, self.bread, self.qhat):
            np.asarray(arr).setflags(write=False)

    @property
    def q(self) -> int:
        return max(self.q1, self.q2)

    def se(self) -> np.ndarray:
        """Standard errors in full layout; padded positions are NaN."""
        d = np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))
        out = np.full(self.beta.size, np.nan)
        out[self.free_idx] = d
        return out


def _finish_fit(panel, w, beta_free, resid, vcov, bread, qhat, estimator,
                sigma_kind, penalty=None, sigma_detail=None) -> FitResult:
    full = np.zeros(panel.n_coef)
    full[panel.free_idx()] = beta_free
    beta = CoefVector(full, panel.n, panel.q1, panel.q2, panel.p)
    sigma_eps = resid.T @ resid / panel.t_eff
    return FitResult(
        beta=beta, residuals=resid, vcov=vcov, sigma_eps=sigma_eps,
        estimator=estimator, sigma_kind=sigma_kind, n=panel.n, q1=panel.q1,
        q2=panel.q2, p=panel.p, t_eff=panel.t_eff, w=w,
        free_idx=panel.free_idx(), bread=bread, qhat=qhat,
        penalty=penalty, sigma_detail=sigma_detail,
    )


def _fit_weighted(x, y, w, q1, q2, m_inv, pen, estimator, sigma_kind,
                  sigma_detail=None, panel=None):
    """Shared core: m_inv is the row weighting (None for identity)."""
    if panel is None:
        panel = build_panel(x, y, w, q1, q2)
        w = np.asarray(w, dtype=float)
    free = panel.free_idx()
    vr = panel.vr()
    c = vr.T @ vr
    k = panel.k
    n, t_eff = panel.n, panel.t_eff
    if m_inv is None:
        gram = _tile_gram(c, np.eye(n), k)
        xw = panel.resp
    else:
        m_inv = np.asarray(m_inv, dtype=float)
        if m_inv.shape != (n, n):
            raise DataError(f"covariance must be ({n}, {n}), got {m_inv.shape}")
        gram = _tile_gram(c, m_inv, k)
        xw = panel.resp @ m_inv.T
    a_free = gram[np.ix_(free, free)]
    rhs = _rhs(panel, xw)[free]
    bread = a_free
    if pen is not None:
        bread = a_free + t_eff * np.diag(_ridge_diag(panel, pen))
    beta_free = _solve(bread, rhs, estimator)

    # residuals via the compact design: fitted values sum over blocks
    beta_mat = np.zeros((k, n))
    beta_mat.ravel()[free] = beta_free
    fitted = np.einsum("tia,ai->ti", panel.v, beta_mat)
    resid = panel.resp - fitted
    sigma_eps = resid.T @ resid / t_eff

    if m_inv is None:
        middle = _tile_gram(c, sigma_eps, k)[np.ix_(free, free)]
    else:
        # sandwich middle for weighted fits is the weighted Gram itself
        middle = a_free
    bread_inv = _inv(bread, estimator)
    vcov = bread_inv @ middle @ bread_inv.T
    qhat = middle / t_eff
    return _finish_fit(panel, w, beta_free, resid, vcov, bread, qhat,
                       estimator, sigma_kind, pen, sigma_detail)


def fit_ols(x, y, w, q1: int, q2: int) -> FitResult:
    """Equation-by-equation least squares on the stacked design.

    The sampling covariance is the sandwich
    (sum Z'Z)^-1 (sum Z' S Z) (sum Z'Z)^-1 with S the residual
    covariance estimate.
    """
    return _fit_weighted(x, y, w, q1, q2, None, None, "ols", "identity")


def fit_ridge_ols(x, y, w, q1: int, q2: int,
                  pen: RidgePenalty | None = None) -> FitResult:
    """Least squares with a per-group ridge: solves
    (sum Z'Z + T M) beta = sum Z'X."""
    panel = build_panel(x, y, w, q1, q2)
    if pen is None:
        pen = RidgePenalty.default(panel.t_eff)
    return _fit_weighted(x, y, np.asarray(w, dtype=float), q1, q2, None, pen,
                         "ridge_ols", "identity", panel=panel)


def fit_gls(x, y, w, q1: int, q2: int, sigma: np.ndarray) -> FitResult:
    """Generalized least squares with a known error covariance.

    beta = (sum Z' Sigma^-1 Z)^-1 sum Z' Sigma^-1 X and
    vcov = (sum Z' Sigma^-1 Z)^-1.
    """
    sigma = np.asarray(sigma, dtype=float)
    m_inv = _inv_psd(sigma, "gls covariance")
    return _fit_weighted(x, y, w, q1, q2, m_inv, None, "gls", "fixed")


def fit_ridge_gls(x, y, w, q1: int, q2: int, sigma: np.ndarray,
                  pen: RidgePenalty | None = None) -> FitResult:
    """GLS with the same per-group ridge as fit_ridge_ols."""
    panel = build_panel(x, y, w, q1, q2)
    if pen is None:
        pen = RidgePenalty.default(panel.t_eff)
    sigma = np.asarray(sigma, dtype=float)
    m_inv = _inv_psd(sigma, "gls covariance")
    return _fit_weighted(x, y, np.asarray(w, dtype=float), q1, q2, m_inv, pen,
                         "ridge_gls", "fixed", panel=panel)


def _inv_psd(sigma: np.ndarray, context: str) -> np.ndarray:
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DataError(f"{context} must be square, got shape {sigma.shape}")
    try:
        cf = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{context} is not positive definite") from None
    inv_chol = np.linalg.solve(cf, np.eye(sigma.shape[0]))
    return inv_chol.T @ inv_chol


def fit_egls(x, y, w, q1: int, q2: int, cov: str = "sar", phi=None,
             kmax: int | None = None, k: int | None = None,
             pen: RidgePenalty | None = None, ridge: bool | None = None,
             iterate: bool = False, max_iter: int = 20,
             tol: float = 1e-8) -> FitResult:
    """Estimated GLS: pilot least squares, residual covariance fit, GLS.

    cov selects the residual covariance family: "sar" (needs phi) fits a
    spatial autoregression by profile QMLE; "factor" extracts principal
    factors (k fixed, or selected up to kmax by information criterion).
    The pilot step uses ridge when the plain Gram is singular or when
    the cross-section outnumbers the effective sample (ridge=None picks
    automatically).  With iterate=True the covariance fit and GLS step
    alternate to convergence.
    """
    from . import error_covariance as ec

    panel = build_panel(x, y, w, q1, q2)
    w = np.asarray(w, dtype=float)
    use_ridge = ridge
    if use_ridge is None:
        use_ridge = panel.n > panel.t_eff
    if pen is None and use_ridge:
        pen = RidgePenalty.default(panel.t_eff)

    def pilot():
        if use_ridge:
            return _fit_weighted(x, y, w, q1, q2, None, pen, "ridge_ols",
                                 "identity", panel=panel)
        try:
            return _fit_weighted(x, y, w, q1, q2, None, None, "ols",
                                 "identity", panel=panel)
        except NumericalError:
            if ridge is False:
                raise
            return _fit_weighted(x, y, w, q1, q2, None,
                                 pen or RidgePenalty.default(panel.t_eff),
                                 "ridge_ols", "identity", panel=panel)

    fit = pilot()
    last = fit.beta.values
    for _ in range(max(1, max_iter if iterate else 1)):
        if cov == "sar":
            if phi is None:
                raise DataError("egls with cov='sar' needs a phi matrix")
            detail = ec.fit_sar_qmle(fit.residuals, phi)
            sigma = detail.sigma()
            kind = "sar"
        elif cov == "factor":
            if k is None:
                sel = ec.select_k(fit.residuals, kmax=kmax)
                detail = ec.fit_factor(fit.residuals, sel.k_hat)
            else:
                detail = ec.fit_factor(fit.residuals, k)
            sigma = detail.sigma()
            kind = "factor"
        else:
            raise DataError(f"unknown covariance family {cov!r}")
        m_inv = ec.sigma_inverse(detail)
        fit = _fit_weighted(x, y, w, q1, q2, m_inv,
                            pen if use_ridge else None,
                            "egls_" + cov, kind, sigma_detail=detail,
                            panel=panel)
        if not iterate or np.max(np.abs(fit.beta.values - last)) < tol:
            break
        last = fit.beta.values
    return fit


def confidence_intervals(fit: FitResult, level: float = 0.95):
    """Pointwise normal intervals beta_i +/- z sqrt(vcov_ii).

    Returns (lo, hi) in full layout; padded positions are NaN.
    """
    if not 0 < level < 1:
        raise DataError(f"level must be in (0, 1), got {level}")
    z = stats.norm.ppf(0.5 + level / 2.0)
    se = fit.se()
    lo = fit.beta.values - z * se
    hi = fit.beta.values + z * se
    return lo, hi


@dataclass(frozen=True)
class ContrastMatrix:
    """k x n_coef contrast with bounded rows; columns on padded
    positions must be zero."""

    d: np.ndarray

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.d, dtype=float))
        object.__setattr__(self, "d", d)
        if not np.all(np.isfinite(d)):
            raise DataError("contrast matrix has non-finite entries")
        if np.abs(d).sum(axis=1).max() > 1e6:
            raise DataError("contrast rows must have bounded sums")
        if np.linalg.matrix_rank(d) < d.shape[0]:
            raise DataError("contrast rows must be linearly independent")
        d.setflags(write=False)

    @classmethod
    def select(cls, coef: CoefVector, picks) -> "ContrastMatrix":
        """Selection contrast from (kind, lag, node) triples."""
        d = np.zeros((len(picks), coef.size))
        for r, (kind, lag, node) in enumerate(picks):
            d[r, coef.index(kind, lag, node)] = 1.0
        return cls(d)


@dataclass(frozen=True)
class ConfidenceRegion:
    """Elliptical joint region for a k-dimensional contrast.

    contains() accepts the full coefficient vector (the exact pivot) or
    a k-vector of contrast values (lifted through the pseudoinverse).
    shape is the contrast-space quadratic form: the region is
    {v : (v - center)' shape (v - center) <= threshold}.
    """

    center: np.ndarray
    shape: np.ndarray
    threshold: float
    _fit: FitResult = field(repr=False)
    _d: np.ndarray = field(repr=False)

    def contains(self, point) -> bool:
        point = np.asarray(point, dtype=float)
        k = self.center.shape[0]
        if point.shape == (k,) and k != self._fit.beta.size:
            dev = point - self.center
            return bool(dev @ self.shape @ dev <= self.threshold)
        if point.shape != (self._fit.beta.size,):
            raise DataError(
                f"point must have length {k} or {self._fit.beta.size}"
            )
        fit = self._fit
        dev = (fit.beta.values - point)[fit.free_idx]
        kvec = self._d[:, fit.free_idx] @ (fit.bread @ dev) / np.sqrt(fit.t_eff)
        dqd = self._d[:, fit.free_idx] @ fit.qhat @ self._d[:, fit.free_idx].T
        stat = kvec @ _inv(dqd, "confidence region") @ kvec
        return bool(stat <= self.threshold)

    def volume(self) -> float:
        """Lebesgue volume of the contrast-space ellipsoid."""
        from scipy.special import gamma as gamma_fn

        k = self.center.shape[0]
        det = np.linalg.det(self.shape / self.threshold)
        if det <= 0:
            raise NumericalError("degenerate confidence region")
        return float(np.pi ** (k / 2.0) / gamma_fn(k / 2.0 + 1.0) / np.sqrt(det))


def confidence_region(fit: FitResult, d: ContrastMatrix,
                      level: float = 0.95) -> ConfidenceRegion:
    """Joint region K'(D Qhat D')^-1 K <= chi2_k(level) with
    K = T^-1/2 D (bread) (beta_hat - beta0)."""
    if not 0 < level < 1:
        raise DataError(f"level must be in (0, 1), got {level}")
    dm = d.d
    if dm.shape[1] != fit.beta.size:
        raise DataError(
            f"contrast has {dm.shape[1]} columns, expected {fit.beta.size}"
        )
    pad = np.setdiff1d(np.arange(fit.beta.size), fit.free_idx)
    if pad.size and np.any(dm[:, pad] != 0):
        raise DataError("contrast touches padded coefficient positions")
    k = dm.shape[0]
    df = dm[:, fit.free_idx]
    dqd = df @ fit.qhat @ df.T
    dqd_inv = _inv(dqd, "confidence region")
    # lift of a contrast value back to coefficient space
    dplus = df.T @ _inv(df @ df.T, "contrast lift")
    md = df @ fit.bread @ dplus
    shape = md.T @ dqd_inv @ md / fit.t_eff
    center = dm @ fit.beta.values
    threshold = float(stats.chi2.ppf(level, df=k))
    return ConfidenceRegion(center=center, shape=shape, threshold=threshold,
                            _fit=fit, _d=dm)


ESTIMATORS = {
    "ols": fit_ols,
    "ridge_ols": fit_ridge_ols,
    "gls": fit_gls,
    "ridge_gls": fit_ridge_gls,
    "egls": fit_egls,
}
