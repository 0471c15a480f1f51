"""Core model objects for network autoregressions with node-specific effects.

The model for an N-node panel is

    X_{i,t} = sum_{j=1..q1} a_i^(j) X_{i,t-j}
            + sum_{j=1..q2} b_i^(j) (W X_{t-j})_i
            + gamma_i' Y_{i,t-1} + eps_{i,t}

with a row-stochastic weight matrix W (zero diagonal).  In matrix form
X_t = sum_l G_l X_{t-l} + sum_k C_k Y_{k,t-1} + eps_t where
G_l = A_l + B_l W and A_l, B_l, C_k are diagonal.

Coefficients stack into a single vector of length 2*N*q + N*p with
q = max(q1, q2): per lag an a-block then a b-block (N entries each,
lags beyond q1 or q2 padded with structural zeros), then one block of
N entries per covariate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError

__all__ = [
    "NarSpec",
    "CoefVector",
    "CompanionForm",
    "DesignMatrix",
    "StabilityReport",
    "validate_weights",
    "renormalize_weights",
    "load_weights",
    "save_weights",
    "banded_weights",
    "flatten",
    "unflatten",
    "build_companion",
    "spectral_radius",
    "is_stable",
    "sufficient_condition",
    "transition_matrices",
    "build_design",
]

#: tolerance on row sums / nonnegativity of weight matrices
W_TOL = 1e-10

#: companion dimension above which the dense eigensolver is not used
DENSE_EIG_LIMIT = 2000


def validate_weights(w: np.ndarray, tol: float = W_TOL) -> None:
    """Check that w is a square row-stochastic matrix with zero diagonal.

    Raises DataError naming the first offending row.
    """
    w = np.asarray(w)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise DataError(f"weight matrix must be square, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise DataError("weight matrix contains non-finite entries")
    if np.any(np.abs(np.diag(w)) > tol):
        i = int(np.argmax(np.abs(np.diag(w)) > tol))
        raise DataError(f"weight matrix diagonal must be zero (row {i})")
    if np.any(w < -tol):
        i, j = np.argwhere(w < -tol)[0]
        raise DataError(f"negative weight at ({int(i)}, {int(j)})")
    rows = w.sum(axis=1)
    bad = np.abs(rows - 1.0) > tol
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DataError(
            f"row {i} of weight matrix sums to {rows[i]:.12g}, expected 1; "
            "call renormalize_weights to rescale"
        )


def renormalize_weights(w: np.ndarray) -> np.ndarray:
    """Zero the diagonal and rescale each row to sum to one.

    Never applied implicitly; rows with no positive mass raise DataError.
    """
    w = np.array(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise DataError(f"weight matrix must be square, got shape {w.shape}")
    np.fill_diagonal(w, 0.0)
    if np.any(w < 0):
        i, j = np.argwhere(w < 0)[0]
        raise DataError(f"negative weight at ({int(i)}, {int(j)})")
    rows = w.sum(axis=1)
    if np.any(rows <= 0):
        i = int(np.argmax(rows <= 0))
        raise DataError(f"row {i} of weight matrix has no positive weight")
    return w / rows[:, None]


def load_weights(path) -> np.ndarray:
    """Read a dense weight matrix from headerless CSV; diagonal forced to zero."""
    try:
        w = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read weight matrix from {path}: {exc}") from None
    np.fill_diagonal(w, 0.0)
    validate_weights(w)
    return w


def save_weights(w: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(w), delimiter=",", fmt="%.17g")


def banded_weights(n: int, width: int) -> np.ndarray:
    """Row-normalized band matrix: node i is linked to the `width` nearest
    nodes on each side (fewer at the edges)."""
    if width < 1 or width >= n:
        raise DataError(f"band width must be in [1, {n - 1}], got {width}")
    idx = np.arange(n)
    d = np.abs(idx[:, None] - idx[None, :])
    w = ((d > 0) & (d <= width)).astype(float)
    return w / w.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class NarSpec:
    """Full parameterization of a network autoregression.

    Parameters
    ----------
    a : (q1, N) array
        Self-lag coefficients, row l-1 holds a_i^(l).
    b : (q2, N) array
        Network-lag coefficients.
    gamma : (N, p) array
        Covariate coefficients; p may be zero.
    w : (N, N) array
        Row-stochastic weight matrix with zero diagonal.
    """

    a: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        w = np.asarray(self.w, dtype=float)
        n = w.shape[0] if w.ndim == 2 else 0
        g = np.asarray(self.gamma, dtype=float)
        if g.size == 0:
            g = g.reshape(n, 0)
        elif g.ndim == 1:
            g = g.reshape(n, -1) if n else np.atleast_2d(g)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "w", w)
        validate_weights(w)
        if a.shape[1] != n or b.shape[1] != n or g.shape[0] != n:
            raise DataError(
                f"coefficient shapes {a.shape}, {b.shape}, {g.shape} "
                f"inconsistent with {n} nodes"
            )
        if a.shape[0] < 1 or b.shape[0] < 1:
            raise DataError("q1 and q2 must both be at least 1")
        for arr, name in ((a, "a"), (b, "b"), (g, "gamma")):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite entries in {name}")
        for arr in (a, b, g, w):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.w.shape[0]

    @property
    def q1(self) -> int:
        return self.a.shape[0]

    @property
    def q2(self) -> int:
        return self.b.shape[0]

    @property
    def q(self) -> int:
        return max(self.q1, self.q2)

    @property
    def p(self) -> int:
        return self.gamma.shape[1]


@dataclass(frozen=True)
class CoefVector:
    """Stacked coefficient vector with its layout metadata.

    Layout: for each lag l = 1..q first the N a-coefficients then the N
    b-coefficients, then N gamma-coefficients per covariate.  Positions
    for lags beyond q1 (a) or q2 (b) are structural zeros and are
    excluded from the free mask.
    """

    values: np.ndarray
    n: int
    q1: int
    q2: int
    p: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != (self.size,):
            raise DataError(
                f"coefficient vector has length {v.shape}, expected {self.size}"
            )
        pad = ~self.free_mask()
        if np.any(v[pad] != 0.0):
            raise DataError("padded coefficient positions must be exactly zero")
        v.setflags(write=False)

    @property
    def q(self) -> int:
        return max(self.q1, self.q2)

    @property
    def size(self) -> int:
        return 2 * self.n * self.q + self.n * self.p

    def index(self, kind: str, lag: int, node: int) -> int:
        """Position of one coefficient; `lag` is the covariate index for gamma."""
        n, q = self.n, self.q
        if not 0 <= node < n:
            raise DataError(f"node {node} out of range")
        if kind == "a":
            if not 1 <= lag <= self.q1:
                raise DataError(f"a-lag {lag} out of range")
            return 2 * n * (lag - 1) + node
        if kind == "b":
            if not 1 <= lag <= self.q2:
                raise DataError(f"b-lag {lag} out of range")
            return 2 * n * (lag - 1) + n + node
        if kind == "gamma":
            if not 1 <= lag <= self.p:
                raise DataError(f"covariate index {lag} out of range")
            return 2 * n * q + (lag - 1) * n + node
        raise DataError(f"unknown coefficient kind {kind!r}")

    def free_mask(self) -> np.ndarray:
        """Boolean mask of genuinely estimated positions (padding excluded)."""
        n, q = self.n, self.q
        m = np.zeros(self.size, dtype=bool)
        for lag in range(1, q + 1):
            base = 2 * n * (lag - 1)
            if lag <= self.q1:
                m[base : base + n] = True
            if lag <= self.q2:
                m[base + n : base + 2 * n] = True
        m[2 * n * q :] = True
        return m

    def a_block(self, lag: int) -> np.ndarray:
        base = 2 * self.n * (lag - 1)
        return self.values[base : base + self.n]

    def b_block(self, lag: int) -> np.ndarray:
        base = 2 * self.n * (lag - 1) + self.n
        return self.values[base : base + self.n]

    def gamma_matrix(self) -> np.ndarray:
        """(N, p) covariate coefficients."""
        g = self.values[2 * self.n * self.q :]
        return g.reshape(self.p, self.n).T if self.p else g.reshape(self.n, 0)


def flatten(spec: NarSpec) -> CoefVector:
    """Stack a NarSpec into the canonical coefficient layout."""
    n, q = spec.n_nodes, spec.q
    out = np.zeros(2 * n * q + n * spec.p)
    for lag in range(1, q + 1):
        base = 2 * n * (lag - 1)
        if lag <= spec.q1:
            out[base : base + n] = spec.a[lag - 1]
        if lag <= spec.q2:
            out[base + n : base + 2 * n] = spec.b[lag - 1]
    if spec.p:
        out[2 * n * q :] = spec.gamma.T.ravel()
    return CoefVector(out, n, spec.q1, spec.q2, spec.p)


def unflatten(values, n: int, q1: int, q2: int, p: int, w: np.ndarray) -> NarSpec:
    """Rebuild a NarSpec from a stacked coefficient vector."""
    if isinstance(values, CoefVector):
        coef = values
        if (coef.n, coef.q1, coef.q2, coef.p) != (n, q1, q2, p):
            raise DataError("coefficient vector dimensions disagree with arguments")
    else:
        coef = CoefVector(np.asarray(values, dtype=float), n, q1, q2, p)
    a = np.stack([coef.a_block(l) for l in range(1, q1 + 1)])
    b = np.stack([coef.b_block(l) for l in range(1, q2 + 1)])
    return NarSpec(a=a, b=b, gamma=coef.gamma_matrix(), w=w)


def transition_matrices(spec: NarSpec) -> list[np.ndarray]:
    """G_l = diag(a^(l)) + diag(b^(l)) W for l = 1..q, zero-padded blocks."""
    n, q = spec.n_nodes, spec.q
    out = []
    for lag in range(1, q + 1):
        g = np.zeros((n, n))
        if lag <= spec.q1:
            g[np.diag_indices(n)] += spec.a[lag - 1]
        if lag <= spec.q2:
            g += spec.b[lag - 1][:, None] * spec.w
        out.append(g)
    return out


@dataclass(frozen=True)
class CompanionForm:
    """Companion matrix of the stacked order-q system."""

    g: np.ndarray
    n: int
    q: int


def build_companion(spec: NarSpec) -> CompanionForm:
    """Companion matrix of size Nq x Nq.

    Top block row holds G_1 .. G_q; the identity subdiagonal shifts the
    lag window.  For q = 1 this is just G_1.
    """
    n, q = spec.n_nodes, spec.q
    blocks = transition_matrices(spec)
    g = np.zeros((n * q, n * q))
    for l, gl in enumerate(blocks):
        g[:n, l * n : (l + 1) * n] = gl
    if q > 1:
        idx = np.arange(n * (q - 1))
        g[n + idx, idx] = 1.0
    return CompanionForm(g=g, n=n, q=q)


def spectral_radius(companion, dense_limit: int = DENSE_EIG_LIMIT) -> float:
    """Largest eigenvalue modulus of a companion (or any square) matrix.

    Dense eigvals up to `dense_limit`; above that an Arnoldi iteration
    (iterative power method, tol 1e-6, 10000 iteration cap) on the
    largest-modulus eigenvalue.
    """
    g = companion.g if isinstance(companion, CompanionForm) else np.asarray(companion)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise DataError(f"expected a square matrix, got shape {g.shape}")
    if g.shape[0] <= dense_limit:
        try:
            return float(np.max(np.abs(np.linalg.eigvals(g))))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigensolver failed: {exc}") from None
    from scipy.sparse.linalg import eigs

    try:
        vals = eigs(g, k=1, which="LM", tol=1e-6, maxiter=10000,
                    return_eigenvectors=False)
    except Exception as exc:
        raise NumericalError(f"iterative eigensolver failed: {exc}") from None
    return float(np.abs(vals[0]))


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    radius: float


def is_stable(spec: NarSpec, margin: float = 0.0) -> StabilityReport:
    """Strict stationarity check: spectral radius of the companion < 1 - margin."""
    r = spectral_radius(build_companion(spec))
    return StabilityReport(stable=bool(r < 1.0 - margin), radius=r)


def sufficient_condition(spec: NarSpec) -> bool:
    """Row-sum sufficient condition: max_i sum_l (|a_i^(l)| + |b_i^(l)|) < 1.

    Implies stationarity for any row-stochastic W; conservative.
    """
    tot = np.abs(spec.a).sum(axis=0) + np.abs(spec.b).sum(axis=0)
    return bool(tot.max() < 1.0)


@dataclass(frozen=True)
class DesignMatrix:
    """One time slice of the stacked regression design.

    z has shape (N, 2Nq + Np); row i carries X_{i,t-l} and (W X_{t-l})_i
    in the lag blocks and Y_{i,k,t-1} in the covariate blocks, all at
    column offsets congruent to i mod N.
    """

    z: np.ndarray
    n: int
    q: int
    p: int


def build_design(x_history: np.ndarray, y_prev, w: np.ndarray) -> DesignMatrix:
    """Assemble Z_{t-1} from the lag window and previous-step covariates.

    Parameters
    ----------
    x_history : (q, N) array
        Row l-1 is X_{t-l}, most recent lag first.
    y_prev : (N, p) array or None
        Covariates observed at t-1; None means p = 0.
    w : (N, N) row-stochastic weight matrix.
    """
    x_history = np.atleast_2d(np.asarray(x_history, dtype=float))
    q, n = x_history.shape
    if w.shape != (n, n):
        raise DataError(f"weight matrix shape {w.shape} does not match {n} nodes")
    y_prev = np.zeros((n, 0)) if y_prev is None else np.asarray(y_prev, dtype=float)
    if y_prev.shape[0] != n:
        raise DataError(f"covariate block has {y_prev.shape[0]} rows, expected {n}")
    p = y_prev.shape[1]
    z = np.zeros((n, 2 * n * q + n * p))
    rows = np.arange(n)
    for l in range(q):
        wx = w @ x_history[l]
        z[rows, 2 * n * l + rows] = x_history[l]
        z[rows, 2 * n * l + n + rows] = wx
    for k in range(p):
        z[rows, 2 * n * q + k * n + rows] = y_prev[:, k]
    return DesignMatrix(z=z, n=n, q=q, p=p)
