"""Data generation: error models, the panel recursion, weight perturbations.

All randomness flows through counter-based Philox generators keyed by
(seed, replicate), so replicate r draws the same numbers no matter how
many workers run or in what order.  Within one path the draw order is
fixed: covariates first, then the error sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, lu_factor, lu_solve

from .errors import DataError, NumericalError
from .model import NarSpec, is_stable

__all__ = [
    "GaussianIid",
    "SarGaussian",
    "FactorGaussian",
    "StudentT",
    "SimConfig",
    "SimResult",
    "MisspecPerturbation",
    "rng_from_seed",
    "replicate_rng",
    "gen_errors",
    "simulate",
    "perturb_weights",
]


def rng_from_seed(seed) -> np.random.Generator:
    """Philox generator for a top-level seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def replicate_rng(seed, rep: int) -> np.random.Generator:
    """Independent stream for replicate `rep` of a run seeded with `seed`.

    Uses the spawn-key mechanism directly so stream r is O(1) to build
    and identical whether or not other replicates run.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(rep,))
    return np.random.Generator(np.random.Philox(ss))


class GaussianIid:
    """Spherical Gaussian errors, eps_t ~ N(0, sigma2 I)."""

    def __init__(self, n: int, sigma2: float = 1.0):
        if sigma2 < 0:
            raise DataError(f"sigma2 must be nonnegative, got {sigma2}")
        self.n = int(n)
        self.sigma2 = float(sigma2)

    def covariance(self) -> np.ndarray:
        return self.sigma2 * np.eye(self.n)

    def sample(self, t_len: int, rng: np.random.Generator) -> np.ndarray:
        return np.sqrt(self.sigma2) * rng.standard_normal((t_len, self.n))


class SarGaussian:
    """Spatial-autoregressive Gaussian errors.

    eps_t solves (I - rho Phi) eps_t = u_t with u_t ~ N(0, sigma_u2 I),
    so the error covariance is sigma_u2 (I - rho Phi)^-1 (I - rho Phi)^-T.
    """

    def __init__(self, rho: float, phi: np.ndarray, sigma_u2: float = 1.0):
        phi = np.asarray(phi, dtype=float)
        if phi.ndim != 2 or phi.shape[0] != phi.shape[1]:
            raise DataError(f"phi must be square, got shape {phi.shape}")
        if not np.abs(rho) < 1:
            raise DataError(f"|rho| must be < 1, got {rho}")
        if sigma_u2 <= 0:
            raise DataError(f"sigma_u2 must be positive, got {sigma_u2}")
        self.rho = float(rho)
        self.phi = phi
        self.sigma_u2 = float(sigma_u2)
        self.n = phi.shape[0]
        self._s = np.eye(self.n) - self.rho * phi
        try:
            self._lu = lu_factor(self._s)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"I - rho Phi is singular: {exc}") from None

    def covariance(self) -> np.ndarray:
        inv = lu_solve(self._lu, np.eye(self.n))
        return self.sigma_u2 * inv @ inv.T

    def sample(self, t_len: int, rng: np.random.Generator) -> np.ndarray:
        u = np.sqrt(self.sigma_u2) * rng.standard_normal((t_len, self.n))
        return lu_solve(self._lu, u.T).T


class FactorGaussian:
    """Static factor errors eps_t = Lambda f_t + u_t with Gaussian pieces."""

    def __init__(self, loadings: np.ndarray, sigma2: float = 1.0):
        lam = np.atleast_2d(np.asarray(loadings, dtype=float))
        if lam.ndim != 2:
            raise DataError("loadings must be an (N, k) array")
        if sigma2 <= 0:
            raise DataError(f"sigma2 must be positive, got {sigma2}")
        self.loadings = lam
        self.sigma2 = float(sigma2)
        self.n, self.k = lam.shape

    def covariance(self) -> np.ndarray:
        return self.loadings @ self.loadings.T + self.sigma2 * np.eye(self.n)

    def sample(self, t_len: int, rng: np.random.Generator) -> np.ndarray:
        f = rng.standard_normal((t_len, self.k))
        u = np.sqrt(self.sigma2) * rng.standard_normal((t_len, self.n))
        return f @ self.loadings.T + u


class StudentT:
    """Multivariate t errors with a given scale matrix.

    `scale` is the t scale matrix, not the covariance; the realized
    covariance is scale * nu / (nu - 2), which covariance() reports.
    Requires nu > 2 so the covariance exists.
    """

    def __init__(self, nu: float, scale: np.ndarray):
        scale = np.asarray(scale, dtype=float)
        if nu <= 2:
            raise DataError(f"degrees of freedom must exceed 2, got {nu}")
        if scale.ndim != 2 or scale.shape[0] != scale.shape[1]:
            raise DataError(f"scale must be square, got shape {scale.shape}")
        self.nu = float(nu)
        self.scale = scale
        self.n = scale.shape[0]
        try:
            self._chol = cholesky(scale, lower=True)
        except np.linalg.LinAlgError:
            raise NumericalError("scale matrix is not positive definite") from None

    def covariance(self) -> np.ndarray:
        return self.scale * (self.nu / (self.nu - 2.0))

    def sample(self, t_len: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((t_len, self.n))
        g = rng.chisquare(self.nu, t_len)
        return (z @ self._chol.T) * np.sqrt(self.nu / g)[:, None]


def gen_errors(model, t_len: int, seed=0) -> np.ndarray:
    """Draw a (t_len, N) error panel from an error model."""
    if t_len < 1:
        raise DataError(f"t_len must be positive, got {t_len}")
    return model.sample(t_len, rng_from_seed(seed))


@dataclass(frozen=True)
class SimConfig:
    t_len: int
    burn_in: int = 200
    seed: int = 0
    allow_unstable: bool = False

    def __post_init__(self):
        if self.t_len < 1:
            raise DataError(f"t_len must be positive, got {self.t_len}")
        if self.burn_in < 0:
            raise DataError(f"burn_in must be nonnegative, got {self.burn_in}")


@dataclass(frozen=True)
class SimResult:
    """Simulated panel: x[t] is X_t, y[t] the covariates observed at t
    (X_t was generated using y[t-1]), errors[t] the innovation in X_t."""

    x: np.ndarray
    y: np.ndarray
    errors: np.ndarray


def simulate(spec: NarSpec, error_model, cfg: SimConfig,
             rng: np.random.Generator | None = None) -> SimResult:
    """Run the panel recursion from a zero lag window.

    The first `burn_in` steps are discarded.  Covariates are iid N(0, 1),
    drawn first; the error sequence is drawn second.  Unstable specs
    raise unless cfg.allow_unstable.
    """
    n, q, p = spec.n_nodes, spec.q, spec.p
    if error_model.n != n:
        raise DataError(
            f"error model is for {error_model.n} nodes, spec has {n}"
        )
    if not cfg.allow_unstable:
        rep = is_stable(spec)
        if not rep.stable:
            raise DataError(
                f"spec is unstable (spectral radius {rep.radius:.6g}); "
                "pass allow_unstable to simulate anyway"
            )
    if rng is None:
        rng = rng_from_seed(cfg.seed)
    total = cfg.burn_in + cfg.t_len
    # ytab[j] holds Y_{j-1}; step s of the recursion uses ytab[s]
    ytab = rng.standard_normal((total + 1, n, p)) if p else np.zeros((total + 1, n, 0))
    eps = error_model.sample(total, rng)

    glist = []
    for lag in range(1, q + 1):
        g = np.zeros((n, n))
        if lag <= spec.q1:
            g[np.diag_indices(n)] += spec.a[lag - 1]
        if lag <= spec.q2:
            g += spec.b[lag - 1][:, None] * spec.w
        glist.append(g)

    x = np.zeros((total, n))
    for s in range(total):
        acc = eps[s].copy()
        for lag, g in enumerate(glist, start=1):
            if s - lag >= 0:
                acc += g @ x[s - lag]
        if p:
            acc += np.einsum("ik,ik->i", spec.gamma, ytab[s])
        x[s] = acc

    return SimResult(
        x=x[cfg.burn_in :],
        y=ytab[1 + cfg.burn_in : 1 + total],
        errors=eps[cfg.burn_in :],
    )


@dataclass(frozen=True)
class MisspecPerturbation:
    """Perturbation pi added to a weight matrix, with its size target."""

    pi: np.ndarray
    target: float
    preserve_row_sums: bool

    @property
    def inf_norm(self) -> float:
        return float(np.abs(self.pi).sum(axis=1).max())


def perturb_weights(w: np.ndarray, target: float, preserve_row_sums: bool = True,
                    rng=None, seed=0):
    """Draw pi with max absolute row sum exactly `target`, return (w + pi, pi).

    Entries are iid U(-1, 1) with zero diagonal; with preserve_row_sums
    each row is centered so row sums of w are unchanged; one global
    rescale then hits the target exactly.  target 0 returns w unchanged.
    """
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    if w.ndim != 2 or w.shape[1] != n:
        raise DataError(f"weight matrix must be square, got shape {w.shape}")
    if target < 0:
        raise DataError(f"perturbation size must be nonnegative, got {target}")
    if rng is None:
        rng = rng_from_seed(seed)
    pi = rng.uniform(-1.0, 1.0, (n, n))
    np.fill_diagonal(pi, 0.0)
    if target == 0.0:
        pi = np.zeros((n, n))
        return w.copy(), MisspecPerturbation(pi, 0.0, preserve_row_sums)
    if preserve_row_sums and n > 2:
        off = ~np.eye(n, dtype=bool)
        row_mean = pi.sum(axis=1) / (n - 1)
        pi[off] -= np.repeat(row_mean, n - 1)
    elif preserve_row_sums:
        raise DataError("row-sum preservation needs at least 3 nodes")
    norm = np.abs(pi).sum(axis=1).max()
    if norm == 0:
        raise NumericalError("degenerate perturbation draw")
    pi *= target / norm
    return w + pi, MisspecPerturbation(pi, float(target), preserve_row_sums)
