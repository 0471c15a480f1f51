"""Monte-Carlo scenario runner.

Turns a serializable Scenario into per-group estimation metrics (mean
estimate, relative-Frobenius RMSE, CI length, coverage) over a grid of
sample sizes, and runs the weight-misspecification rate experiment.
Replicates draw from per-replicate seed streams and are aggregated in
replicate order, so results are identical for any worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError, NetarError
from .estimation import (
    confidence_intervals,
    fit_egls,
    fit_gls,
    fit_ols,
    fit_ridge_gls,
    fit_ridge_ols,
)
from .model import NarSpec, banded_weights, flatten, is_stable, load_weights
from .simulation import (
    FactorGaussian,
    GaussianIid,
    SarGaussian,
    SimConfig,
    StudentT,
    perturb_weights,
    replicate_rng,
    simulate,
)

__all__ = [
    "SCENARIO_SCHEMA_VERSION",
    "METRIC_COLUMNS",
    "CURVE_COLUMNS",
    "Scenario",
    "MisspecConfig",
    "MetricsTable",
    "Group",
    "expand_pattern",
    "weights_from_config",
    "error_model_from_config",
    "scenario_spec",
    "run_scenario",
    "run_misspec_experiment",
]

SCENARIO_SCHEMA_VERSION = 1

METRIC_COLUMNS = ("scenario_id", "estimator", "group", "T", "true",
                  "mean_est", "rmse", "ci_len", "cp", "n_ok")
CURVE_COLUMNS = ("rate", "T", "variant", "est_error", "cp", "n_ok")

KNOWN_ESTIMATORS = ("ols", "ridge_ols", "gls", "ridge_gls", "egls")


def _covered(lo, hi, truth):
    """Coverage indicators with a tiny numerical grace.

    The grace (1e-12 relative to the truth scale) keeps zero-width
    intervals from exact fits counted as covering; it is far below the
    resolution of any stochastic coverage estimate.
    """
    tol = 1e-12 * (1.0 + np.abs(truth))
    return (lo - tol <= truth) & (truth <= hi + tol)


def expand_pattern(values, n: int):
    """Spread a short value list block-constant over n nodes.

    len(values) blocks as equal as possible (earlier blocks take the
    remainder); returns the length-n vector and the node-index blocks.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 1 or values.size > n:
        raise DataError(
            f"pattern needs between 1 and {n} values, got {values.size}"
        )
    blocks = np.array_split(np.arange(n), values.size)
    out = np.empty(n)
    for val, idx in zip(values, blocks):
        out[idx] = val
    return out, blocks


def weights_from_config(cfg, n: int) -> np.ndarray:
    """Build an (n, n) weight matrix from its serialized description.

    kinds: {"kind": "banded", "width": m}, {"kind": "matrix",
    "values": [[...]]}, {"kind": "path", "path": "w.csv"}.
    """
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise DataError("weight config must be a dict with a 'kind' key")
    kind = cfg["kind"]
    if kind == "banded":
        return banded_weights(n, int(cfg["width"]))
    if kind == "matrix":
        w = np.asarray(cfg["values"], dtype=float)
        if w.shape != (n, n):
            raise DataError(
                f"inline weight matrix is {w.shape}, expected ({n}, {n})"
            )
        return w
    if kind == "path":
        w = load_weights(cfg["path"])
        if w.shape != (n, n):
            raise DataError(
                f"{cfg['path']} holds a {w.shape} matrix, expected ({n}, {n})"
            )
        return w
    raise DataError(f"unknown weight config kind {kind!r}")


def error_model_from_config(cfg, n: int, rng=None):
    """Instantiate an error model from its serialized description.

    kinds: iid {sigma2}, sar {rho, phi, sigma_u2}, factor {k, sigma2,
    loadings?}, student_t {df, scale: weight-of sar/identity}.  Factor
    loadings without explicit values are drawn U(0, 1) from rng, one
    draw per replicate.
    """
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise DataError("error config must be a dict with a 'kind' key")
    kind = cfg["kind"]
    if kind == "iid":
        return GaussianIid(n, float(cfg.get("sigma2", 1.0)))
    if kind == "sar":
        phi = weights_from_config(cfg["phi"], n)
        return SarGaussian(float(cfg["rho"]), phi,
                           float(cfg.get("sigma_u2", 1.0)))
    if kind == "factor":
        if "loadings" in cfg:
            lam = np.asarray(cfg["loadings"], dtype=float)
        else:
            if rng is None:
                raise DataError(
                    "factor error model without explicit loadings needs a "
                    "random stream"
                )
            lam = rng.uniform(0.0, 1.0, (n, int(cfg["k"])))
        return FactorGaussian(lam, float(cfg.get("sigma2", 1.0)))
    if kind == "student_t":
        scale_cfg = cfg.get("scale", {"kind": "identity"})
        skind = scale_cfg.get("kind", "identity")
        if skind == "identity":
            scale = float(scale_cfg.get("sigma2", 1.0)) * np.eye(n)
        elif skind == "sar":
            phi = weights_from_config(scale_cfg["phi"], n)
            scale = SarGaussian(float(scale_cfg["rho"]), phi,
                                float(scale_cfg.get("sigma_u2", 1.0))).covariance()
        elif skind == "matrix":
            scale = np.asarray(scale_cfg["values"], dtype=float)
        else:
            raise DataError(f"unknown scale kind {skind!r}")
        return StudentT(float(cfg["df"]), scale)
    raise DataError(f"unknown error config kind {kind!r}")


@dataclass(frozen=True)
class Scenario:
    """Serializable description of one Monte-Carlo experiment.

    a and b hold one value pattern per lag, expanded block-constant
    over the nodes; gamma holds one value per covariate, shared by all
    nodes.  Identical Scenario and seed give identical metrics.
    """

    scenario_id: str
    n: int
    a: tuple
    b: tuple
    t_grid: tuple
    n_reps: int
    estimators: tuple
    gamma: tuple = ()
    w: dict = field(default_factory=lambda: {"kind": "banded", "width": 5})
    error: dict = field(default_factory=lambda: {"kind": "iid", "sigma2": 1.0})
    egls: dict | None = None
    level: float = 0.95
    burn_in: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(tuple(float(v) for v in row)
                                            for row in self.a))
        object.__setattr__(self, "b", tuple(tuple(float(v) for v in row)
                                            for row in self.b))
        object.__setattr__(self, "gamma", tuple(float(v) for v in self.gamma))
        object.__setattr__(self, "t_grid", tuple(int(t) for t in self.t_grid))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.n < 2:
            raise DataError(f"need at least 2 nodes, got {self.n}")
        if not self.a or not self.b:
            raise DataError("a and b need at least one lag pattern each")
        if not self.t_grid or min(self.t_grid) < 2:
            raise DataError(f"bad sample-size grid {self.t_grid}")
        if self.n_reps < 1:
            raise DataError(f"n_reps must be positive, got {self.n_reps}")
        if not self.estimators:
            raise DataError("no estimators requested")
        for est in self.estimators:
            if est not in KNOWN_ESTIMATORS:
                raise DataError(
                    f"unknown estimator {est!r}; choose from {KNOWN_ESTIMATORS}"
                )
        if not 0 < self.level < 1:
            raise DataError(f"level must be in (0, 1), got {self.level}")

    @property
    def q1(self) -> int:
        return len(self.a)

    @property
    def q2(self) -> int:
        return len(self.b)

    @property
    def p(self) -> int:
        return len(self.gamma)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCENARIO_SCHEMA_VERSION,
            "scenario_id": self.scenario_id,
            "n": self.n,
            "a": [list(row) for row in self.a],
            "b": [list(row) for row in self.b],
            "gamma": list(self.gamma),
            "w": self.w,
            "error": self.error,
            "egls": self.egls,
            "t_grid": list(self.t_grid),
            "n_reps": self.n_reps,
            "estimators": list(self.estimators),
            "level": self.level,
            "burn_in": self.burn_in,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        version = d.pop("schema_version", SCENARIO_SCHEMA_VERSION)
        if version != SCENARIO_SCHEMA_VERSION:
            raise DataError(
                f"scenario schema version {version} not supported "
                f"(this build reads version {SCENARIO_SCHEMA_VERSION})"
            )
        try:
            return cls(**d)
        except TypeError as exc:
            raise DataError(f"bad scenario fields: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DataError(f"scenario JSON does not parse: {exc}") from None


@dataclass(frozen=True)
class Group:
    """One parameter group: a coefficient block sharing a true value."""

    label: str
    positions: np.ndarray
    truth: float


def scenario_spec(s: Scenario):
    """Expand a scenario into its process spec and parameter groups."""
    n = s.n
    w = weights_from_config(s.w, n)
    q1, q2, p = s.q1, s.q2, s.p
    q = max(q1, q2)
    a_rows, b_rows = [], []
    groups = []
    for lag, pattern in enumerate(s.a, start=1):
        vec, blocks = expand_pattern(pattern, n)
        a_rows.append(vec)
        base = 2 * n * (lag - 1)
        for j, idx in enumerate(blocks, start=1):
            groups.append(Group(f"a{lag}_g{j}", base + idx, float(pattern[j - 1])))
    for lag, pattern in enumerate(s.b, start=1):
        vec, blocks = expand_pattern(pattern, n)
        b_rows.append(vec)
        base = 2 * n * (lag - 1) + n
        for j, idx in enumerate(blocks, start=1):
            groups.append(Group(f"b{lag}_g{j}", base + idx, float(pattern[j - 1])))
    gamma = np.tile(np.asarray(s.gamma, dtype=float), (n, 1)) if p else np.zeros((n, 0))
    for kk in range(1, p + 1):
        base = 2 * n * q + (kk - 1) * n
        groups.append(Group(f"gamma_k{kk}", base + np.arange(n),
                            float(s.gamma[kk - 1])))
    spec = NarSpec(np.vstack(a_rows), np.vstack(b_rows), gamma, w)
    return spec, groups


def _egls_kwargs(s: Scenario, w: np.ndarray) -> dict:
    """Resolve feasible-GLS settings, defaulting from the error family."""
    cfg = dict(s.egls or {})
    cov = cfg.get("cov")
    if cov is None:
        kind = s.error.get("kind")
        if kind == "factor":
            cov = "factor"
        else:
            cov = "sar"
    out = {"cov": cov}
    if cov == "sar":
        if "phi" in cfg:
            out["phi"] = weights_from_config(cfg["phi"], s.n)
        elif "phi" in s.error:
            out["phi"] = weights_from_config(s.error["phi"], s.n)
        elif s.error.get("kind") == "student_t" and "phi" in s.error.get("scale", {}):
            out["phi"] = weights_from_config(s.error["scale"]["phi"], s.n)
        else:
            out["phi"] = w
    else:
        if "k" in cfg:
            out["k"] = int(cfg["k"])
        if "kmax" in cfg:
            out["kmax"] = int(cfg["kmax"])
    if cfg.get("iterate"):
        out["iterate"] = True
    return out


def _fit_one(est: str, s: Scenario, x, y, w, model):
    if est == "ols":
        return fit_ols(x, y, w, s.q1, s.q2)
    if est == "ridge_ols":
        return fit_ridge_ols(x, y, w, s.q1, s.q2)
    if est == "gls":
        return fit_gls(x, y, w, s.q1, s.q2, sigma=model.covariance())
    if est == "ridge_gls":
        return fit_ridge_gls(x, y, w, s.q1, s.q2, sigma=model.covariance())
    return fit_egls(x, y, w, s.q1, s.q2, **_egls_kwargs(s, w))


def _run_replicate(s: Scenario, t_len: int, rep: int) -> dict:
    """One replicate: simulate, then fit every requested estimator."""
    rng = replicate_rng(s.seed, rep)
    spec, _ = scenario_spec(s)
    model = error_model_from_config(s.error, s.n, rng)
    sim = simulate(spec, model, SimConfig(t_len, burn_in=s.burn_in), rng=rng)
    y = sim.y if s.p else None
    out = {}
    for est in s.estimators:
        try:
            fit = _fit_one(est, s, sim.x, y, spec.w, model)
            lo, hi = confidence_intervals(fit, s.level)
            out[est] = (fit.beta.values, lo, hi)
        except NetarError:
            out[est] = None
    return out


def _star_replicate(args):
    return _run_replicate(*args)


def _map_replicates(worker, arglist, threads: int):
    if threads > 1 and len(arglist) > 1:
        chunk = max(1, len(arglist) // (threads * 4))
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, arglist, chunksize=chunk))
    return [worker(a) for a in arglist]


@dataclass(frozen=True)
class MetricsTable:
    """Column-ordered result rows with fixed CSV formatting."""

    columns: tuple
    rows: tuple

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(list(self.rows), columns=list(self.columns))

    def to_csv(self, path=None):
        """Write UTF-8, LF-terminated CSV; returns the text if path is None."""
        frame = self.to_frame()
        if path is None:
            return frame.to_csv(index=False, lineterminator="\n")
        frame.to_csv(path, index=False, lineterminator="\n")
        return None


def run_scenario(s: Scenario, threads: int = 1) -> MetricsTable:
    """Run every (T, replicate, estimator) cell and aggregate by group.

    Per group and estimator: mean estimate, mean per-replicate relative
    Frobenius error, mean CI length, and coverage over every
    (coefficient, replicate) pair.  Failed replicate fits are dropped
    from aggregation; n_ok reports how many survived.
    """
    spec, groups = scenario_spec(s)
    report = is_stable(spec)
    if not report.stable:
        raise DataError(
            f"scenario spec is unstable (spectral radius {report.radius:.6g})"
        )
    truth = flatten(spec).values
    rows = []
    for t_len in s.t_grid:
        args = [(s, t_len, rep) for rep in range(s.n_reps)]
        reps = _map_replicates(_star_replicate, args, threads)
        for est in s.estimators:
            ok = [r[est] for r in reps if r[est] is not None]
            n_ok = len(ok)
            for g in groups:
                row = {"scenario_id": s.scenario_id, "estimator": est,
                       "group": g.label, "T": t_len, "true": g.truth,
                       "n_ok": n_ok}
                if n_ok == 0:
                    row.update(mean_est=np.nan, rmse=np.nan, ci_len=np.nan,
                               cp=np.nan)
                    rows.append(row)
                    continue
                est_block = np.stack([r[0][g.positions] for r in ok])
                lo_block = np.stack([r[1][g.positions] for r in ok])
                hi_block = np.stack([r[2][g.positions] for r in ok])
                tb = truth[g.positions]
                denom = np.linalg.norm(tb)
                per_rep = np.linalg.norm(est_block - tb, axis=1)
                if denom > 0:
                    per_rep = per_rep / denom
                covered = _covered(lo_block, hi_block, tb)
                row.update(
                    mean_est=float(est_block.mean()),
                    rmse=float(per_rep.mean()),
                    ci_len=float((hi_block - lo_block).mean()),
                    cp=float(covered.mean()),
                )
                rows.append(row)
    return MetricsTable(METRIC_COLUMNS, tuple(rows))


@dataclass(frozen=True)
class MisspecConfig:
    """Weight-misspecification rate experiment (order-1 process).

    For each rate r and sample size T, the fitted weight matrix is
    w + pi with max absolute row sum target_scale * T^-r, drawn fresh
    per replicate with row sums preserved; coverage and estimation
    error are compared against fits under the true weights.
    """

    n: int = 10
    a_diag: tuple = (0.5,) * 10
    b_diag: tuple = (0.8, -0.8) * 5
    width: int = 1
    sigma2: float = 1.0
    rates: tuple = (0.5, 2.0 / 3.0)
    t_grid: tuple = (100, 1000, 10000)
    n_reps: int = 100
    target_scale: float = 1.0
    level: float = 0.95
    burn_in: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "a_diag", tuple(float(v) for v in self.a_diag))
        object.__setattr__(self, "b_diag", tuple(float(v) for v in self.b_diag))
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "t_grid", tuple(int(t) for t in self.t_grid))
        if len(self.a_diag) != self.n or len(self.b_diag) != self.n:
            raise DataError(
                f"a_diag and b_diag must each hold {self.n} values"
            )
        if self.target_scale < 0:
            raise DataError(
                f"target_scale must be nonnegative, got {self.target_scale}"
            )
        if any(r <= 0 for r in self.rates):
            raise DataError(f"rates must be positive, got {self.rates}")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCENARIO_SCHEMA_VERSION,
            "kind": "misspec",
            "n": self.n,
            "a_diag": list(self.a_diag),
            "b_diag": list(self.b_diag),
            "width": self.width,
            "sigma2": self.sigma2,
            "rates": list(self.rates),
            "t_grid": list(self.t_grid),
            "n_reps": self.n_reps,
            "target_scale": self.target_scale,
            "level": self.level,
            "burn_in": self.burn_in,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MisspecConfig":
        d = dict(d)
        version = d.pop("schema_version", SCENARIO_SCHEMA_VERSION)
        d.pop("kind", None)
        if version != SCENARIO_SCHEMA_VERSION:
            raise DataError(
                f"scenario schema version {version} not supported "
                f"(this build reads version {SCENARIO_SCHEMA_VERSION})"
            )
        try:
            return cls(**d)
        except TypeError as exc:
            raise DataError(f"bad misspec fields: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "MisspecConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DataError(f"scenario JSON does not parse: {exc}") from None

    def spec(self) -> NarSpec:
        w = banded_weights(self.n, self.width)
        return NarSpec(np.asarray(self.a_diag)[None, :],
                       np.asarray(self.b_diag)[None, :],
                       np.zeros((self.n, 0)), w)


def _run_misspec_rep(cfg: MisspecConfig, rate: float, t_len: int, rep: int):
    rng = replicate_rng(cfg.seed, rep)
    spec = cfg.spec()
    model = GaussianIid(cfg.n, cfg.sigma2)
    sim = simulate(spec, model, SimConfig(t_len, burn_in=cfg.burn_in), rng=rng)
    target = cfg.target_scale * float(t_len) ** (-rate)
    w_mis, _ = perturb_weights(spec.w, target, preserve_row_sums=True, rng=rng)
    truth = flatten(spec).values
    out = []
    try:
        for w_used in (spec.w, w_mis):
            fit = fit_ols(sim.x, None, w_used, 1, 1)
            lo, hi = confidence_intervals(fit, cfg.level)
            err = float(np.linalg.norm(fit.beta.values - truth))
            covered = _covered(lo[fit.free_idx], hi[fit.free_idx],
                               truth[fit.free_idx])
            out.append((err, covered))
    except NetarError:
        return None
    return out


def _star_misspec(args):
    return _run_misspec_rep(*args)


def run_misspec_experiment(cfg: MisspecConfig, threads: int = 1) -> MetricsTable:
    """Estimation-error and coverage curves under true and perturbed W.

    Emits one row per (rate, T, variant) with variant "true_w" or
    "misspec"; a replicate failing under either variant is dropped from
    both so the columns stay comparable.
    """
    report = is_stable(cfg.spec())
    if not report.stable:
        raise DataError(
            f"misspec spec is unstable (spectral radius {report.radius:.6g})"
        )
    rows = []
    for rate in cfg.rates:
        for t_len in cfg.t_grid:
            args = [(cfg, rate, t_len, rep) for rep in range(cfg.n_reps)]
            reps = [r for r in
                    _map_replicates(_star_misspec, args, threads)
                    if r is not None]
            n_ok = len(reps)
            for vi, variant in enumerate(("true_w", "misspec")):
                if n_ok == 0:
                    rows.append({"rate": f"{rate:.6g}", "T": t_len,
                                 "variant": variant, "est_error": np.nan,
                                 "cp": np.nan, "n_ok": 0})
                    continue
                errs = np.array([r[vi][0] for r in reps])
                cov = np.concatenate([r[vi][1] for r in reps])
                rows.append({"rate": f"{rate:.6g}", "T": t_len,
                             "variant": variant,
                             "est_error": float(errs.mean()),
                             "cp": float(cov.mean()), "n_ok": n_ok})
    return MetricsTable(CURVE_COLUMNS, tuple(rows))
