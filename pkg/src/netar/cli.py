"""Command line front end.

Subcommands cover simulation, stability reporting, estimation,
forecasting, lag-order selection, bootstrap intervals, Monte-Carlo
replication, and geographic weight construction.  Each subcommand
echoes its effective configuration as one JSON line on stderr so runs
are reproducible from logs; data output goes to --out or stdout.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from pathlib import Path

import click
import numpy as np
import pandas as pd

from .errors import DataError, NetarError, NumericalError
from .error_covariance import sigma_sar
from .estimation import (
    RidgePenalty,
    confidence_intervals,
    fit_egls,
    fit_gls,
    fit_ols,
    fit_ridge_ols,
)
from .harness import (
    MisspecConfig,
    Scenario,
    run_misspec_experiment,
    run_scenario,
)
from .inference import (
    forecast_one_step,
    pmse,
    residual_bootstrap,
    select_q_bic,
)
from .model import (
    CoefVector,
    NarSpec,
    is_stable,
    load_weights,
    sufficient_condition,
    unflatten,
)
from .panel import PanelDataset, build_geo_weights, export_panel, ingest_panel
from .simulation import (
    FactorGaussian,
    GaussianIid,
    SarGaussian,
    SimConfig,
    StudentT,
    simulate,
)

SPEC_FIELDS = ("n", "q1", "q2", "p", "a", "b", "gamma", "w_path")


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--seed", type=int, default=None,
              help="RNG seed; for replicate it overrides the scenario's seed.")
@click.option("--threads", type=click.IntRange(1), default=1,
              help="Worker processes for replicate and bootstrap.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Output file; stdout when omitted.")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]),
              default=None,
              help="Output format; default depends on the subcommand.")
@click.pass_context
def cli(ctx, seed, threads, out, fmt):
    """Network autoregression toolkit."""
    ctx.obj = {"seed": seed, "threads": threads, "out": out, "fmt": fmt}


def _seed(ctx) -> int:
    v = ctx.obj["seed"]
    return 0 if v is None else int(v)


def _fmt(ctx, default: str) -> str:
    return ctx.obj["fmt"] or default


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    return v


def _echo_config(ctx, command: str, fmt: str, **extra) -> None:
    cfg = {"command": command, "seed": _seed(ctx),
           "threads": ctx.obj["threads"], "out": ctx.obj["out"],
           "format": fmt}
    for key, val in extra.items():
        cfg[key] = _jsonable(val)
    click.echo(json.dumps(cfg, sort_keys=True), err=True)


def _write_text(ctx, text: str) -> None:
    out = ctx.obj["out"]
    if out is None:
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text, encoding="utf-8", newline="\n")


def _json_text(payload) -> str:
    return json.dumps(payload, indent=2) + "\n"


def _cell(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _load_json(path, what: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {what} {path}: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{what} {path} does not parse as JSON: {exc}") from None


def _load_matrix(path, what: str) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {what} from {path}: {exc}") from None


def _load_spec(path) -> NarSpec:
    """Model spec JSON: {n, q1, q2, p, a, b, gamma, w_path}.

    w_path is resolved relative to the spec file when not absolute.
    """
    cfg = _load_json(path, "spec file")
    if not isinstance(cfg, dict):
        raise DataError(f"spec file {path} must hold a JSON object")
    missing = [k for k in SPEC_FIELDS if k not in cfg]
    if missing:
        raise DataError(f"spec file {path} is missing fields {missing}")
    n, q1, q2, p = (int(cfg[k]) for k in ("n", "q1", "q2", "p"))
    w_path = Path(cfg["w_path"])
    if not w_path.is_absolute():
        w_path = Path(path).parent / w_path
    w = load_weights(w_path)
    if w.shape != (n, n):
        raise DataError(
            f"weight matrix {w_path} is {w.shape}, spec says n={n}"
        )
    a = np.asarray(cfg["a"], dtype=float)
    b = np.asarray(cfg["b"], dtype=float)
    gamma = np.asarray(cfg["gamma"], dtype=float) if p else np.zeros((n, 0))
    if a.shape != (q1, n):
        raise DataError(f"a must be shape ({q1}, {n}), got {a.shape}")
    if b.shape != (q2, n):
        raise DataError(f"b must be shape ({q2}, {n}), got {b.shape}")
    if p and gamma.shape != (n, p):
        raise DataError(f"gamma must be shape ({n}, {p}), got {gamma.shape}")
    return NarSpec(a=a, b=b, gamma=gamma, w=w)


def _data_options(f):
    """Shared panel-ingestion options for commands that fit real data."""
    opts = [
        click.option("--data", "data_path", required=True,
                     help="Long-format panel CSV."),
        click.option("--w", "w_path", required=True,
                     help="Row-stochastic weight matrix CSV (headerless)."),
        click.option("--time-col", default="time", show_default=True),
        click.option("--node-col", default="node", show_default=True),
        click.option("--value-col", default="value", show_default=True),
        click.option("--covariate-cols", default="",
                     help="Comma-separated covariate column names."),
        click.option("--gap-policy",
                     type=click.Choice(["error", "forward_fill", "drop_node"]),
                     default="error", show_default=True),
        click.option("--log", "log_transform", is_flag=True,
                     help="Model the natural log of the response."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _estimator_options(f):
    opts = [
        click.option("--estimator",
                     type=click.Choice(["ols", "ridge", "gls", "egls"]),
                     default="ols", show_default=True),
        click.option("--cov", type=click.Choice(["sar", "factor"]),
                     default="sar", show_default=True,
                     help="Residual covariance family for egls."),
        click.option("--phi-path", default=None,
                     help="Spatial matrix for the sar family; defaults to --w."),
        click.option("--sigma-path", default=None,
                     help="Known error covariance CSV for the gls estimator."),
        click.option("--ridge-lambda", type=float, default=None,
                     help="Ridge weight for all groups; default T^-0.6."),
        click.option("--kmax", type=int, default=None,
                     help="Factor-count search bound for the factor family."),
        click.option("--k", "k_fixed", type=int, default=None,
                     help="Fix the factor count instead of selecting it."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _ingest(data_path, time_col, node_col, value_col, covariate_cols,
            gap_policy, log_transform):
    covs = tuple(c.strip() for c in covariate_cols.split(",") if c.strip())
    ds = ingest_panel(data_path, time_col=time_col, node_col=node_col,
                      value_col=value_col, covariate_cols=covs,
                      gap_policy=gap_policy, log_transform=log_transform)
    return ds, ds.x, (ds.y if ds.p else None)


def _run_fit(x, y, w, q1, q2, estimator, cov, phi, sigma, ridge_lambda,
             kmax, k_fixed):
    if estimator == "ols":
        return fit_ols(x, y, w, q1, q2)
    if estimator == "ridge":
        pen = None
        if ridge_lambda is not None:
            pen = RidgePenalty(ridge_lambda, ridge_lambda, ridge_lambda)
        return fit_ridge_ols(x, y, w, q1, q2, pen)
    if estimator == "gls":
        if sigma is None:
            raise click.UsageError(
                "--sigma-path is required for the gls estimator"
            )
        return fit_gls(x, y, w, q1, q2, sigma)
    if cov == "sar" and phi is None:
        phi = w
    return fit_egls(x, y, w, q1, q2, cov=cov, phi=phi, kmax=kmax, k=k_fixed)


def _coef_records(coef: CoefVector, node_ids, arrays: dict) -> list:
    """Per-coefficient dicts in a/b/gamma order; padded positions omitted.

    For kind gamma the lag field holds the covariate index.
    """
    recs = []
    blocks = (("a", coef.q1), ("b", coef.q2), ("gamma", coef.p))
    for kind, count in blocks:
        for lag in range(1, count + 1):
            for node in range(coef.n):
                pos = coef.index(kind, lag, node)
                rec = {"node": node_ids[node], "lag": lag, "kind": kind}
                for name, vec in arrays.items():
                    rec[name] = float(vec[pos])
                recs.append(rec)
    return recs


@cli.command("simulate")
@click.option("--spec", "spec_path", required=True,
              help="Model spec JSON: {n, q1, q2, p, a, b, gamma, w_path}.")
@click.option("--t-len", required=True, type=click.IntRange(1),
              help="Retained sample length.")
@click.option("--burn-in", type=click.IntRange(0), default=200,
              show_default=True)
@click.option("--error", "error_kind",
              type=click.Choice(["iid", "sar", "factor", "t"]),
              default="iid", show_default=True)
@click.option("--sigma2", type=float, default=1.0, show_default=True,
              help="iid variance; idiosyncratic variance for factor errors.")
@click.option("--rho", type=float, default=0.5, show_default=True,
              help="Spatial autoregression parameter (sar, t with sar scale).")
@click.option("--sigma-u2", type=float, default=1.0, show_default=True)
@click.option("--phi-path", default=None,
              help="Spatial matrix for sar errors; defaults to the spec's W.")
@click.option("--nu", type=float, default=4.0, show_default=True,
              help="Degrees of freedom for t errors.")
@click.option("--t-scale", type=click.Choice(["iid", "sar"]), default="iid",
              show_default=True, help="Scale matrix family for t errors.")
@click.option("--loadings-path", default=None,
              help="Loading matrix CSV for factor errors (N rows).")
@click.option("--allow-unstable", is_flag=True)
@click.pass_context
def simulate_cmd(ctx, spec_path, t_len, burn_in, error_kind, sigma2, rho,
                 sigma_u2, phi_path, nu, t_scale, loadings_path,
                 allow_unstable):
    """Simulate a panel and emit it in long format."""
    spec = _load_spec(spec_path)
    n = spec.n_nodes
    phi = load_weights(phi_path) if phi_path else spec.w
    if error_kind == "iid":
        model = GaussianIid(n, sigma2)
    elif error_kind == "sar":
        model = SarGaussian(rho, phi, sigma_u2)
    elif error_kind == "factor":
        if loadings_path is None:
            raise click.UsageError(
                "--loadings-path is required for factor errors"
            )
        loadings = _load_matrix(loadings_path, "factor loadings")
        model = FactorGaussian(loadings, sigma2)
    else:
        if t_scale == "sar":
            scale = sigma_sar(rho, sigma_u2, phi)
        else:
            scale = sigma2 * np.eye(n)
        model = StudentT(nu, scale)
    cfg = SimConfig(t_len=t_len, burn_in=burn_in, seed=_seed(ctx),
                    allow_unstable=allow_unstable)
    sim = simulate(spec, model, cfg)
    fmt = _fmt(ctx, "csv")
    _echo_config(ctx, "simulate", fmt, spec=str(spec_path), t_len=t_len,
                 burn_in=burn_in, error=error_kind)
    if fmt == "json":
        payload = {"nodes": [f"n{i}" for i in range(n)],
                   "times": list(range(t_len)),
                   "x": sim.x.tolist(), "y": sim.y.tolist()}
        _write_text(ctx, _json_text(payload))
        return
    ds = PanelDataset(node_ids=tuple(f"n{i}" for i in range(n)),
                      times=tuple(range(t_len)), x=sim.x, y=sim.y,
                      covariate_names=tuple(f"y{j}" for j in
                                            range(1, spec.p + 1)),
                      log_applied=False)
    out = ctx.obj["out"]
    if out is None:
        buf = io.StringIO()
        export_panel(ds, buf)
        click.echo(buf.getvalue(), nl=False)
    else:
        export_panel(ds, out)


@cli.command("stability")
@click.option("--spec", "spec_path", required=True,
              help="Model spec JSON: {n, q1, q2, p, a, b, gamma, w_path}.")
@click.pass_context
def stability_cmd(ctx, spec_path):
    """Report the spectral radius and stationarity checks of a spec."""
    spec = _load_spec(spec_path)
    report = is_stable(spec)
    suff = sufficient_condition(spec)
    fmt = _fmt(ctx, "json")
    _echo_config(ctx, "stability", fmt, spec=str(spec_path))
    payload = {"radius": report.radius, "stable": report.stable,
               "sufficient_condition": suff}
    if fmt == "json":
        _write_text(ctx, _json_text(payload))
    else:
        _write_text(ctx, _csv_text(
            ("radius", "stable", "sufficient_condition"),
            [(report.radius, report.stable, suff)]))


@cli.command("fit")
@_data_options
@click.option("--q1", required=True, type=click.IntRange(1))
@click.option("--q2", required=True, type=click.IntRange(1))
@_estimator_options
@click.option("--level", type=float, default=0.95, show_default=True)
@click.option("--figure", "figure_path", default=None,
              help="Render a coefficient-CI PNG to this path.")
@click.pass_context
def fit_cmd(ctx, data_path, w_path, time_col, node_col, value_col,
            covariate_cols, gap_policy, log_transform, q1, q2, estimator,
            cov, phi_path, sigma_path, ridge_lambda, kmax, k_fixed, level,
            figure_path):
    """Fit the autoregression to a long-format panel CSV."""
    ds, x, y = _ingest(data_path, time_col, node_col, value_col,
                       covariate_cols, gap_policy, log_transform)
    w = load_weights(w_path)
    phi = load_weights(phi_path) if phi_path else None
    sigma = _load_matrix(sigma_path, "error covariance") if sigma_path else None
    res = _run_fit(x, y, w, q1, q2, estimator, cov, phi, sigma,
                   ridge_lambda, kmax, k_fixed)
    lo, hi = confidence_intervals(res, level)
    recs = _coef_records(res.beta, ds.node_ids,
                         {"estimate": res.beta.values, "se": res.se(),
                          "ci_lo": lo, "ci_hi": hi})
    spec_hat = unflatten(res.beta, res.n, res.q1, res.q2, res.p, res.w)
    radius_report = is_stable(spec_hat)
    payload = {"estimator": res.estimator, "q1": res.q1, "q2": res.q2,
               "coefficients": recs, "sigma_kind": res.sigma_kind,
               "diagnostics": {
                   "radius": radius_report.radius,
                   "sufficient_condition": sufficient_condition(spec_hat)}}
    detail = res.sigma_detail
    if detail is not None and hasattr(detail, "rho"):
        payload["rho_hat"] = float(detail.rho)
    elif detail is not None and hasattr(detail, "k"):
        payload["k_hat"] = int(detail.k)
    fmt = _fmt(ctx, "json")
    _echo_config(ctx, "fit", fmt, data=str(data_path), estimator=estimator,
                 q1=q1, q2=q2, level=level,
                 figure=figure_path and str(figure_path))
    if fmt == "json":
        _write_text(ctx, _json_text(payload))
    else:
        header = ("node", "lag", "kind", "estimate", "se", "ci_lo", "ci_hi")
        _write_text(ctx, _csv_text(header, [
            tuple(r[c] for c in header) for r in recs]))
    if figure_path:
        from .figures import render_fit_figure
        render_fit_figure(res, figure_path, level)


@cli.command("forecast")
@_data_options
@click.option("--q1", required=True, type=click.IntRange(1))
@click.option("--q2", required=True, type=click.IntRange(1))
@_estimator_options
@click.option("--test-len", type=click.IntRange(0), default=0,
              help="Hold out the last TEST_LEN times for rolling one-step "
                   "evaluation; 0 forecasts the next unseen step.")
@click.option("--figure", "figure_path", default=None,
              help="Render a forecast-vs-actual PNG (rolling mode only).")
@click.pass_context
def forecast_cmd(ctx, data_path, w_path, time_col, node_col, value_col,
                 covariate_cols, gap_policy, log_transform, q1, q2,
                 estimator, cov, phi_path, sigma_path, ridge_lambda, kmax,
                 k_fixed, test_len, figure_path):
    """One-step forecasts from a fitted model."""
    ds, x, y = _ingest(data_path, time_col, node_col, value_col,
                       covariate_cols, gap_policy, log_transform)
    w = load_weights(w_path)
    phi = load_weights(phi_path) if phi_path else None
    sigma = _load_matrix(sigma_path, "error covariance") if sigma_path else None
    fmt = _fmt(ctx, "csv")
    q = max(q1, q2)
    if test_len == 0:
        if figure_path:
            raise click.UsageError("--figure needs --test-len")
        res = _run_fit(x, y, w, q1, q2, estimator, cov, phi, sigma,
                       ridge_lambda, kmax, k_fixed)
        fc = forecast_one_step(res, x, y[-1] if y is not None else None)
        _echo_config(ctx, "forecast", fmt, data=str(data_path),
                     estimator=estimator, q1=q1, q2=q2, test_len=0)
        if fmt == "json":
            payload = {"forecast": [
                {"node": ds.node_ids[i], "forecast": float(fc[i])}
                for i in range(ds.n_nodes)]}
            _write_text(ctx, _json_text(payload))
        else:
            _write_text(ctx, _csv_text(("node", "forecast"), [
                (ds.node_ids[i], float(fc[i])) for i in range(ds.n_nodes)]))
        return
    t_total = ds.t_len
    if t_total - test_len < q + 2:
        raise DataError(
            f"test length {test_len} leaves {t_total - test_len} training "
            f"rows; need at least {q + 2}"
        )
    x_train = x[: t_total - test_len]
    y_train = y[: t_total - test_len] if y is not None else None
    res = _run_fit(x_train, y_train, w, q1, q2, estimator, cov, phi, sigma,
                   ridge_lambda, kmax, k_fixed)
    fcs = np.empty((test_len, ds.n_nodes))
    for j in range(test_len):
        t_idx = t_total - test_len + j
        y_prev = y[t_idx - 1] if y is not None else None
        fcs[j] = forecast_one_step(res, x[:t_idx], y_prev)
    actual = x[t_total - test_len :]
    errors = actual - fcs
    eval_x = x[t_total - test_len - q :]
    eval_y = y[t_total - test_len - q :] if y is not None else None
    mse = pmse(res, eval_x, eval_y)
    _echo_config(ctx, "forecast", fmt, data=str(data_path),
                 estimator=estimator, q1=q1, q2=q2, test_len=test_len,
                 pmse=mse)
    rows = []
    for j in range(test_len):
        t_label = ds.times[t_total - test_len + j]
        for i in range(ds.n_nodes):
            rows.append((t_label, ds.node_ids[i], float(fcs[j, i]),
                         float(actual[j, i]), float(errors[j, i])))
    if fmt == "json":
        payload = {"pmse": mse, "rows": [
            {"t": _jsonable(r[0]), "node": r[1], "forecast": r[2],
             "actual": r[3], "error": r[4]} for r in rows]}
        _write_text(ctx, _json_text(payload))
    else:
        _write_text(ctx, _csv_text(
            ("t", "node", "forecast", "actual", "error"), rows))
    if figure_path:
        from .figures import render_forecast_figure
        render_forecast_figure(actual, fcs, figure_path)


@cli.command("select")
@_data_options
@click.option("--qmax", required=True, type=click.IntRange(1),
              help="Largest common lag order to consider.")
@click.pass_context
def select_cmd(ctx, data_path, w_path, time_col, node_col, value_col,
               covariate_cols, gap_policy, log_transform, qmax):
    """Choose the lag order by BIC over a common sample window."""
    ds, x, y = _ingest(data_path, time_col, node_col, value_col,
                       covariate_cols, gap_policy, log_transform)
    w = load_weights(w_path)
    sel = select_q_bic(x, y, w, qmax)
    fmt = _fmt(ctx, "json")
    _echo_config(ctx, "select", fmt, data=str(data_path), qmax=qmax)
    if fmt == "json":
        payload = {"q_hat": sel.q_hat,
                   "bic": [float(v) for v in sel.bic_values],
                   "regularized": list(sel.regularized),
                   "t_common": sel.t_common}
        _write_text(ctx, _json_text(payload))
    else:
        rows = [(qq + 1, float(sel.bic_values[qq]), sel.regularized[qq])
                for qq in range(len(sel.bic_values))]
        _write_text(ctx, _csv_text(("q", "bic", "regularized"), rows))


@cli.command("bootstrap")
@_data_options
@click.option("--q1", required=True, type=click.IntRange(1))
@click.option("--q2", required=True, type=click.IntRange(1))
@click.option("--estimator", type=click.Choice(["ols", "egls"]),
              default="ols", show_default=True)
@click.option("--cov", type=click.Choice(["sar", "factor"]), default="sar",
              show_default=True)
@click.option("--phi-path", default=None,
              help="Spatial matrix for the sar family; defaults to --w.")
@click.option("--b-reps", type=click.IntRange(2), default=500,
              show_default=True)
@click.option("--level", type=float, default=0.95, show_default=True)
@click.pass_context
def bootstrap_cmd(ctx, data_path, w_path, time_col, node_col, value_col,
                  covariate_cols, gap_policy, log_transform, q1, q2,
                  estimator, cov, phi_path, b_reps, level):
    """Residual-bootstrap percentile intervals for the coefficients."""
    ds, x, y = _ingest(data_path, time_col, node_col, value_col,
                       covariate_cols, gap_policy, log_transform)
    w = load_weights(w_path)
    phi = load_weights(phi_path) if phi_path else None
    if estimator == "egls" and cov == "sar" and phi is None:
        phi = w
    res = residual_bootstrap(x, y, w, q1, q2, estimator=estimator,
                             b_reps=b_reps, level=level, seed=_seed(ctx),
                             cov=cov, phi=phi,
                             threads=ctx.obj["threads"])
    coef = res.beta_hat
    recs = _coef_records(coef, ds.node_ids,
                         {"estimate": coef.values, "ci_lo": res.ci_lo,
                          "ci_hi": res.ci_hi})
    fmt = _fmt(ctx, "csv")
    _echo_config(ctx, "bootstrap", fmt, data=str(data_path),
                 estimator=estimator, q1=q1, q2=q2, b_reps=b_reps,
                 level=level, n_fail=res.n_fail)
    if fmt == "json":
        payload = {"estimator": res.estimator, "b_reps": res.b_reps,
                   "n_fail": res.n_fail, "level": res.level,
                   "coefficients": recs}
        _write_text(ctx, _json_text(payload))
    else:
        header = ("node", "lag", "kind", "estimate", "ci_lo", "ci_hi")
        _write_text(ctx, _csv_text(header, [
            tuple(r[c] for c in header) for r in recs]))


@cli.command("replicate")
@click.option("--scenario", "scenario_path", required=True,
              help="Scenario JSON; kind 'misspec' runs the weight-"
                   "misspecification experiment.")
@click.option("--no-figures", is_flag=True,
              help="Skip PNG rendering next to the output CSV.")
@click.pass_context
def replicate_cmd(ctx, scenario_path, no_figures):
    """Run a Monte-Carlo experiment and emit its metrics table."""
    raw = _load_json(scenario_path, "scenario file")
    if not isinstance(raw, dict):
        raise DataError(f"scenario file {scenario_path} must hold a JSON object")
    kind = raw.get("kind", "metrics")
    seed_override = ctx.obj["seed"]
    threads = ctx.obj["threads"]
    if kind == "misspec":
        cfg = MisspecConfig.from_dict(raw)
        if seed_override is not None:
            cfg = dataclasses.replace(cfg, seed=seed_override)
        table = run_misspec_experiment(cfg, threads=threads)
    elif kind == "metrics":
        raw = {k: v for k, v in raw.items() if k != "kind"}
        cfg = Scenario.from_dict(raw)
        if seed_override is not None:
            cfg = dataclasses.replace(cfg, seed=seed_override)
        table = run_scenario(cfg, threads=threads)
    else:
        raise DataError(
            f"unknown scenario kind {kind!r}; use 'metrics' or 'misspec'"
        )
    fmt = _fmt(ctx, "csv")
    frame = table.to_frame()
    if fmt == "json":
        rows = [{k: _jsonable(v) for k, v in rec.items()}
                for rec in frame.to_dict("records")]
        _write_text(ctx, _json_text({"columns": list(table.columns),
                                     "rows": rows}))
    else:
        _write_text(ctx, table.to_csv() or "")
    out = ctx.obj["out"]
    figures = []
    if out is None:
        if not no_figures:
            click.echo("figures skipped: no --out file to place them beside",
                       err=True)
    elif not no_figures:
        from .figures import render_metrics_figures, render_misspec_figure
        out_path = Path(out)
        if kind == "misspec":
            figures = render_misspec_figure(frame, out_path.parent,
                                            stem=out_path.stem + "_curves")
        else:
            figures = render_metrics_figures(frame, out_path.parent,
                                             stem=out_path.stem)
    _echo_config(ctx, "replicate", fmt, scenario=str(scenario_path),
                 kind=kind, seed=cfg.seed, figures=[str(p) for p in figures])


@cli.command("geo-weights")
@click.option("--coords", "coords_path", required=True,
              help="CSV with node, latitude, and longitude columns.")
@click.option("--node-col", default="node", show_default=True)
@click.option("--lat-col", default="lat", show_default=True)
@click.option("--lon-col", default="lon", show_default=True)
@click.option("--cutoff-km", type=float, default=500.0, show_default=True)
@click.option("--phi-out", default=None,
              help="Also write the no-cutoff matrix here (csv format).")
@click.pass_context
def geo_weights_cmd(ctx, coords_path, node_col, lat_col, lon_col, cutoff_km,
                    phi_out):
    """Inverse-distance weight matrices from node coordinates."""
    try:
        df = pd.read_csv(coords_path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(
            f"cannot read coordinates CSV {coords_path}: {exc}"
        ) from None
    missing = [c for c in (node_col, lat_col, lon_col) if c not in df.columns]
    if missing:
        raise DataError(
            f"coordinates CSV {coords_path} is missing columns {missing}"
        )
    ids = tuple(str(v) for v in df[node_col])
    coords = df[[lat_col, lon_col]].to_numpy(dtype=float)
    gw = build_geo_weights(coords, cutoff_km, node_ids=ids)
    fmt = _fmt(ctx, "json")
    _echo_config(ctx, "geo-weights", fmt, coords=str(coords_path),
                 cutoff_km=cutoff_km, n_nodes=len(ids))
    if fmt == "json":
        payload = {"node_ids": list(gw.node_ids),
                   "cutoff_km": gw.cutoff_km,
                   "w": gw.w.tolist(), "phi": gw.phi.tolist()}
        _write_text(ctx, _json_text(payload))
        return
    def matrix_text(m):
        return "\n".join(
            ",".join(format(v, ".17g") for v in row) for row in m) + "\n"
    _write_text(ctx, matrix_text(gw.w))
    if phi_out:
        Path(phi_out).write_text(matrix_text(gw.phi), encoding="utf-8",
                                 newline="\n")


def main(argv=None) -> int:
    """Entry point with library errors mapped to exit codes."""
    try:
        cli.main(args=argv, prog_name="netar", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except NumericalError as exc:
        click.echo(f"numerical error: {exc}", err=True)
        return 3
    except NetarError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    return 0
