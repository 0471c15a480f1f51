"""Batch PNG rendering for metrics tables, misspecification curves, and fits.

Every renderer targets the Agg backend (no display needed), writes files
next to the tabular output, and returns the paths it wrote so callers
can report them.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .errors import DataError
from .estimation import FitResult, confidence_intervals

__all__ = [
    "render_metrics_figures",
    "render_misspec_figure",
    "render_fit_figure",
    "render_forecast_figure",
]

_METRIC_NEEDED = ("scenario_id", "estimator", "group", "T", "rmse", "ci_len", "cp")
_CURVE_NEEDED = ("rate", "T", "variant", "est_error", "cp")


def _check_columns(frame: pd.DataFrame, needed, what: str) -> None:
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise DataError(f"{what} table is missing columns {missing}")


def render_metrics_figures(frame: pd.DataFrame, out_dir,
                           stem: str = "metrics") -> list[Path]:
    """One two-panel figure per estimator: group RMSE and coverage over T.

    Rows with no successful replicates (NaN metrics) are skipped.
    """
    _check_columns(frame, _METRIC_NEEDED, "metrics")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for est in pd.unique(frame["estimator"]):
        sub = frame[frame["estimator"] == est]
        scen = str(sub["scenario_id"].iloc[0])
        fig, (ax_rmse, ax_cp) = plt.subplots(1, 2, figsize=(10.0, 4.0))
        for group in pd.unique(sub["group"]):
            rows = sub[sub["group"] == group].sort_values("T")
            ok = rows["rmse"].notna()
            ax_rmse.plot(rows["T"][ok], rows["rmse"][ok],
                         marker="o", label=str(group))
            ax_cp.plot(rows["T"][ok], rows["cp"][ok], marker="o")
        ax_rmse.set_xlabel("T")
        ax_rmse.set_ylabel("relative RMSE")
        ax_rmse.set_title(f"{scen}: {est} estimation error")
        ax_rmse.legend(fontsize="x-small", ncol=2)
        ax_cp.axhline(0.95, color="gray", linestyle="--", linewidth=1.0)
        ax_cp.set_xlabel("T")
        ax_cp.set_ylabel("coverage")
        ax_cp.set_ylim(0.0, 1.05)
        ax_cp.set_title(f"{scen}: {est} CI coverage")
        fig.tight_layout()
        path = out_dir / f"{stem}_{est}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def render_misspec_figure(frame: pd.DataFrame, out_dir,
                          stem: str = "misspec") -> list[Path]:
    """Estimation error (log-log) and coverage over T for each rate/variant."""
    _check_columns(frame, _CURVE_NEEDED, "misspecification curve")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, (ax_err, ax_cp) = plt.subplots(1, 2, figsize=(10.0, 4.0))
    styles = {"true_w": "-", "misspec": "--"}
    for i, rate in enumerate(pd.unique(frame["rate"])):
        color = f"C{i}"
        for variant in pd.unique(frame["variant"]):
            rows = frame[(frame["rate"] == rate)
                         & (frame["variant"] == variant)].sort_values("T")
            ok = rows["est_error"].notna()
            label = f"rate {rate}, {variant}"
            ax_err.loglog(rows["T"][ok], rows["est_error"][ok],
                          styles.get(str(variant), "-"), color=color,
                          marker="o", label=label)
            ax_cp.semilogx(rows["T"][ok], rows["cp"][ok],
                           styles.get(str(variant), "-"), color=color,
                           marker="o")
    ax_err.set_xlabel("T")
    ax_err.set_ylabel("coefficient error")
    ax_err.set_title("estimation error under weight misspecification")
    ax_err.legend(fontsize="x-small")
    ax_cp.axhline(0.95, color="gray", linestyle="--", linewidth=1.0)
    ax_cp.set_xlabel("T")
    ax_cp.set_ylabel("coverage")
    ax_cp.set_ylim(0.0, 1.05)
    ax_cp.set_title("CI coverage under weight misspecification")
    fig.tight_layout()
    path = out_dir / f"{stem}.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def _fit_sections(fit: FitResult):
    """(label, positions) per coefficient block, free positions only."""
    n = fit.n
    q = fit.q
    sections = []
    for lag in range(1, q + 1):
        base = 2 * n * (lag - 1)
        if lag <= fit.q1:
            sections.append((f"a lag {lag}", np.arange(base, base + n)))
        if lag <= fit.q2:
            sections.append((f"b lag {lag}", np.arange(base + n, base + 2 * n)))
    for k in range(1, fit.p + 1):
        base = 2 * n * q + (k - 1) * n
        sections.append((f"covariate {k}", np.arange(base, base + n)))
    return sections


def render_fit_figure(fit: FitResult, out_path, level: float = 0.95) -> Path:
    """Per-node estimates with pointwise CIs, one panel strip per block."""
    lo, hi = confidence_intervals(fit, level)
    beta = fit.beta.values
    sections = _fit_sections(fit)
    fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(sections) * 2), 4.0))
    x0 = 0
    ticks, labels = [], []
    for i, (label, pos) in enumerate(sections):
        xs = x0 + np.arange(pos.size)
        err = np.vstack([beta[pos] - lo[pos], hi[pos] - beta[pos]])
        ax.errorbar(xs, beta[pos], yerr=err, fmt="o", markersize=3,
                    color=f"C{i}", ecolor=f"C{i}", elinewidth=1.0)
        ticks.append(x0 + (pos.size - 1) / 2.0)
        labels.append(label)
        x0 += pos.size + 2
        if i < len(sections) - 1:
            ax.axvline(x0 - 1.5, color="lightgray", linewidth=0.8)
    ax.axhline(0.0, color="gray", linestyle=":", linewidth=0.8)
    ax.set_xticks(ticks)
    ax.set_xticklabels(labels, fontsize="small")
    ax.set_ylabel("estimate")
    ax.set_title(f"{fit.estimator} coefficients with {int(level * 100)}% CIs")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_forecast_figure(actual, forecast, out_path) -> Path:
    """Scatter of forecasts against realized values with the identity line."""
    actual = np.asarray(actual, dtype=float).ravel()
    forecast = np.asarray(forecast, dtype=float).ravel()
    if actual.shape != forecast.shape:
        raise DataError(
            f"actual and forecast sizes differ: {actual.size} vs {forecast.size}"
        )
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.scatter(actual, forecast, s=8, alpha=0.6)
    lim_lo = float(min(actual.min(), forecast.min()))
    lim_hi = float(max(actual.max(), forecast.max()))
    pad = 0.05 * (lim_hi - lim_lo or 1.0)
    lims = (lim_lo - pad, lim_hi + pad)
    ax.plot(lims, lims, color="gray", linestyle="--", linewidth=1.0)
    ax.set_xlim(lims)
    ax.set_ylim(lims)
    ax.set_xlabel("actual")
    ax.set_ylabel("one-step forecast")
    ax.set_title("rolling one-step forecasts")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
