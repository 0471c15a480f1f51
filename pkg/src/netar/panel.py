"""Long-format panel ingestion and distance-based weight construction.

ingest_panel pivots a long CSV (one row per time and node) into the
dense response/covariate arrays the estimators expect, with an explicit
policy for missing cells.  build_geo_weights turns node coordinates
into the two inverse-distance matrices used for fitting: a cutoff
thresholded W and an unthresholded companion for the error model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DataError

__all__ = [
    "EARTH_RADIUS_KM",
    "PanelDataset",
    "GeoWeights",
    "ingest_panel",
    "export_panel",
    "haversine_km",
    "build_geo_weights",
]

EARTH_RADIUS_KM = 6371.0088

GAP_POLICIES = ("error", "forward_fill", "drop_node")


@dataclass(frozen=True)
class PanelDataset:
    """Dense panel with its ordering recorded.

    times are sorted ascending; node_ids keep first-appearance order
    from the source file.  x is (T, N); y is (T, N, p) in
    covariate_names order.  log_applied marks whether x holds logs of
    the source values.
    """

    node_ids: tuple
    times: tuple
    x: np.ndarray
    y: np.ndarray
    covariate_names: tuple
    log_applied: bool

    def __post_init__(self):
        self.x.setflags(write=False)
        self.y.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def t_len(self) -> int:
        return len(self.times)

    @property
    def p(self) -> int:
        return len(self.covariate_names)


def _pivot_column(df, time_col, node_col, col, times, nodes):
    wide = df.pivot(index=time_col, columns=node_col, values=col)
    return wide.reindex(index=list(times), columns=list(nodes)).to_numpy(dtype=float)


def _first_missing(mat, times, nodes):
    t_idx, n_idx = np.argwhere(np.isnan(mat))[0]
    return times[t_idx], nodes[n_idx]


def ingest_panel(path, time_col: str = "time", node_col: str = "node",
                 value_col: str = "value", covariate_cols=(),
                 gap_policy: str = "error", log_transform: bool = False) -> PanelDataset:
    """Read a long CSV into a dense panel.

    Each (time, node) pair may appear at most once.  Missing cells are
    handled by gap_policy: "error" names the first missing cell,
    "forward_fill" carries each node's previous value forward (a gap
    at a node's first time still errors), "drop_node" removes any node
    with a missing value or covariate cell.  log_transform replaces
    the response with its natural log and requires positive values.
    """
    if gap_policy not in GAP_POLICIES:
        raise DataError(
            f"gap_policy must be one of {GAP_POLICIES}, got {gap_policy!r}"
        )
    covariate_cols = tuple(covariate_cols)
    try:
        # round_trip parsing keeps 17-digit decimals bit-exact
        df = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read panel CSV {path}: {exc}") from None
    needed = (time_col, node_col, value_col) + covariate_cols
    missing_cols = [c for c in needed if c not in df.columns]
    if missing_cols:
        raise DataError(
            f"panel CSV {path} lacks columns {missing_cols}; has "
            f"{list(df.columns)}"
        )
    if len(df) == 0:
        raise DataError(f"panel CSV {path} has no rows")
    dup = df.duplicated(subset=[time_col, node_col])
    if dup.any():
        row = df[dup].iloc[0]
        raise DataError(
            f"duplicate cell for time {row[time_col]!r}, node "
            f"{row[node_col]!r}"
        )
    def plain(v):
        return v.item() if hasattr(v, "item") else v

    nodes = tuple(plain(v) for v in pd.unique(df[node_col]))
    times = tuple(plain(v) for v in sorted(pd.unique(df[time_col])))
    mats = {col: _pivot_column(df, time_col, node_col, col, times, nodes)
            for col in (value_col,) + covariate_cols}

    if gap_policy == "forward_fill":
        for col, mat in mats.items():
            if np.isnan(mat).any():
                filled = pd.DataFrame(mat).ffill().to_numpy()
                mats[col] = filled
    elif gap_policy == "drop_node":
        bad = np.zeros(len(nodes), dtype=bool)
        for mat in mats.values():
            bad |= np.isnan(mat).any(axis=0)
        if bad.all():
            raise DataError("every node has missing cells; nothing to keep")
        keep = ~bad
        nodes = tuple(n for n, k in zip(nodes, keep) if k)
        mats = {col: mat[:, keep] for col, mat in mats.items()}
    for col, mat in mats.items():
        if np.isnan(mat).any():
            t, n = _first_missing(mat, times, nodes)
            raise DataError(
                f"missing value in column {col!r} at time {t!r}, node {n!r}"
            )

    x = mats[value_col]
    if log_transform:
        if np.any(x <= 0):
            t, n = _first_missing(np.where(x <= 0, np.nan, x), times, nodes)
            raise DataError(
                f"log transform needs positive values; offending cell at "
                f"time {t!r}, node {n!r}"
            )
        x = np.log(x)
    if covariate_cols:
        y = np.stack([mats[c] for c in covariate_cols], axis=2)
    else:
        y = np.zeros((len(times), len(nodes), 0))
    return PanelDataset(node_ids=nodes, times=times, x=x, y=y,
                        covariate_names=covariate_cols,
                        log_applied=bool(log_transform))


def export_panel(ds: PanelDataset, path) -> None:
    """Write the dataset back to long CSV (time,node,value,covariates).

    Values are formatted with 17 significant digits, so ingesting the
    exported file reproduces the arrays bit-exactly.
    """
    cols = {"time": np.repeat(list(ds.times), ds.n_nodes),
            "node": list(ds.node_ids) * ds.t_len,
            "value": ds.x.ravel()}
    for j, name in enumerate(ds.covariate_names):
        cols[name] = ds.y[:, :, j].ravel()
    frame = pd.DataFrame(cols)
    frame.to_csv(path, index=False, float_format="%.17g",
                 lineterminator="\n")


def haversine_km(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Great-circle distance in km between coordinate pairs in degrees."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=float))
                              for v in (lat1, lon1, lat2, lon2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = (np.sin(dlat / 2.0) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


@dataclass(frozen=True)
class GeoWeights:
    """Inverse-distance weight matrices for a set of nodes.

    w uses only neighbor pairs within cutoff_km, renormalized; phi uses
    every pair.  Both are row-stochastic with zero diagonals.
    """

    w: np.ndarray
    phi: np.ndarray
    cutoff_km: float
    node_ids: tuple

    def __post_init__(self):
        self.w.setflags(write=False)
        self.phi.setflags(write=False)


def build_geo_weights(coords, cutoff_km: float = 500.0,
                      node_ids=None) -> GeoWeights:
    """Inverse-distance weights from (lat, lon) coordinates in degrees.

    phi_ij = D_ij^-1 / sum_j D_ij^-1 over all pairs; w applies the
    cutoff first and renormalizes.  Coinciding coordinates and nodes
    with no neighbor inside the cutoff raise, naming the node.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise DataError(
            f"coords must be (N, 2) latitude/longitude, got {coords.shape}"
        )
    n = coords.shape[0]
    if n < 2:
        raise DataError("need at least 2 nodes for a weight matrix")
    if cutoff_km <= 0:
        raise DataError(f"cutoff_km must be positive, got {cutoff_km}")
    if node_ids is None:
        ids = tuple(range(n))
    else:
        ids = tuple(node_ids)
        if len(ids) != n:
            raise DataError(
                f"{len(ids)} node ids for {n} coordinate rows"
            )
    lat = coords[:, 0][:, None]
    lon = coords[:, 1][:, None]
    d = haversine_km(lat, lon, lat.T, lon.T)
    off = ~np.eye(n, dtype=bool)
    zero = off & (d <= 0)
    if zero.any():
        i, j = np.argwhere(zero)[0]
        raise DataError(
            f"nodes {ids[i]!r} and {ids[j]!r} have identical coordinates"
        )
    inv = np.zeros((n, n))
    inv[off] = 1.0 / d[off]
    phi = inv / inv.sum(axis=1, keepdims=True)
    mask = off & (d <= cutoff_km)
    iso = ~mask.any(axis=1)
    if iso.any():
        i = int(np.argmax(iso))
        raise DataError(
            f"node {ids[i]!r} has no neighbor within {cutoff_km} km"
        )
    wnum = np.where(mask, inv, 0.0)
    w = wnum / wnum.sum(axis=1, keepdims=True)
    return GeoWeights(w=w, phi=phi, cutoff_km=float(cutoff_km), node_ids=ids)
