"""Endogenous-spread feature matrix built from the outcome panel.

Every feature for a label window starting in year ``s`` is computed from
panel windows that end no later than ``s``: lag ``j`` (1-based) uses the
window starting ``s - window_len - (j - 1) * step``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin

from .grid import GridSpec
from .spatial import (
    DEFAULT_RINGS,
    QUADRANTS,
    NeighborGraph,
    distance_to_max,
    lisa_lag_features,
    local_moran,
    spatial_lag,
)

STATISTICS = ("n_transactions", "pct_sold", "median_price")
# which panel column feeds each statistic
_SOURCE = {"n_transactions": "n_transactions", "pct_sold": "y", "median_price": "median_price"}
META_COLUMNS = ["row", "col", "window_start", "window_len", "n_homes", "y"]


class InsufficientHistoryError(ValueError):
    pass


@dataclass
class FeatureMatrix:
    """Feature rows aligned with panel entries.

    ``X`` holds the imputed features, ``mask`` flags the entries that were
    missing before imputation, ``meta`` carries the panel keys and the target
    ``y``. ``schema`` maps each column to its (family, ring, lag) provenance.
    """

    X: pd.DataFrame
    meta: pd.DataFrame
    mask: pd.DataFrame
    schema: dict
    n_dropped: int = 0
    imputation: dict = field(default_factory=dict)

    @property
    def feature_names(self) -> list[str]:
        return list(self.X.columns)

    @property
    def y(self) -> np.ndarray:
        return self.meta["y"].to_numpy(dtype=float)

    def __len__(self):
        return len(self.X)

    def select(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return FeatureMatrix(
            self.X.iloc[rows].reset_index(drop=True),
            self.meta.iloc[rows].reset_index(drop=True),
            self.mask.iloc[rows].reset_index(drop=True),
            self.schema,
            self.n_dropped,
            self.imputation,
        )

    def windows(self, starts) -> "FeatureMatrix":
        keep = np.flatnonzero(self.meta["window_start"].isin(list(starts)).to_numpy())
        return self.select(keep)

    def to_csv(self, out: IO[str]):
        # n_homes is both metadata and a feature; write it once
        frame = pd.concat([self.meta.drop(columns=self.X.columns, errors="ignore"), self.X], axis=1)
        frame.to_csv(out, index=False, lineterminator="\n", float_format="%.17g")

    @classmethod
    def from_csv(cls, source, schema: dict | None = None) -> "FeatureMatrix":
        """Inverse of ``to_csv``; the imputation mask is not stored and comes back all False."""
        frame = pd.read_csv(source, float_precision="round_trip")
        meta = frame[META_COLUMNS].copy()
        X = frame.drop(columns=[c for c in META_COLUMNS if c != "n_homes"]).astype(float)
        mask = pd.DataFrame(False, index=X.index, columns=X.columns)
        schema = schema or {}
        return cls(X, meta, mask, schema.get("columns", {}), 0, schema.get("imputation", {}))

    def schema_json(self, out: IO[str]):
        json.dump({"columns": self.schema, "imputation": self.imputation}, out, indent=1, sort_keys=True)
        out.write("\n")


def cell_graph(spec: GridSpec, panel: pd.DataFrame) -> NeighborGraph:
    cells = panel[["row", "col"]].drop_duplicates().sort_values(["row", "col"])
    x, y = spec.center(cells["row"].to_numpy(), cells["col"].to_numpy())
    return NeighborGraph.from_cells(cells["row"].to_numpy(), cells["col"].to_numpy(), x, y)


def cell_statistics(panel: pd.DataFrame) -> pd.DataFrame:
    """The three base statistics per panel entry; median_price is NaN without sales."""
    if panel.empty:
        raise ValueError("empty panel")
    return pd.DataFrame(
        {name: panel[src].to_numpy(dtype=float) for name, src in _SOURCE.items()}, index=panel.index
    )


def median_price(prices: Sequence[float]) -> float:
    """Median with the midpoint rule for even counts; NaN when empty."""
    if len(prices) == 0:
        return float("nan")
    return float(np.median(np.asarray(prices, dtype=float)))


def window_block_columns(ring_sizes: Sequence[int]) -> list[tuple[str, dict]]:
    """Per-window column catalog: (name, provenance) pairs, in output order."""
    cols = []
    for stat in STATISTICS:
        cols.append((stat, {"family": stat, "kind": "self", "ring": None}))
        if stat == "median_price":
            cols.append((f"{stat}_missing", {"family": stat, "kind": "missing", "ring": None}))
        for k in ring_sizes:
            cols.append((f"{stat}_ring{k}", {"family": stat, "kind": "spatial_lag", "ring": k}))
        cols.append((f"{stat}_lisa", {"family": stat, "kind": "lisa", "ring": None}))
        cols.append((f"{stat}_lisa_p", {"family": stat, "kind": "lisa_p", "ring": None}))
        for q in QUADRANTS:
            cols.append((f"{stat}_lisa_{q}", {"family": stat, "kind": "lisa_quadrant", "ring": None}))
        for k in ring_sizes:
            cols.append((f"{stat}_max_lisa_ring{k}", {"family": stat, "kind": "max_neighbor_lisa", "ring": k}))
            cols.append((f"{stat}_dist_max_lisa_ring{k}", {"family": stat, "kind": "dist_to_max_lisa", "ring": k}))
        cols.append((f"{stat}_dist_to_max", {"family": stat, "kind": "dist_to_max", "ring": None}))
    return cols


def _impute(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    missing = np.isnan(values)
    if not missing.any():
        return values, missing
    fill = float(np.nanmedian(values)) if not missing.all() else 0.0
    return np.where(missing, fill, values), missing


def window_block(
    stats: pd.DataFrame,
    graph: NeighborGraph,
    ring_sizes: Sequence[int],
    lisa_k: int,
    n_perm: int,
    seed: int,
    window_start: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Feature values and missing-mask for one window, rows in graph order."""
    n = graph.n
    columns, masks = [], []

    def put(values, missing=None):
        columns.append(np.asarray(values, dtype=float))
        masks.append(np.zeros(n, bool) if missing is None else missing)

    for s_idx, stat in enumerate(STATISTICS):
        raw = stats[stat].to_numpy(dtype=float)
        filled, missing = _impute(raw)
        put(filled, missing)
        if stat == "median_price":
            put(missing.astype(float))
        for k in ring_sizes:
            put(*_impute(spatial_lag(raw, graph, k)))
        keys = np.column_stack(
            [np.full(n, window_start), np.full(n, s_idx), graph.rows, graph.cols]
        )
        lisa = local_moran(filled, graph, lisa_k, n_perm=n_perm, seed=seed, keys=keys)
        put(lisa.statistic)
        if lisa.degenerate or n_perm == 0:
            put(np.ones(n), np.ones(n, bool))
        else:
            put(lisa.p_value)
        for q in QUADRANTS:
            put((lisa.quadrant == q).astype(float), np.full(n, lisa.degenerate))
        for k in ring_sizes:
            best, dist = lisa_lag_features(lisa.statistic, graph, k)
            put(best)
            put(dist)
        if missing.all():
            put(np.zeros(n), np.ones(n, bool))
        else:
            put(distance_to_max(raw, graph))
    return np.column_stack(columns), np.column_stack(masks)


def lag_start(label_start: int, window_len: int, lag: int, step: int = 1) -> int:
    return label_start - window_len - (lag - 1) * step


def assemble(
    panel: pd.DataFrame,
    spec: GridSpec,
    ring_sizes: Sequence[int] = DEFAULT_RINGS,
    delta: int = 3,
    lisa_k: int | None = None,
    n_perm: int = 999,
    seed: int = 0,
    label_starts: Sequence[int] | None = None,
    step: int = 1,
) -> FeatureMatrix:
    """Build lagged features for every label window with full history.

    Parameters
    ----------
    panel : DataFrame
        Output of ``build_panel`` for a single window length.
    spec : GridSpec
    ring_sizes : sequence of int
        Neighbor counts for spatial lags and max-neighbor LISA features.
    delta : int
        Number of lagged windows.
    lisa_k : int, optional
        Neighbor count for local Moran weights; defaults to the first ring.
    n_perm, seed : int
        Permutation count and seed for LISA p-values.
    label_starts : sequence of int, optional
        Label windows to emit; defaults to every window in the panel.

    Raises
    ------
    InsufficientHistoryError
        If no requested label window has ``delta`` prior windows.
    """
    if delta < 1:
        raise ValueError("delta must be at least 1")
    if panel.empty:
        raise ValueError("empty panel")
    window_len = int(panel["window_len"].iloc[0])
    lisa_k = ring_sizes[0] if lisa_k is None else lisa_k
    graph = cell_graph(spec, panel)
    cell_pos = {(r, c): i for i, (r, c) in enumerate(zip(graph.rows, graph.cols))}
    available = sorted(int(w) for w in panel["window_start"].unique())
    if label_starts is None:
        label_starts = available
    label_starts = sorted(int(s) for s in label_starts)

    needed = set()
    for s in label_starts:
        needed.update(lag_start(s, window_len, j, step) for j in range(1, delta + 1))
    by_window = {int(w): blk for w, blk in panel.groupby("window_start", sort=True)}

    blocks = {}
    for w in sorted(needed):
        blk = by_window.get(w)
        if blk is None:
            continue
        order = [cell_pos[(r, c)] for r, c in zip(blk["row"], blk["col"])]
        blk = blk.iloc[np.argsort(order)]
        blocks[w] = window_block(cell_statistics(blk), graph, ring_sizes, lisa_k, n_perm, seed, w)

    catalog = window_block_columns(ring_sizes)
    names = ["n_homes"]
    schema = {"n_homes": {"family": "n_homes", "kind": "static", "ring": None, "lag": None}}
    for j in range(1, delta + 1):
        for name, prov in catalog:
            full = f"{name}_t{j}"
            names.append(full)
            schema[full] = {**prov, "lag": j}

    X_parts, M_parts, meta_parts = [], [], []
    dropped = 0
    for s in label_starts:
        label = by_window.get(s)
        lags = [lag_start(s, window_len, j, step) for j in range(1, delta + 1)]
        if label is None:
            continue
        if any(w not in blocks for w in lags):
            dropped += len(label)
            continue
        label = label.sort_values(["row", "col"])
        idx = np.array([cell_pos[(r, c)] for r, c in zip(label["row"], label["col"])])
        n_homes = label["n_homes"].to_numpy(dtype=float)[:, None]
        X_parts.append(np.hstack([n_homes] + [blocks[w][0][idx] for w in lags]))
        M_parts.append(np.hstack([np.zeros((len(idx), 1), bool)] + [blocks[w][1][idx] for w in lags]))
        meta_parts.append(label[META_COLUMNS].reset_index(drop=True))
    if not X_parts:
        raise InsufficientHistoryError(
            f"no label window has {delta} prior windows of length {window_len}"
        )
    X = pd.DataFrame(np.vstack(X_parts), columns=names)
    mask = pd.DataFrame(np.vstack(M_parts), columns=names)
    meta = pd.concat(meta_parts, ignore_index=True)
    imputation = {
        "self": "window cross-cell median, companion *_missing indicator for median_price",
        "spatial_lag": "missing neighbors skipped; all-missing imputed with window median",
        "lisa_p": "1.0 when the field is constant",
    }
    return FeatureMatrix(X, meta, mask, schema, dropped, imputation)


class PanelFeaturizer(TransformerMixin, BaseEstimator):
    """Transformer from an outcome panel to the lagged feature table.

    ``transform`` returns a DataFrame indexed by (row, col, window_start)
    so it can feed any regressor; the full ``FeatureMatrix`` from the last
    call is kept in ``matrix_``.
    """

    def __init__(self, spec=None, ring_sizes=DEFAULT_RINGS, delta=3, lisa_k=None, n_perm=999, seed=0):
        self.spec = spec
        self.ring_sizes = ring_sizes
        self.delta = delta
        self.lisa_k = lisa_k
        self.n_perm = n_perm
        self.seed = seed

    def fit(self, panel, y=None):
        if self.spec is None:
            raise ValueError("PanelFeaturizer needs a GridSpec")
        catalog = window_block_columns(self.ring_sizes)
        self.feature_names_out_ = ["n_homes"] + [
            f"{name}_t{j}" for j in range(1, self.delta + 1) for name, _ in catalog
        ]
        return self

    def transform(self, panel):
        fm = assemble(
            panel, self.spec, self.ring_sizes, self.delta, self.lisa_k, self.n_perm, self.seed
        )
        self.matrix_ = fm
        X = fm.X.copy()
        X.index = pd.MultiIndex.from_frame(fm.meta[["row", "col", "window_start"]])
        return X

    def get_feature_names_out(self, input_features=None):
        return np.asarray(self.feature_names_out_, dtype=object)
