"""Exact path-dependent Shapley attributions for the forest, and their summaries."""
from __future__ import annotations

from dataclasses import dataclass
from typing import IO

import numpy as np
import pandas as pd

from ._validation import check_features
from .forest import ForestRegressor
from .tree import LEAF, Tree


def _extend(pws, depth, zero, one):
    pws.append(np.ones_like(one) if depth == 0 else np.zeros_like(one))
    for i in range(depth - 1, -1, -1):
        pws[i + 1] = pws[i + 1] + one * pws[i] * (i + 1) / (depth + 1)
        pws[i] = zero * pws[i] * (depth - i) / (depth + 1)


def _unwind(pws, zeros, ones, feats, depth, k):
    one, zero = ones[k], zeros[k]
    hot = one != 0
    safe_one = np.where(hot, one, 1.0)
    nxt = pws[depth]
    for i in range(depth - 1, -1, -1):
        a = nxt * (depth + 1) / ((i + 1) * safe_one)
        carried = pws[i] - a * zero * (depth - i) / (depth + 1)
        cold = pws[i] * (depth + 1) / (zero * (depth - i))
        pws[i] = np.where(hot, a, cold)
        nxt = np.where(hot, carried, nxt)
    del pws[depth]
    del feats[k], zeros[k], ones[k]


def _unwound_sum(pws, zeros, ones, depth, k):
    one, zero = ones[k], zeros[k]
    hot = one != 0
    safe_one = np.where(hot, one, 1.0)
    nxt = pws[depth]
    total = np.zeros_like(nxt)
    for i in range(depth - 1, -1, -1):
        a = nxt * (depth + 1) / ((i + 1) * safe_one)
        total += np.where(hot, a, pws[i] / zero * (depth + 1) / (depth - i))
        nxt = np.where(hot, pws[i] - a * zero * (depth - i) / (depth + 1), nxt)
    return total


def tree_shap_single(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Shapley values of one tree for every row of ``X`` at once.

    Walks the tree once, carrying per-row path weights; the conditional
    expectation of a missing feature follows both children weighted by
    their in-bag cover.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    phi = np.zeros((n, d))
    feature, threshold, left, right = tree.feature, tree.threshold, tree.left, tree.right
    value, cover = tree.value, tree.cover

    def recurse(node, feats, zeros, ones, pws, depth, zero, one, split_feat):
        feats = feats[:depth] + [split_feat]
        zeros = zeros[:depth] + [zero]
        ones = ones[:depth] + [one]
        pws = [w.copy() for w in pws[:depth]]
        _extend(pws, depth, zero, one)
        if left[node] == LEAF:
            for i in range(1, depth + 1):
                w = _unwound_sum(pws, zeros, ones, depth, i)
                phi[:, feats[i]] += w * (ones[i] - zeros[i]) * value[node]
            return
        f = feature[node]
        goes_left = (X[:, f] <= threshold[node]).astype(float)
        inc_zero, inc_one = 1.0, np.ones(n)
        if f in feats:
            k = feats.index(f)
            inc_zero, inc_one = zeros[k], ones[k]
            _unwind(pws, zeros, ones, feats, depth, k)
            depth -= 1
        lc, rc = left[node], right[node]
        recurse(lc, feats, zeros, ones, pws, depth + 1, cover[lc] / cover[node] * inc_zero, inc_one * goes_left, f)
        recurse(rc, feats, zeros, ones, pws, depth + 1, cover[rc] / cover[node] * inc_zero, inc_one * (1.0 - goes_left), f)

    recurse(0, [], [], [], [], 0, 1.0, np.ones(n), -1)
    return phi


@dataclass
class ShapReport:
    """Per-row, per-feature attributions in outcome units.

    For every row ``base_value + values.sum(axis=1)`` equals the forest
    prediction.
    """

    values: pd.DataFrame
    base_value: float
    features: pd.DataFrame
    prediction: np.ndarray

    @property
    def mean_abs(self) -> pd.Series:
        return self.values.abs().mean(axis=0)

    def normalized_features(self) -> pd.DataFrame:
        """Min-max scaling of each feature over the explained rows; constant columns map to 0."""
        lo = self.features.min(axis=0)
        span = self.features.max(axis=0) - lo
        return (self.features - lo) / span.where(span > 0, 1.0)

    def to_long(self) -> pd.DataFrame:
        norm = self.normalized_features()
        n, d = self.values.shape
        return pd.DataFrame(
            {
                "row_id": np.repeat(np.arange(n), d),
                "feature": np.tile(np.asarray(self.values.columns, dtype=object), n),
                "shap": self.values.to_numpy().ravel(),
                "feature_value_normalized": norm.to_numpy().ravel(),
            }
        )

    def write(self, out: IO[str]):
        self.to_long().to_csv(out, index=False, lineterminator="\n", float_format="%.17g")

    def importance_table(self) -> pd.DataFrame:
        ranked = rank_features(self, top_k=None)
        imp = self.mean_abs
        return pd.DataFrame(
            {"rank": np.arange(1, len(ranked) + 1), "feature": ranked, "mean_abs_shap": [imp[f] for f in ranked]}
        )


def tree_shap(model: ForestRegressor, X) -> ShapReport:
    """Average of per-tree exact Shapley values; base value is the mean root expectation."""
    arr = check_features(model, X)
    names = getattr(model, "feature_names_in_", None)
    if names is None:
        names = [f"x{i}" for i in range(arr.shape[1])]
    total = np.zeros(arr.shape)
    base = 0.0
    for tree in model.trees_:
        total += tree_shap_single(tree, arr)
        base += tree.value[0]
    n_trees = len(model.trees_)
    values = pd.DataFrame(total / n_trees, columns=list(names))
    return ShapReport(
        values=values,
        base_value=base / n_trees,
        features=pd.DataFrame(arr, columns=list(names)),
        prediction=model.predict(X),
    )


def rank_features(report: ShapReport, top_k: int | None = 25) -> list[str]:
    """Features by mean |SHAP| descending, ties by name."""
    imp = report.mean_abs
    ranked = sorted(imp.index, key=lambda name: (-imp[name], str(name)))
    return ranked if top_k is None else ranked[:top_k]


def dependence(report: ShapReport, feature_a: str, feature_b: str) -> pd.DataFrame:
    """Per-row (value_a, shap_a, value_b) for a dependence scatter colored by ``feature_b``."""
    for name in (feature_a, feature_b):
        if name not in report.values.columns:
            raise KeyError(f"unknown feature {name!r}")
    return pd.DataFrame(
        {
            "value_a": report.features[feature_a].to_numpy(),
            "shap_a": report.values[feature_a].to_numpy(),
            "value_b": report.features[feature_b].to_numpy(),
        }
    )
