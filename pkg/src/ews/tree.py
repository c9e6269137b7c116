"""Variance-reduction regression tree with numba kernels."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_Xy, resolve_max_features

LEAF = -1


@numba.njit(cache=True, nogil=True)
def _best_split(X, y, samples, start, end, feats, max_features, min_leaf):
    """Scan up to ``max_features`` non-constant features in random order.

    Returns (feature, threshold, found). Children minimize the summed
    squared error; equivalently they maximize sumL^2/nL + sumR^2/nR on
    node-centered targets.
    """
    m = end - start
    d = feats.shape[0]
    mean = 0.0
    for i in range(start, end):
        mean += y[samples[i]]
    mean /= m
    xs = np.empty(m)
    ys = np.empty(m)
    best_f = -1
    best_thr = 0.0
    best_score = -np.inf
    visited = 0
    j = 0
    while j < d and visited < max_features:
        r = j + np.random.randint(0, d - j)
        tmp = feats[j]
        feats[j] = feats[r]
        feats[r] = tmp
        f = feats[j]
        j += 1
        for i in range(m):
            xs[i] = X[samples[start + i], f]
        order = np.argsort(xs, kind="mergesort")
        if xs[order[0]] == xs[order[m - 1]]:
            continue
        visited += 1
        total = 0.0
        for i in range(m):
            ys[i] = y[samples[start + order[i]]] - mean
            total += ys[i]
        left = 0.0
        for i in range(m - 1):
            left += ys[i]
            n_left = i + 1
            n_right = m - n_left
            if n_left < min_leaf or n_right < min_leaf:
                continue
            lo = xs[order[i]]
            hi = xs[order[i + 1]]
            if lo == hi:
                continue
            right = total - left
            score = left * left / n_left + right * right / n_right
            if score > best_score:
                best_score = score
                best_f = f
                thr = 0.5 * (lo + hi)
                if thr >= hi:
                    thr = lo
                best_thr = thr
    return best_f, best_thr, best_f >= 0


@numba.njit(cache=True, nogil=True)
def _grow(X, y, samples, max_features, min_leaf, max_depth, seed):
    np.random.seed(seed)
    n = samples.shape[0]
    d = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, LEAF, dtype=np.int64)
    right = np.full(cap, LEAF, dtype=np.int64)
    value = np.zeros(cap)
    cover = np.zeros(cap)
    feats = np.arange(d)
    buf = np.empty(n, dtype=np.int64)

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        m = end - start
        s = 0.0
        lo = np.inf
        hi = -np.inf
        for i in range(start, end):
            v = y[samples[i]]
            s += v
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        value[node] = lo if lo == hi else s / m
        cover[node] = m
        if m < 2 * min_leaf or lo == hi or (max_depth >= 0 and depth >= max_depth):
            continue
        f, thr, found = _best_split(X, y, samples, start, end, feats, max_features, min_leaf)
        if not found:
            continue
        a = start
        b = 0
        for i in range(start, end):
            si = samples[i]
            if X[si, f] <= thr:
                samples[a] = si
                a += 1
            else:
                buf[b] = si
                b += 1
        for i in range(b):
            samples[a + i] = buf[i]
        feature[node] = f
        threshold[node] = thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        # right pushed first so the left subtree is expanded first
        st_node[top] = rc
        st_start[top] = a
        st_end[top] = end
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = lc
        st_start[top] = start
        st_end[top] = a
        st_depth[top] = depth + 1
        top += 1
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        cover[:n_nodes].copy(),
    )


@numba.njit(cache=True, nogil=True)
def _apply(feature, threshold, left, right, X):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while left[node] != LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@dataclass(frozen=True)
class Tree:
    """Flat binary tree. ``left == -1`` marks leaves; ``cover`` counts in-bag samples."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.left == LEAF

    @property
    def max_depth(self) -> int:
        depth = np.zeros(self.node_count, dtype=np.int64)
        for node in range(self.node_count):
            if self.left[node] != LEAF:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        return _apply(self.feature, self.threshold, self.left, self.right, np.ascontiguousarray(X, dtype=float))

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Tree":
        return cls(
            np.asarray(data["feature"], dtype=np.int64),
            np.asarray(data["threshold"], dtype=float),
            np.asarray(data["left"], dtype=np.int64),
            np.asarray(data["right"], dtype=np.int64),
            np.asarray(data["value"], dtype=float),
            np.asarray(data["cover"], dtype=float),
        )


def grow_tree(X, y, samples, max_features, min_samples_leaf=1, max_depth=None, seed=0) -> Tree:
    """Grow one tree on rows ``samples`` (repeats allowed) of ``X``."""
    samples = np.array(samples, dtype=np.int64)
    parts = _grow(
        np.ascontiguousarray(X, dtype=float),
        np.ascontiguousarray(y, dtype=float),
        samples,
        int(max_features),
        int(min_samples_leaf),
        -1 if max_depth is None else int(max_depth),
        np.uint32(seed),
    )
    return Tree(*parts)


class TreeRegressor(RegressorMixin, BaseEstimator):
    """Single regression tree grown by greedy variance reduction.

    Split thresholds are midpoints between consecutive distinct values and
    rows with ``x <= threshold`` go left.
    """

    def __init__(self, max_features=None, min_samples_leaf=1, max_depth=None, random_state=0):
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.random_state = random_state

    def fit(self, X, y):
        X, y, names = check_Xy(X, y)
        self.n_features_in_ = X.shape[1]
        if names is not None:
            self.feature_names_in_ = names
        k = resolve_max_features(self.max_features, X.shape[1])
        seed = np.random.SeedSequence(self.random_state).generate_state(1, dtype=np.uint32)[0]
        self.tree_ = grow_tree(X, y, np.arange(len(y)), k, self.min_samples_leaf, self.max_depth, seed)
        return self

    def predict(self, X):
        check_is_fitted(self, "tree_")
        X = check_features(self, X)
        return self.tree_.predict(X)
