"""Slow, definitional reference implementations used as test oracles."""
from __future__ import annotations

import itertools
import math

import numpy as np


def kendall_tau_b_pairs(x, y) -> float:
    """tau-b by enumerating all n(n-1)/2 pairs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    i, j = np.triu_indices(len(x), k=1)
    sx = np.sign(x[i] - x[j])
    sy = np.sign(y[i] - y[j])
    p = int(np.sum(sx * sy > 0))
    q = int(np.sum(sx * sy < 0))
    x0 = int(np.sum((sx == 0) & (sy != 0)))
    y0 = int(np.sum((sx != 0) & (sy == 0)))
    return (p - q) / math.sqrt((p + q + x0) * (p + q + y0))


def knn_weights_dense(rows, cols, x, y, k: int) -> np.ndarray:
    """Row-standardized kNN weights: sort every other cell by (distance, row, col)."""
    n = len(rows)
    k = min(k, n - 1)
    w = np.zeros((n, n))
    for i in range(n):
        cand = sorted(
            (math.hypot(x[i] - x[j], y[i] - y[j]), rows[j], cols[j], j) for j in range(n) if j != i
        )
        for _, _, _, j in cand[:k]:
            w[i, j] = 1.0 / k
    return w


def local_moran_dense(values, w: np.ndarray) -> np.ndarray:
    z = np.asarray(values, dtype=float) - np.mean(values)
    m2 = z @ z / len(z)
    return z / m2 * (w @ z)


def global_moran_dense(values, w: np.ndarray) -> float:
    z = np.asarray(values, dtype=float) - np.mean(values)
    return len(z) / w.sum() * (z @ w @ z) / (z @ z)


def tree_conditional_expectation(tree, subset, x) -> float:
    """E[f(x) | x_S] with unknown features averaged over children by training cover."""

    def walk(node):
        if tree.left[node] < 0:
            return tree.value[node]
        f = tree.feature[node]
        lc, rc = tree.left[node], tree.right[node]
        if f in subset:
            return walk(lc) if x[f] <= tree.threshold[node] else walk(rc)
        return (walk(lc) * tree.cover[lc] + walk(rc) * tree.cover[rc]) / tree.cover[node]

    return walk(0)


def shapley_exhaustive(trees, x) -> np.ndarray:
    """Shapley values of the tree average by enumerating every coalition."""
    d = len(x)
    phi = np.zeros(d)
    weights = [math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)]
    for tree in trees:
        cache = {}

        def v(subset):
            key = frozenset(subset)
            if key not in cache:
                cache[key] = tree_conditional_expectation(tree, key, x)
            return cache[key]

        for i in range(d):
            others = [j for j in range(d) if j != i]
            for size in range(d):
                for s in itertools.combinations(others, size):
                    phi[i] += weights[size] * (v(s + (i,)) - v(s))
    return phi / len(trees)


def ndcg_best_permutation(y_true) -> float:
    """Largest DCG over every ordering of the items."""
    y_true = np.asarray(y_true, dtype=float)
    disc = 1.0 / np.log2(np.arange(2, len(y_true) + 2))
    return max(float(np.dot(y_true[list(p)], disc)) for p in itertools.permutations(range(len(y_true))))
