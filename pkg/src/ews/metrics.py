"""Point and rank accuracy metrics for cell-level forecasts."""
from __future__ import annotations

import math

import numba
import numpy as np


def _pair(y, yhat):
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape[0]} vs {yhat.shape[0]}")
    if y.size == 0:
        raise ValueError("empty input")
    if np.isnan(y).any() or np.isnan(yhat).any():
        raise ValueError("inputs contain NaN")
    return y, yhat


def rmse(y, yhat) -> float:
    """sqrt(sum_c (y_c - yhat_c)^2 / N)."""
    y, yhat = _pair(y, yhat)
    return math.sqrt(float(np.mean((y - yhat) ** 2)))


@numba.njit(cache=True)
def _count_inversions(a):
    """Pairs i < j with a[i] > a[j], by bottom-up merge sort."""
    n = a.shape[0]
    src = a.copy()
    dst = np.empty_like(src)
    inv = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if src[j] < src[i]:
                    dst[k] = src[j]
                    inv += mid - i
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            while i < mid:
                dst[k] = src[i]
                i += 1
                k += 1
            while j < hi:
                dst[k] = src[j]
                j += 1
                k += 1
        src, dst = dst, src
        width *= 2
    return inv


def _tied_pairs(sorted_vals) -> int:
    if sorted_vals.size < 2:
        return 0
    change = np.flatnonzero(np.diff(sorted_vals) != 0)
    sizes = np.diff(np.concatenate(([0], change + 1, [sorted_vals.size])))
    return int(np.sum(sizes * (sizes - 1) // 2))


def kendall_tau_b(x, y) -> float:
    """Kendall's tau-b, (P - Q) / sqrt((P + Q + X0)(P + Q + Y0)).

    Pair counts are exact integers (O(n log n)). Returns NaN when either
    input is constant, since the statistic is undefined there.
    """
    x, y = _pair(x, y)
    n = x.size
    if n < 2:
        raise ValueError("need at least two observations")
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    n0 = n * (n - 1) // 2
    tx = _tied_pairs(xs)
    txy = 0
    # joint ties: runs equal in both coordinates after the (x, y) sort
    same = np.concatenate(([False], (np.diff(xs) == 0) & (np.diff(ys) == 0)))
    if same.any():
        run_id = np.cumsum(~same)
        sizes = np.bincount(run_id)
        txy = int(np.sum(sizes * (sizes - 1) // 2))
    ty = _tied_pairs(np.sort(y))
    discordant = int(_count_inversions(ys))
    if tx == n0 or ty == n0:
        return float("nan")
    concordant = n0 - tx - ty + txy - discordant
    return (concordant - discordant) / math.sqrt((n0 - tx) * (n0 - ty))


def dcg(relevance_in_rank_order) -> float:
    rel = np.asarray(relevance_in_rank_order, dtype=float)
    return float(np.sum(rel / np.log2(np.arange(2, rel.size + 2))))


def ndcg(y_true, y_pred) -> float:
    """Normalized discounted cumulative gain over the full ranking.

    Items are ranked by ``y_pred`` descending with ties kept in input order;
    gains are the raw non-negative ``y_true`` values. Returns 1 when every
    gain is zero.
    """
    y_true, y_pred = _pair(y_true, y_pred)
    if np.any(y_true < 0):
        raise ValueError("relevance must be non-negative")
    order = np.argsort(-y_pred, kind="stable")
    ideal = dcg(np.sort(y_true)[::-1])
    if ideal == 0:
        return 1.0
    return dcg(y_true[order]) / ideal
