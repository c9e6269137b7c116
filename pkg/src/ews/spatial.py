"""k-nearest neighbor rings, spatial lags and local Moran's I over retained cells."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np

logger = logging.getLogger(__name__)

QUADRANTS = ("HH", "HL", "LH", "LL")
DEFAULT_RINGS = (8, 16, 24, 32, 40)


@dataclass(frozen=True)
class NeighborGraph:
    """Every cell's other cells, nearest first.

    ``order[i]`` lists the indices of all other cells sorted by centroid
    distance, ties broken by (row, col). ``dist[i]`` holds the matching
    distances in meters.
    """

    rows: np.ndarray
    cols: np.ndarray
    x: np.ndarray
    y: np.ndarray
    order: np.ndarray
    dist: np.ndarray

    @property
    def n(self) -> int:
        return len(self.rows)

    def effective_k(self, k: int) -> int:
        if k < 1:
            raise ValueError("k must be at least 1")
        if k > self.n - 1:
            logger.debug("k=%d exceeds %d available neighbors; using all", k, self.n - 1)
            return self.n - 1
        return k

    def weights_dense(self, k: int) -> np.ndarray:
        """Row-standardized k-nearest weights as a dense matrix."""
        k = self.effective_k(k)
        w = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), k)
        w[rows, self.order[:, :k].ravel()] = 1.0 / k
        return w

    @classmethod
    def from_cells(cls, rows, cols, x, y) -> "NeighborGraph":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n = len(rows)
        if n == 0:
            raise ValueError("empty cell set")
        d = np.hypot(x[:, None] - x[None, :], y[:, None] - y[None, :])
        order = np.empty((n, n - 1), dtype=np.int64)
        dist = np.empty((n, n - 1))
        for i in range(n):
            # lexsort: last key is primary
            o = np.lexsort((cols, rows, d[i]))
            o = o[o != i]
            order[i] = o
            dist[i] = d[i, o]
        return cls(rows, cols, x, y, order, dist)


def spatial_lag(values, graph: NeighborGraph, k: int) -> np.ndarray:
    """Unweighted mean of each cell's ``k`` nearest neighbors.

    NaN neighbor values are skipped and the mean renormalized over the rest;
    a cell whose neighbors are all NaN gets NaN.
    """
    v = np.asarray(values, dtype=float)
    k = graph.effective_k(k)
    nb = v[graph.order[:, :k]]
    valid = ~np.isnan(nb)
    cnt = valid.sum(axis=1)
    total = np.where(valid, nb, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, total / np.maximum(cnt, 1), np.nan)


@dataclass(frozen=True)
class LisaResult:
    """Local Moran's I per cell.

    ``p_value`` is NaN and ``quadrant`` empty when the field is constant
    (``degenerate``).
    """

    statistic: np.ndarray
    p_value: np.ndarray
    quadrant: np.ndarray
    lag: np.ndarray
    degenerate: bool = False


@numba.njit(cache=True)
def _perm_counts(z, obs_lag, k, n_perm, seeds, canon, two_sided):
    n = z.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    others = np.empty(n - 1, dtype=np.int64)
    for i in range(n):
        np.random.seed(seeds[i])
        m = 0
        for j in canon:
            if j != i:
                others[m] = j
                m += 1
        obs = obs_lag[i]
        tol = 1e-12 * (abs(obs) + 1e-300)
        above = 0
        for _ in range(n_perm):
            s = 0.0
            for j in range(k):
                r = j + np.random.randint(0, n - 1 - j)
                tmp = others[j]
                others[j] = others[r]
                others[r] = tmp
                s += z[others[j]]
            lag = s / k
            if two_sided:
                if abs(lag) >= abs(obs) - tol:
                    above += 1
            else:
                # same direction as the observed local statistic
                if z[i] * lag >= z[i] * obs - tol:
                    above += 1
        if two_sided:
            counts[i] = above
        else:
            counts[i] = min(above, n_perm - above)
    return counts


def _cell_seeds(seed, keys) -> np.ndarray:
    out = np.empty(len(keys), dtype=np.uint32)
    for i, key in enumerate(keys):
        ss = np.random.SeedSequence(seed, spawn_key=tuple(int(v) for v in np.atleast_1d(key)))
        out[i] = ss.generate_state(1, dtype=np.uint32)[0]
    return out


def local_moran(
    values,
    graph: NeighborGraph,
    k: int = 8,
    n_perm: int = 999,
    seed: int = 0,
    keys=None,
    two_sided: bool = True,
) -> LisaResult:
    """Local Moran's I with conditional-permutation p-values.

    ``I_i = z_i / m2 * sum_j w_ij z_j`` with ``z = x - mean(x)``,
    ``m2 = sum(z**2) / n`` and row-standardized k-nearest weights. For each
    cell the value is held fixed while ``k`` of the remaining values are drawn
    without replacement ``n_perm`` times; ``p = (r + 1) / (n_perm + 1)``.

    ``keys`` (one tuple of ints per cell) seeds each cell's random stream, so
    results do not depend on cell order or on which other cells are
    processed. Defaults to the cell's (row, col).
    """
    x = np.asarray(values, dtype=float)
    n = len(x)
    if n < 3:
        raise ValueError("local Moran's I needs at least 3 cells")
    if np.isnan(x).any():
        raise ValueError("local Moran's I needs complete values; impute first")
    k = graph.effective_k(k)
    z = x - x.mean()
    m2 = float(np.sum(z * z) / n)
    if m2 <= 1e-30 * max(1.0, float(np.max(np.abs(x)))) ** 2 or np.ptp(x) == 0:
        zeros = np.zeros(n)
        return LisaResult(zeros, np.full(n, np.nan), np.full(n, "", dtype="<U2"), zeros, True)
    lag = z[graph.order[:, :k]].mean(axis=1)
    stat = z / m2 * lag
    quad = np.where(z > 0, np.where(lag > 0, "HH", "HL"), np.where(lag > 0, "LH", "LL"))
    if keys is None:
        keys = np.column_stack([graph.rows, graph.cols])
    if n_perm > 0:
        key_arr = np.asarray(keys).reshape(n, -1)
        canon = np.lexsort(key_arr.T[::-1]).astype(np.int64)
        counts = _perm_counts(z, lag, k, int(n_perm), _cell_seeds(seed, keys), canon, bool(two_sided))
        p = (counts + 1.0) / (n_perm + 1.0)
    else:
        p = np.full(n, np.nan)
    return LisaResult(stat, p, quad.astype("<U2"), lag, False)


def global_moran(values, weights: np.ndarray) -> float:
    """Moran's I = (n / S0) * z'Wz / z'z for a dense weight matrix."""
    x = np.asarray(values, dtype=float)
    z = x - x.mean()
    denom = float(z @ z)
    if denom == 0:
        return 0.0
    return float(len(x) / weights.sum() * (z @ weights @ z) / denom)


def moran_permutation_test(values, weights: np.ndarray, n_perm: int = 999, seed: int = 0):
    """Global Moran's I and its two-sided permutation p-value."""
    x = np.asarray(values, dtype=float)
    obs = global_moran(x, weights)
    rng = np.random.default_rng(seed)
    expected = -1.0 / (len(x) - 1)
    extreme = 0
    for _ in range(n_perm):
        sim = global_moran(rng.permutation(x), weights)
        if abs(sim - expected) >= abs(obs - expected) - 1e-12:
            extreme += 1
    return obs, (extreme + 1.0) / (n_perm + 1.0)


def lisa_lag_features(statistic, graph: NeighborGraph, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Largest local I among each cell's ``k`` nearest neighbors and the distance to it.

    Ties go to the neighbor earliest in the graph order (the nearest).
    """
    s = np.asarray(statistic, dtype=float)
    k = graph.effective_k(k)
    nb = s[graph.order[:, :k]]
    pos = np.argmax(nb, axis=1)
    idx = np.arange(graph.n)
    return nb[idx, pos], graph.dist[idx, pos]


def distance_to_max(values, graph: NeighborGraph) -> np.ndarray:
    """Centroid distance from every cell to the cell holding the column maximum.

    NaN entries are ignored; ties go to the smallest (row, col).
    """
    v = np.asarray(values, dtype=float)
    if np.all(np.isnan(v)):
        raise ValueError("column is entirely missing")
    best = np.nanmax(v)
    candidates = np.flatnonzero(v == best)
    target = candidates[np.lexsort((graph.cols[candidates], graph.rows[candidates]))[0]]
    return np.hypot(graph.x - graph.x[target], graph.y - graph.y[target])
