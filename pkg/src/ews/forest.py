"""Random forest regressor for the warning model, and the naive baselines."""
from __future__ import annotations

import enum
import json
from typing import IO

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_Xy, resolve_max_features
from .tree import Tree, grow_tree

MODEL_FORMAT = "ews-forest"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    pass


class MissingHistoryError(ValueError):
    pass


def tree_streams(random_state, n_trees: int):
    """One independent (bootstrap rng, split seed) pair per tree index."""
    children = np.random.SeedSequence(random_state).spawn(n_trees)
    return [
        (np.random.default_rng(c.spawn(1)[0]), int(c.generate_state(1, dtype=np.uint32)[0]))
        for c in children
    ]


class ForestRegressor(RegressorMixin, BaseEstimator):
    """Bagged ensemble of variance-reduction trees.

    Parameters
    ----------
    n_estimators : int
        Number of trees.
    max_features : {"sqrt", "log2"}, int, float or None
        Features examined per split; "sqrt" means ceil(sqrt(d)).
    min_samples_leaf : int
        Minimum in-bag samples per leaf.
    max_depth : int or None
        None grows until leaves are pure or too small.
    bootstrap : bool
        Train each tree on n rows drawn with replacement.
    random_state : int
        Root seed. Tree ``i`` always uses substream ``i``, so the fitted model
        does not depend on ``n_jobs``.
    n_jobs : int
        Threads used to grow trees.
    """

    def __init__(
        self,
        n_estimators=500,
        max_features="sqrt",
        min_samples_leaf=3,
        max_depth=None,
        bootstrap=True,
        random_state=0,
        n_jobs=1,
    ):
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.bootstrap = bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y, names = check_Xy(X, y)
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be positive")
        n, d = X.shape
        self.n_features_in_ = d
        if names is not None:
            self.feature_names_in_ = names
        k = resolve_max_features(self.max_features, d)

        def one(rng, seed):
            rows = rng.integers(0, n, n) if self.bootstrap else np.arange(n)
            return grow_tree(X, y, rows, k, self.min_samples_leaf, self.max_depth, seed)

        streams = tree_streams(self.random_state, self.n_estimators)
        if self.n_jobs == 1:
            self.trees_ = [one(rng, seed) for rng, seed in streams]
        else:
            self.trees_ = Parallel(n_jobs=self.n_jobs, prefer="threads")(
                delayed(one)(rng, seed) for rng, seed in streams
            )
        self.base_rate_ = float(y.mean())
        self.y_range_ = (float(y.min()), float(y.max()))
        return self

    def predict(self, X):
        check_is_fitted(self, "trees_")
        X = check_features(self, X)
        total = np.zeros(X.shape[0])
        for tree in self.trees_:
            total += tree.predict(X)
        return total / len(self.trees_)

    def tree_predictions(self, X) -> np.ndarray:
        check_is_fitted(self, "trees_")
        X = check_features(self, X)
        return np.vstack([t.predict(X) for t in self.trees_])

    # serialization

    def to_dict(self) -> dict:
        check_is_fitted(self, "trees_")
        names = getattr(self, "feature_names_in_", None)
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "params": self.get_params(),
            "n_features": self.n_features_in_,
            "feature_names": None if names is None else [str(c) for c in names],
            "base_rate": self.base_rate_,
            "y_range": list(self.y_range_),
            "trees": [t.to_dict() for t in self.trees_],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ForestRegressor":
        if data.get("format") != MODEL_FORMAT:
            raise ModelFormatError(f"not a forest model file (format={data.get('format')!r})")
        if data.get("version") != MODEL_VERSION:
            raise ModelFormatError(f"unsupported model version {data.get('version')!r}")
        for key in ("params", "n_features", "trees", "base_rate"):
            if key not in data:
                raise ModelFormatError(f"model file lacks {key!r}")
        model = cls(**data["params"])
        model.n_features_in_ = int(data["n_features"])
        if data.get("feature_names") is not None:
            model.feature_names_in_ = np.asarray(data["feature_names"], dtype=object)
        model.base_rate_ = float(data["base_rate"])
        model.y_range_ = tuple(data.get("y_range", (np.nan, np.nan)))
        model.trees_ = [Tree.from_dict(t) for t in data["trees"]]
        if len(model.trees_) != model.n_estimators:
            raise ModelFormatError("tree count does not match n_estimators")
        return model

    def save(self, out: IO[str]):
        json.dump(self.to_dict(), out, sort_keys=True, separators=(",", ":"))
        out.write("\n")

    @classmethod
    def load(cls, source: IO[str]) -> "ForestRegressor":
        return cls.from_dict(json.load(source))


class BaselineKind(str, enum.Enum):
    PREV_YEAR_SINGLE_CELL = "PrevYearSingleCell"
    PREV_YEAR_CITY_AVERAGE = "PrevYearCityAverage"
    ALL_YEARS_SINGLE_CELL = "AllYearsSingleCell"


def _history(panel: pd.DataFrame, label_start: int, literal: bool) -> pd.DataFrame:
    t = int(panel["window_len"].iloc[0])
    if literal:
        return panel[panel["window_start"] != label_start]
    return panel[panel["window_start"] + t <= label_start]


def baseline_predictions(
    kind: BaselineKind | str,
    panel: pd.DataFrame,
    label_start: int,
    cells: pd.DataFrame | None = None,
    literal_all_years: bool = False,
) -> np.ndarray:
    """Baseline forecasts of y for the window starting ``label_start``.

    ``cells`` (columns row, col) fixes the output order; it defaults to the
    label window's cells sorted by (row, col). The "previous" window is the
    one of the same length ending at ``label_start``. ``AllYearsSingleCell``
    averages windows ending on or before ``label_start`` unless
    ``literal_all_years`` asks for every other window, future ones included.
    """
    kind = BaselineKind(kind)
    t = int(panel["window_len"].iloc[0])
    if cells is None:
        cells = panel[panel["window_start"] == label_start][["row", "col"]].sort_values(["row", "col"])
    keys = pd.MultiIndex.from_frame(cells[["row", "col"]].astype(np.int64))
    if kind is BaselineKind.ALL_YEARS_SINGLE_CELL:
        hist = _history(panel, label_start, literal_all_years)
        if hist.empty:
            raise MissingHistoryError(f"no windows before {label_start}")
        means = hist.groupby(["row", "col"])["y"].mean()
        out = means.reindex(keys)
    else:
        prev = panel[panel["window_start"] == label_start - t]
        if prev.empty:
            raise MissingHistoryError(f"no window starting {label_start - t}")
        if kind is BaselineKind.PREV_YEAR_CITY_AVERAGE:
            return np.full(len(keys), float(prev["y"].mean()))
        out = prev.set_index(["row", "col"])["y"].reindex(keys)
    if out.isna().any():
        raise MissingHistoryError("some cells lack history")
    return out.to_numpy(dtype=float)


def baseline_predict(kind, panel: pd.DataFrame, cell, label_start: int, **kwargs) -> float:
    """Single-cell form of :func:`baseline_predictions`."""
    row, col = cell
    cells = pd.DataFrame({"row": [row], "col": [col]})
    return float(baseline_predictions(kind, panel, label_start, cells, **kwargs)[0])


class BaselineRegressor(RegressorMixin, BaseEstimator):
    """Baseline forecaster with the estimator interface.

    ``fit`` stores the panel history; ``predict`` takes a frame with columns
    row, col, window_start (e.g. ``FeatureMatrix.meta``) and returns the
    baseline forecast for each row.
    """

    def __init__(self, kind=BaselineKind.PREV_YEAR_SINGLE_CELL, literal_all_years=False):
        self.kind = kind
        self.literal_all_years = literal_all_years

    def fit(self, panel, y=None):
        self.panel_ = panel
        return self

    def predict(self, rows):
        check_is_fitted(self, "panel_")
        out = np.empty(len(rows))
        for start, grp in rows.groupby("window_start", sort=True):
            pos = rows.index.get_indexer(grp.index)
            out[pos] = baseline_predictions(
                self.kind, self.panel_, int(start), grp[["row", "col"]], self.literal_all_years
            )
        return out
