"""Input checks shared by the estimators."""
from __future__ import annotations

import math

import numpy as np
import pandas as pd
from sklearn.utils import check_array


class SchemaMismatchError(ValueError):
    """Prediction-time feature columns do not match the training schema."""


def _as_frame_values(X):
    from .features import FeatureMatrix

    if isinstance(X, FeatureMatrix):
        X = X.X
    if isinstance(X, pd.DataFrame):
        return X, np.asarray(X.columns, dtype=object)
    return X, None


def check_Xy(X, y):
    X, names = _as_frame_values(X)
    if y is None:
        raise ValueError("targets are required")
    arr = check_array(X, dtype=np.float64, ensure_min_samples=2)
    y = check_array(np.asarray(y, dtype=float), ensure_2d=False, dtype=np.float64)
    if y.ndim != 1 or len(y) != arr.shape[0]:
        raise ValueError(f"y has shape {y.shape}, expected ({arr.shape[0]},)")
    return arr, y, names


def check_features(estimator, X) -> np.ndarray:
    X, names = _as_frame_values(X)
    expected = getattr(estimator, "feature_names_in_", None)
    if names is not None and expected is not None:
        missing = [c for c in expected if c not in set(names)]
        if missing:
            raise SchemaMismatchError(f"missing feature columns: {missing[:5]}")
        X = X[list(expected)]
    arr = check_array(X, dtype=np.float64)
    if arr.shape[1] != estimator.n_features_in_:
        raise SchemaMismatchError(
            f"X has {arr.shape[1]} features, model was fitted with {estimator.n_features_in_}"
        )
    return arr


def resolve_max_features(max_features, n_features: int) -> int:
    if max_features is None:
        return n_features
    if max_features == "sqrt":
        return max(1, math.ceil(math.sqrt(n_features)))
    if max_features == "log2":
        return max(1, math.ceil(math.log2(n_features)))
    if isinstance(max_features, float):
        if not 0 < max_features <= 1:
            raise ValueError("fractional max_features must lie in (0, 1]")
        return max(1, math.ceil(max_features * n_features))
    if isinstance(max_features, (int, np.integer)) and max_features >= 1:
        return min(int(max_features), n_features)
    raise ValueError(f"invalid max_features {max_features!r}")
