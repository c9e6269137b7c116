import numpy as np
import pandas as pd
import pytest

from ews.evaluation import EvalConfig, build_scenario
from ews.explain import dependence, rank_features, tree_shap
from ews.forest import ForestRegressor
from oracles import shapley_exhaustive


def random_forest(seed, n_rows=150):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 9))
    X = rng.integers(0, 5, (n_rows, d)).astype(float) + rng.random((n_rows, d)) * (rng.random(d) < 0.5)
    y = X[:, 0] * (X[:, -1] > 2) + 0.5 * X[:, d // 2] + rng.normal(0, 0.3, n_rows)
    model = ForestRegressor(
        n_estimators=int(rng.integers(1, 11)),
        max_depth=int(rng.integers(1, 5)),
        min_samples_leaf=int(rng.integers(1, 4)),
        max_features=int(rng.integers(1, d + 1)),
        random_state=seed,
    ).fit(X, y)
    return model, X


@pytest.mark.parametrize("seed", range(6))
def test_matches_exhaustive_coalitions(seed):
    model, X = random_forest(seed)
    rows = X[:8]
    report = tree_shap(model, rows)
    for i, x in enumerate(rows):
        assert np.allclose(report.values.to_numpy()[i], shapley_exhaustive(model.trees_, x), rtol=0, atol=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_additivity(seed):
    model, X = random_forest(seed)
    report = tree_shap(model, X)
    total = report.base_value + report.values.sum(axis=1).to_numpy()
    assert np.allclose(total, model.predict(X), rtol=0, atol=1e-9)
    assert np.allclose(report.prediction, model.predict(X))


def test_stump_assigns_everything_to_its_feature():
    rng = np.random.default_rng(0)
    X = rng.random((60, 3))
    y = (X[:, 1] > 0.5).astype(float)
    model = ForestRegressor(n_estimators=1, max_depth=1, bootstrap=False, max_features=None).fit(X, y)
    report = tree_shap(model, X)
    vals = report.values.to_numpy()
    assert np.allclose(vals[:, [0, 2]], 0.0)
    assert np.allclose(vals[:, 1], model.predict(X) - report.base_value, atol=1e-12)


def test_unused_feature_gets_zero():
    rng = np.random.default_rng(1)
    X = rng.random((80, 4))
    X[:, 3] = 7.0  # constant, never split on
    y = X[:, 0] + X[:, 1]
    model = ForestRegressor(n_estimators=5, max_depth=3, random_state=0).fit(X, y)
    assert np.all(tree_shap(model, X).values.to_numpy()[:, 3] == 0.0)


def test_duplicate_features_share_credit():
    rng = np.random.default_rng(2)
    base = rng.integers(0, 4, 120).astype(float)
    X = np.column_stack([base, base, rng.random(120)])
    y = base + 0.1 * X[:, 2]
    model = ForestRegressor(n_estimators=8, max_depth=3, max_features=None, random_state=0).fit(X, y)
    rows = X[:10]
    brute = np.array([shapley_exhaustive(model.trees_, x) for x in rows])
    assert np.allclose(tree_shap(model, rows).values.to_numpy(), brute, atol=1e-9)


def frame_model():
    rng = np.random.default_rng(3)
    X = pd.DataFrame({"b": rng.random(50), "a": rng.random(50), "c": np.zeros(50)})
    y = 3 * X["a"] + 0.2 * X["b"]
    return ForestRegressor(n_estimators=10, max_depth=4, random_state=0).fit(X, y), X


def test_report_outputs():
    model, X = frame_model()
    report = tree_shap(model, X)
    assert list(report.values.columns) == ["b", "a", "c"]
    long = report.to_long()
    assert len(long) == 150
    assert set(long.columns) == {"row_id", "feature", "shap", "feature_value_normalized"}
    assert long["feature_value_normalized"].between(0, 1).all()
    assert rank_features(report, top_k=1) == ["a"]
    assert rank_features(report, top_k=99) == ["a", "b", "c"]  # ties (c: 0) by name, full list
    imp = report.importance_table()
    assert list(imp["rank"]) == [1, 2, 3]


def test_dependence():
    model, X = frame_model()
    report = tree_shap(model, X)
    dep = dependence(report, "a", "c")
    assert list(dep.columns) == ["value_a", "shap_a", "value_b"]
    assert dep["value_b"].nunique() == 1
    with pytest.raises(KeyError):
        dependence(report, "a", "zzz")


def test_reordered_columns_are_aligned():
    model, X = frame_model()
    a = tree_shap(model, X).values
    b = tree_shap(model, X[["c", "a", "b"]]).values
    pd.testing.assert_frame_equal(a, b)


def test_neighbor_sales_outrank_cell_size(small_city):
    # contagious synthetic sales: recent nearby turnover matters more than the cell's home count
    sc = build_scenario(small_city.sales, small_city.homes, 0.0625, 1, EvalConfig(n_perm=0))
    fm = sc.features
    model = ForestRegressor(n_estimators=30, min_samples_leaf=3, random_state=0).fit(fm.X, fm.y)
    imp = tree_shap(model, fm.X).mean_abs
    ring = [c for c in fm.feature_names if c.startswith("pct_sold_ring") and c.endswith("_t1")]
    assert max(imp[c] for c in ring) > imp["n_homes"]
