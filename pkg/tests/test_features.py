import io
import json

import numpy as np
import pandas as pd
import pytest

from ews.features import (
    FeatureMatrix,
    InsufficientHistoryError,
    PanelFeaturizer,
    assemble,
    cell_statistics,
    lag_start,
    median_price,
    window_block_columns,
)
from ews.grid import build_grid, build_panel
from ews.spatial import DEFAULT_RINGS


def test_median_price():
    assert median_price([100_000, 300_000, 200_000]) == 200_000
    assert median_price([100_000, 200_000]) == 150_000
    assert np.isnan(median_price([]))


def test_lag_start():
    assert [lag_start(2009, 1, j) for j in (1, 2, 3)] == [2008, 2007, 2006]
    assert [lag_start(2009, 2, j) for j in (1, 2, 3)] == [2007, 2006, 2005]


def test_column_count():
    rings = DEFAULT_RINGS
    per_stat = 1 + len(rings) + 1 + 1 + 4 + 2 * len(rings) + 1
    expected = 1 + 3 * (3 * per_stat + 1)  # n_homes; 3 lags of 3 statistics plus the median-missing flag
    assert expected == 211
    assert 1 + 3 * len(window_block_columns(rings)) == expected


@pytest.fixture(scope="module")
def scenario(small_city):
    spec = build_grid(small_city.homes, 0.25)
    panel = build_panel(spec, small_city.sales, 1, 2000, 2019, homes=small_city.homes)
    return spec, panel


def test_assemble_shapes_and_history(scenario):
    spec, panel = scenario
    fm = assemble(panel, spec, n_perm=19, label_starts=[2002, 2003, 2009])
    n_cells = panel[["row", "col"]].drop_duplicates().shape[0]
    assert fm.X.shape == (2 * n_cells, 211)
    assert fm.n_dropped == n_cells  # 2002 lacks the t-3 window
    assert sorted(fm.meta["window_start"].unique()) == [2003, 2009]
    assert not fm.X.isna().any().any()
    assert set(fm.schema) == set(fm.feature_names)
    assert fm.schema["pct_sold_ring8_t2"] == {"family": "pct_sold", "kind": "spatial_lag", "ring": 8, "lag": 2}


def test_insufficient_history(scenario):
    spec, panel = scenario
    late = panel[panel["window_start"] >= 2007]
    with pytest.raises(InsufficientHistoryError):
        assemble(late, spec, n_perm=0, label_starts=[2009])


def test_features_use_only_lagged_windows(scenario):
    spec, panel = scenario
    fm = assemble(panel, spec, n_perm=0, label_starts=[2010])
    prev = panel[panel["window_start"] == 2009].sort_values(["row", "col"])
    assert np.array_equal(fm.X["pct_sold_t1"].to_numpy(), prev["y"].to_numpy())
    two_back = panel[panel["window_start"] == 2008].sort_values(["row", "col"])
    assert np.array_equal(fm.X["n_transactions_t2"].to_numpy(), two_back["n_transactions"].to_numpy(dtype=float))


def test_future_data_leaves_features_unchanged(small_city):
    spec = build_grid(small_city.homes, 0.25)
    full = build_panel(spec, small_city.sales, 1, 2000, 2019, homes=small_city.homes)
    past_sales = [r for r in small_city.sales if r.date.year < 2012]
    cut = build_panel(spec, past_sales, 1, 2000, 2019, homes=small_city.homes)
    a = assemble(full, spec, n_perm=49, label_starts=[2012])
    b = assemble(cut, spec, n_perm=49, label_starts=[2012])
    pd.testing.assert_frame_equal(a.X, b.X, check_exact=True)
    pd.testing.assert_frame_equal(a.mask, b.mask, check_exact=True)


def test_imputation_masks_missing_prices(scenario):
    spec, panel = scenario
    fm = assemble(panel, spec, n_perm=0, label_starts=[2010])
    missing = fm.X["median_price_missing_t1"].to_numpy() == 1
    assert np.array_equal(fm.mask["median_price_t1"].to_numpy(), missing)
    # cells whose previous window had no sales
    prev = panel[panel["window_start"] == 2009].sort_values(["row", "col"])
    assert np.array_equal(missing, prev["n_transactions"].to_numpy() == 0)


def test_cell_statistics(scenario):
    _, panel = scenario
    stats = cell_statistics(panel.head(5))
    assert list(stats.columns) == ["n_transactions", "pct_sold", "median_price"]
    with pytest.raises(ValueError):
        cell_statistics(panel.head(0))


def test_csv_round_trip(scenario):
    spec, panel = scenario
    fm = assemble(panel, spec, n_perm=9, label_starts=[2015])
    buf, sch = io.StringIO(), io.StringIO()
    fm.to_csv(buf)
    fm.schema_json(sch)
    buf.seek(0)
    back = FeatureMatrix.from_csv(buf, json.loads(sch.getvalue()))
    pd.testing.assert_frame_equal(back.X, fm.X, check_exact=True)
    assert np.array_equal(back.y, fm.y)
    assert back.schema == fm.schema


def test_featurizer(scenario):
    spec, panel = scenario
    tf = PanelFeaturizer(spec=spec, n_perm=0).fit(panel)
    X = tf.transform(panel)
    assert list(X.columns) == list(tf.get_feature_names_out())
    assert X.index.names == ["row", "col", "window_start"]
    assert X.index.get_level_values("window_start").min() == 2003
