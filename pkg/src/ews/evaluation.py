"""Temporal cross-validation of the forest against the baselines over (a2, t) grids."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .features import FeatureMatrix, InsufficientHistoryError, assemble
from .forest import BaselineKind, ForestRegressor, baseline_predictions
from .grid import GridSpec, build_grid, build_panel
from .ingest import ParcelLocation, TransactionRecord
from .metrics import kendall_tau_b, ndcg, rmse
from .spatial import DEFAULT_RINGS

logger = logging.getLogger(__name__)

EWS = "EWS"
MODELS = (EWS,) + tuple(k.value for k in BaselineKind)
METRICS = ("rmse", "kendall_tau_b", "ndcg")
Z95 = 1.959963984540054


class NoFoldsError(ValueError):
    pass


@dataclass(frozen=True)
class FoldSpec:
    """Predict the window [split_year, split_year + window_len) from windows ending by split_year."""

    split_year: int
    window_len: int

    @property
    def label_window(self) -> tuple[int, int]:
        return self.split_year, self.split_year + self.window_len

    def is_training_window(self, window_start: int) -> bool:
        return window_start + self.window_len <= self.split_year


def make_folds(first_label_year: int, last_year: int, window_len: int, step: int = 1) -> list[FoldSpec]:
    """Yearly folds whose label window ends within calendar year ``last_year``."""
    folds = [
        FoldSpec(s, window_len)
        for s in range(first_label_year, last_year - window_len + 2, step)
    ]
    if not folds:
        raise NoFoldsError(
            f"no {window_len}-year label window starting {first_label_year} fits data ending {last_year}"
        )
    return folds


@dataclass(frozen=True)
class EvalConfig:
    first_data_year: int = 2000
    last_year: int = 2019
    first_label_year: int = 2009
    delta: int = 3
    ring_sizes: tuple = DEFAULT_RINGS
    lisa_k: int | None = None
    n_perm: int = 999
    min_homes: int = 10
    step: int = 1
    seed: int = 0
    forest: dict = field(default_factory=dict)
    literal_all_years: bool = False

    def forest_params(self) -> dict:
        params = {"n_estimators": 500, "max_features": "sqrt", "min_samples_leaf": 3,
                  "max_depth": None, "bootstrap": True}
        params.update(self.forest)
        return params


@dataclass
class Scenario:
    """Grid, panel and feature matrix for one (a2, t)."""

    a2: float
    window_len: int
    spec: GridSpec
    panel: pd.DataFrame
    features: FeatureMatrix | None


def fold_seed(seed: int, a2: float, window_len: int, split_year: int) -> int:
    key = (int(round(a2 * 1_000_000)), int(window_len), int(split_year))
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1, dtype=np.uint32)[0])


def build_scenario(
    sales: Sequence[TransactionRecord],
    homes: Sequence[ParcelLocation],
    a2: float,
    window_len: int,
    cfg: EvalConfig,
    label_starts: Sequence[int] | None = None,
) -> Scenario:
    spec = build_grid(homes, a2)
    panel = build_panel(
        spec, sales, window_len, cfg.first_data_year, cfg.last_year,
        homes=homes, step=cfg.step, min_homes=cfg.min_homes,
    )
    if panel.empty or panel[["row", "col"]].drop_duplicates().shape[0] < 3:
        return Scenario(a2, window_len, spec, panel, None)
    try:
        fm = assemble(
            panel, spec, cfg.ring_sizes, cfg.delta, cfg.lisa_k, cfg.n_perm, cfg.seed,
            label_starts=label_starts, step=cfg.step,
        )
    except InsufficientHistoryError:
        fm = None
    return Scenario(a2, window_len, spec, panel, fm)


@dataclass
class FoldResult:
    fold: FoldSpec
    train: FeatureMatrix
    test: FeatureMatrix
    model: ForestRegressor
    predictions: dict

    def metrics(self) -> list[dict]:
        y = self.test.y
        rows = []
        for name, pred in self.predictions.items():
            tau = kendall_tau_b(y, pred)
            rows.append(
                {
                    "model": name,
                    "fold": self.fold.split_year,
                    "rmse": rmse(y, pred),
                    "kendall_tau_b": tau,
                    "tau_defined": not math.isnan(tau),
                    "ndcg": ndcg(y, pred),
                    "n_cells": len(y),
                }
            )
        return rows


def run_fold(scenario: Scenario, fold: FoldSpec, cfg: EvalConfig) -> FoldResult | None:
    """Train on windows ending by the split year and forecast the label window."""
    fm = scenario.features
    if fm is None:
        return None
    starts = fm.meta["window_start"].to_numpy()
    train_idx = np.flatnonzero(starts + fold.window_len <= fold.split_year)
    test_idx = np.flatnonzero(starts == fold.split_year)
    if len(train_idx) < 2 or len(test_idx) == 0:
        return None
    train, test = fm.select(train_idx), fm.select(test_idx)
    model = ForestRegressor(
        **cfg.forest_params(),
        random_state=fold_seed(cfg.seed, scenario.a2, fold.window_len, fold.split_year),
    )
    model.fit(train.X, train.y)
    preds = {EWS: model.predict(test.X)}
    cells = test.meta[["row", "col"]]
    for kind in BaselineKind:
        preds[kind.value] = baseline_predictions(
            kind, scenario.panel, fold.split_year, cells, cfg.literal_all_years
        )
    return FoldResult(fold, train, test, model, preds)


def evaluate_scenario(
    sales, homes, a2: float, window_len: int, cfg: EvalConfig
) -> pd.DataFrame:
    try:
        folds = make_folds(cfg.first_label_year, cfg.last_year, window_len, cfg.step)
    except NoFoldsError:
        folds = []
    scenario = build_scenario(sales, homes, a2, window_len, cfg)
    rows = []
    for fold in folds:
        res = run_fold(scenario, fold, cfg)
        if res is None:
            continue
        for r in res.metrics():
            rows.append({"a2": a2, "t": window_len, **r})
    if not rows:
        logger.warning("a2=%s t=%s produced no evaluable folds; recorded as absent", a2, window_len)
        return pd.DataFrame([{"a2": a2, "t": window_len, "model": m, "fold": -1, "absent": True} for m in MODELS])
    out = pd.DataFrame(rows)
    out["absent"] = False
    return out


def aggregate(per_fold: pd.DataFrame) -> pd.DataFrame:
    """Mean and normal 95% interval across folds per (model, a2, t, metric).

    An undefined tau-b (constant forecast) counts as 0: no ranking signal.
    """
    present = per_fold[~per_fold["absent"]]
    rows = []
    for (model, a2, t), grp in present.groupby(["model", "a2", "t"], sort=True):
        for metric in METRICS:
            vals = grp[metric].to_numpy(dtype=float)
            if metric == "kendall_tau_b":
                vals = np.nan_to_num(vals, nan=0.0)
            n = len(vals)
            mean = float(vals.mean())
            sd = float(vals.std(ddof=1)) if n > 1 else 0.0
            half = Z95 * sd / math.sqrt(n)
            rows.append(
                {"model": model, "a2": a2, "t": t, "metric": metric, "mean": mean, "sd": sd,
                 "ci_low": mean - half, "ci_high": mean + half, "n_folds": n}
            )
    return pd.DataFrame(rows)


@dataclass
class MetricReport:
    per_fold: pd.DataFrame
    aggregate: pd.DataFrame

    def absent(self) -> pd.DataFrame:
        return self.per_fold[self.per_fold["absent"]][["a2", "t"]].drop_duplicates()

    def mean(self, model: str, metric: str, a2=None, t=None) -> float:
        agg = self.aggregate
        sel = (agg["model"] == model) & (agg["metric"] == metric)
        if a2 is not None:
            sel &= np.isclose(agg["a2"], a2)
        if t is not None:
            sel &= agg["t"] == t
        return float(agg[sel]["mean"].mean())

    def tidy(self) -> pd.DataFrame:
        """Long per-fold table (model, a2, t, fold, metric, value) for plotting."""
        present = self.per_fold[~self.per_fold["absent"]]
        return present.melt(
            id_vars=["model", "a2", "t", "fold"], value_vars=list(METRICS), var_name="metric", value_name="value"
        ).sort_values(["model", "a2", "t", "fold", "metric"]).reset_index(drop=True)


def run_sweep(
    sales: Sequence[TransactionRecord],
    homes: Sequence[ParcelLocation],
    a2_list: Sequence[float],
    t_list: Sequence[int],
    cfg: EvalConfig,
    n_jobs: int = 1,
) -> MetricReport:
    """Every model on every fold for the cross product of ``a2_list`` and ``t_list``."""
    combos = [(float(a2), int(t)) for a2 in a2_list for t in t_list]
    if n_jobs == 1:
        parts = [evaluate_scenario(sales, homes, a2, t, cfg) for a2, t in combos]
    else:
        parts = Parallel(n_jobs=n_jobs)(delayed(evaluate_scenario)(sales, homes, a2, t, cfg) for a2, t in combos)
    per_fold = pd.concat(parts, ignore_index=True)
    per_fold = per_fold.sort_values(["model", "a2", "t", "fold"]).reset_index(drop=True)
    return MetricReport(per_fold, aggregate(per_fold))
