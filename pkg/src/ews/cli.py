"""Command line pipeline: each subcommand is one stage reading upstream artifacts.

Layout under ``paths.output``::

    config.yaml  manifest.json
    ingest/    sales.csv homes.csv rejects.csv report.json
    grid/      a2=<a2>_t=<t>/{grid.json,panel.csv,cells.geojson}
    features/  features.csv schema.json
    model/     forest.json train.json
    evaluate/  per_fold.csv aggregate.csv tidy.csv
    explain/   shap.csv importance.csv dependence.csv
    audit/     audit.txt coefficients.csv cells.csv

Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .artifacts import MANIFEST, atomic_open, build_manifest, write_json, write_text
from .audit import RankDeficientError, fit_audit, interpolate, read_census_geojson, write_census_geojson
from .config import ConfigError, RunConfig
from .evaluation import EWS, NoFoldsError, Scenario, make_folds, run_fold, run_sweep
from .explain import dependence, rank_features, tree_shap
from .features import FeatureMatrix, InsufficientHistoryError, assemble
from .forest import ForestRegressor, MissingHistoryError, ModelFormatError
from .grid import GridSpec, build_grid, build_panel, dump_geojson, panel_geojson, read_panel, write_panel
from .ingest import (
    LocationConflictError,
    SchemaError,
    parse_locations,
    parse_transactions,
    prepare,
    write_locations,
    write_rejects,
    write_transactions,
)
from .spatial import NeighborGraph
from .synth import generate, generate_census

logger = logging.getLogger("ews")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
STAGES = ("ingest", "grid", "features", "train", "evaluate", "explain", "audit")


class DataError(Exception):
    """Missing or unusable input; reported with exit code 2."""


class UsageError(Exception):
    pass


_DATA_ERRORS = (
    DataError, SchemaError, LocationConflictError, NoFoldsError,
    InsufficientHistoryError, MissingHistoryError, ModelFormatError, RankDeficientError,
)


# -- helpers -------------------------------------------------------------

def _out(cfg: RunConfig) -> Path:
    return Path(cfg.paths.output)


def _require(path: Path | str | None, what: str, hint: str) -> Path:
    if path is None:
        raise DataError(f"no {what} configured; {hint}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"{what} not found at {path}; {hint}")
    return path


def scenario_dir(cfg: RunConfig, a2: float, t: int) -> Path:
    return _out(cfg) / "grid" / f"a2={float(a2):g}_t={int(t)}"


def _grid_combos(cfg: RunConfig) -> list[tuple[float, int]]:
    combos = {(float(a), int(t)) for a in cfg.grid.a2_list for t in cfg.grid.t_list}
    combos.add((float(cfg.grid.focus_a2), int(cfg.grid.focus_t)))
    return sorted(combos)


def _load_prepared(cfg: RunConfig):
    root = _out(cfg) / "ingest"
    hint = "run `ews ingest` first"
    sales_path = _require(root / "sales.csv", "ingested sales", hint)
    homes_path = _require(root / "homes.csv", "home inventory", hint)
    policy = cfg.filter_policy()
    with open(sales_path, encoding="utf-8", newline="") as fh:
        sales, rejects = parse_transactions(fh, date_range=policy.date_range)
    if rejects:
        raise DataError(f"{sales_path} has {len(rejects)} malformed row(s); rerun `ews ingest`")
    with open(homes_path, encoding="utf-8", newline="") as fh:
        homes = parse_locations(fh)
    return sales, homes


def _load_scenario(cfg: RunConfig) -> Scenario:
    a2, t = float(cfg.grid.focus_a2), int(cfg.grid.focus_t)
    sdir = scenario_dir(cfg, a2, t)
    with open(_require(sdir / "grid.json", "grid spec", "run `ews grid` first"), encoding="utf-8") as fh:
        spec = GridSpec.from_dict(json.load(fh))
    panel = read_panel(_require(sdir / "panel.csv", "panel", "run `ews grid` first"))
    fdir = _out(cfg) / "features"
    hint = "run `ews features` first"
    with open(_require(fdir / "schema.json", "feature schema", hint), encoding="utf-8") as fh:
        schema = json.load(fh)
    fm = FeatureMatrix.from_csv(_require(fdir / "features.csv", "feature matrix", hint), schema)
    return Scenario(a2, t, spec, panel, fm)


def _load_model(cfg: RunConfig) -> ForestRegressor:
    path = _require(_out(cfg) / "model" / "forest.json", "trained model", "run `ews train` first")
    with open(path, encoding="utf-8") as fh:
        return ForestRegressor.load(fh)


def _csv(path: Path, frame: pd.DataFrame):
    with atomic_open(path) as fh:
        frame.to_csv(fh, index=False, lineterminator="\n", float_format="%.17g")


# -- stages --------------------------------------------------------------

def stage_synth(cfg: RunConfig, out_dir: Path) -> dict:
    scfg = cfg.synth_config()
    locations, records = generate(scfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    with atomic_open(out_dir / "transactions.csv") as fh:
        write_transactions(records, fh)
    with atomic_open(out_dir / "locations.csv") as fh:
        write_locations(locations, fh)
    with atomic_open(out_dir / "census.geojson") as fh:
        write_census_geojson(generate_census(scfg), fh)
    logger.info("synth: %d parcels, %d transactions -> %s", len(locations), len(records), out_dir)
    return {}


def stage_ingest(cfg: RunConfig) -> dict:
    hint = "set paths.transactions / paths.locations in the config or pass --transactions / --locations"
    tx_path = _require(cfg.paths.transactions, "transactions file", hint)
    loc_path = _require(cfg.paths.locations, "locations file", hint)
    policy = cfg.filter_policy()
    with open(tx_path, encoding="utf-8", newline="") as fh:
        records, rejects = parse_transactions(fh, date_range=policy.date_range)
    with open(loc_path, encoding="utf-8", newline="") as fh:
        locations = parse_locations(fh)
    data = prepare(records, locations, policy)
    if not data.homes:
        raise DataError("no located residential parcels survive filtering")
    root = _out(cfg) / "ingest"
    with atomic_open(root / "sales.csv") as fh:
        write_transactions(data.sales, fh)
    with atomic_open(root / "homes.csv") as fh:
        write_locations(data.homes, fh)
    with atomic_open(root / "rejects.csv") as fh:
        write_rejects(rejects, fh)
    write_json(root / "report.json", {**data.summary(), "n_rejects": len(rejects)})
    logger.info("ingest: %d sales, %d homes, %d rejects", len(data.sales), len(data.homes), len(rejects))
    return {"transactions": tx_path, "locations": loc_path}


def stage_grid(cfg: RunConfig) -> dict:
    sales, homes = _load_prepared(cfg)
    e = cfg.evaluation
    for a2, t in _grid_combos(cfg):
        spec = build_grid(homes, a2)
        panel = build_panel(spec, sales, t, e.first_data_year, e.last_year,
                            homes=homes, step=e.step, min_homes=cfg.grid.min_homes)
        sdir = scenario_dir(cfg, a2, t)
        write_json(sdir / "grid.json", spec.to_dict())
        with atomic_open(sdir / "panel.csv") as fh:
            write_panel(panel, fh)
        with atomic_open(sdir / "cells.geojson") as fh:
            dump_geojson(panel_geojson(spec, panel), fh)
        logger.info("grid a2=%g t=%d: %d cells, %d panel rows", a2, t,
                    panel[["row", "col"]].drop_duplicates().shape[0], len(panel))
    return {}


def stage_features(cfg: RunConfig) -> dict:
    a2, t = float(cfg.grid.focus_a2), int(cfg.grid.focus_t)
    sdir = scenario_dir(cfg, a2, t)
    with open(_require(sdir / "grid.json", "grid spec", "run `ews grid` first"), encoding="utf-8") as fh:
        spec = GridSpec.from_dict(json.load(fh))
    panel = read_panel(_require(sdir / "panel.csv", "panel", "run `ews grid` first"))
    if panel.empty:
        raise DataError(f"panel for a2={a2:g}, t={t} has no cells with at least {cfg.grid.min_homes} homes")
    f = cfg.features
    fm = assemble(panel, spec, [int(k) for k in f.ring_sizes], f.delta, f.lisa_k, f.n_perm, cfg.seed,
                  step=cfg.evaluation.step)
    root = _out(cfg) / "features"
    with atomic_open(root / "features.csv") as fh:
        fm.to_csv(fh)
    with atomic_open(root / "schema.json") as fh:
        fm.schema_json(fh)
    logger.info("features: %d rows x %d columns (%d rows lacked history)", len(fm), fm.X.shape[1], fm.n_dropped)
    return {}


def stage_train(cfg: RunConfig) -> dict:
    sc = _load_scenario(cfg)
    fm = sc.features
    model = ForestRegressor(**cfg.eval_config().forest_params(), random_state=cfg.seed, n_jobs=cfg.n_jobs)
    model.fit(fm.X, fm.y)
    root = _out(cfg) / "model"
    with atomic_open(root / "forest.json") as fh:
        model.save(fh)
    pred = model.predict(fm.X)
    write_json(root / "train.json", {
        "a2": sc.a2, "t": sc.window_len, "n_rows": len(fm), "n_features": fm.X.shape[1],
        "window_starts": sorted(int(w) for w in fm.meta["window_start"].unique()),
        "base_rate": model.base_rate_,
        "train_rmse": float(np.sqrt(np.mean((pred - fm.y) ** 2))),
    })
    logger.info("train: %d trees on %d rows", len(model.trees_), len(fm))
    return {}


def stage_evaluate(cfg: RunConfig) -> dict:
    sales, homes = _load_prepared(cfg)
    report = run_sweep(sales, homes, cfg.grid.a2_list, cfg.grid.t_list, cfg.eval_config(), n_jobs=cfg.n_jobs)
    root = _out(cfg) / "evaluate"
    _csv(root / "per_fold.csv", report.per_fold)
    _csv(root / "aggregate.csv", report.aggregate)
    _csv(root / "tidy.csv", report.tidy())
    absent = report.absent()
    if len(absent):
        logger.warning("evaluate: %d (a2, t) combination(s) absent", len(absent))
    return {}


def stage_explain(cfg: RunConfig) -> dict:
    sc = _load_scenario(cfg)
    model = _load_model(cfg)
    fm = sc.features
    latest = int(fm.meta["window_start"].max())
    rows = fm.windows([latest])
    report = tree_shap(model, rows.X)
    root = _out(cfg) / "explain"
    long = report.to_long()
    long.insert(1, "row", np.repeat(rows.meta["row"].to_numpy(), report.values.shape[1]))
    long.insert(2, "col", np.repeat(rows.meta["col"].to_numpy(), report.values.shape[1]))
    long.insert(3, "window_start", latest)
    _csv(root / "shap.csv", long)
    imp = report.importance_table()
    _csv(root / "importance.csv", imp.head(cfg.explain.top_k))
    top = rank_features(report, top_k=2)
    if len(top) == 2:
        dep = dependence(report, top[0], top[1]).assign(feature_a=top[0], feature_b=top[1])
        _csv(root / "dependence.csv", dep)
    write_json(root / "summary.json", {
        "window_start": latest, "n_rows": len(rows), "base_value": report.base_value,
        "max_additivity_error": float(np.max(np.abs(
            report.base_value + report.values.sum(axis=1).to_numpy() - report.prediction))),
    })
    return {}


def stage_audit(cfg: RunConfig) -> dict:
    census_path = _require(cfg.paths.census, "census polygons",
                           "set paths.census to a GeoJSON of block groups or pass --census")
    sc = _load_scenario(cfg)
    ecfg = cfg.eval_config()
    folds = make_folds(ecfg.first_label_year, ecfg.last_year, sc.window_len, ecfg.step)
    if cfg.audit.split_year is not None:
        folds = [f for f in folds if f.split_year == int(cfg.audit.split_year)]
    res = None
    for fold in reversed(folds):
        res = run_fold(sc, fold, ecfg)
        if res is not None:
            break
    if res is None:
        which = f"split year {cfg.audit.split_year}" if cfg.audit.split_year is not None else "any fold"
        raise DataError(f"no training and test rows for the audit at {which}")
    with open(census_path, encoding="utf-8") as fh:
        polygons = read_census_geojson(fh)
    cells = res.test.meta[["row", "col"]].reset_index(drop=True)
    cov = interpolate(polygons, sc.spec, cells)
    y = res.test.y
    yhat = res.predictions[EWS]
    keep = ~cov["masked"].to_numpy()
    if keep.sum() < 6:
        raise DataError("fewer than 6 cells have census coverage")
    kept = cov[keep].reset_index(drop=True)
    x, yc = sc.spec.center(kept["row"].to_numpy(), kept["col"].to_numpy())
    graph = NeighborGraph.from_cells(kept["row"], kept["col"], x, yc)
    report = fit_audit(y[keep], (y - yhat)[keep], kept, graph=graph,
                       k=cfg.audit.k, n_perm=cfg.audit.n_perm, seed=cfg.seed)
    root = _out(cfg) / "audit"
    write_text(root / "audit.txt", f"# fold split {res.fold.split_year}, a2={sc.a2:g}, t={sc.window_len}\n"
               + report.render())
    _csv(root / "coefficients.csv", report.to_frame())
    _csv(root / "cells.csv", cov.assign(y=y, yhat=yhat, error=y - yhat))
    return {"census": census_path}


STAGE_FUNCS = {
    "ingest": stage_ingest,
    "grid": stage_grid,
    "features": stage_features,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "explain": stage_explain,
    "audit": stage_audit,
}


# -- entry point ---------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML run configuration")
    common.add_argument("--out", help="output directory (overrides paths.output)")
    common.add_argument("--transactions", help="transactions file (overrides paths.transactions)")
    common.add_argument("--locations", help="parcel locations file (overrides paths.locations)")
    common.add_argument("--census", help="census block-group GeoJSON (overrides paths.census)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config value, e.g. --set forest.n_estimators=100")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ews", description="Early warning forecasts of home sales on a spatial grid.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "synth": "generate synthetic transactions, parcel locations and census polygons",
        "ingest": "parse, deduplicate, geolocate and filter transactions",
        "grid": "grid specs and outcome panels for every (a2, t)",
        "features": "lagged spatial features for the focus scenario",
        "train": "fit the forest on all windows of the focus scenario",
        "evaluate": "temporal cross-validation sweep of the forest and baselines",
        "explain": "Shapley attributions for the latest window",
        "audit": "census regressions of outcome and prediction error",
        "all": "ingest, grid, features, train, evaluate, explain and audit in order",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "synth":
            sp.add_argument("dest", nargs="?", help="directory for the generated files (default <out>/synth)")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = list(args.set)
    for flag, key in (("out", "paths.output"), ("transactions", "paths.transactions"),
                      ("locations", "paths.locations"), ("census", "paths.census"), ("seed", "seed")):
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"{key}={value}")
    return cfg.with_overrides(overrides) if overrides else cfg


def run(command: str, cfg: RunConfig, synth_dest: str | None = None) -> Path:
    """Run one subcommand (or ``all``) and write its manifest; returns the manifest path."""
    if command == "synth":
        root = Path(synth_dest) if synth_dest else _out(cfg) / "synth"
        stage_synth(cfg, root)
        inputs = {}
    else:
        root = _out(cfg)
        root.mkdir(parents=True, exist_ok=True)
        write_text(root / "config.yaml", cfg.dump())
        stages = STAGES if command == "all" else (command,)
        inputs = {}
        for stage in stages:
            logger.info("stage %s", stage)
            inputs.update(STAGE_FUNCS[stage](cfg))
        for key in ("transactions", "locations", "census"):
            path = getattr(cfg.paths, key)
            if path is not None and Path(path).exists():
                inputs.setdefault(key, Path(path))
    manifest = build_manifest(command, cfg.to_dict(), cfg.sha256(), inputs, root)
    write_json(root / MANIFEST, manifest)
    return root / MANIFEST


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"ews: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"ews: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        run(args.command, cfg, getattr(args, "dest", None))
    except FileNotFoundError as exc:
        print(f"ews: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except _DATA_ERRORS as exc:
        print(f"ews: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"ews: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
