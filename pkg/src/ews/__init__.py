"""Early warning forecasts of neighborhood home-sale rates on a spatial grid."""
__version__ = "0.1.0"

from .config import RunConfig
from .evaluation import EvalConfig, MetricReport, run_sweep
from .explain import ShapReport, tree_shap
from .features import FeatureMatrix, PanelFeaturizer, assemble
from .forest import BaselineKind, BaselineRegressor, ForestRegressor
from .grid import GridSpec, build_grid, build_panel
from .ingest import FilterPolicy, ParcelLocation, TransactionRecord, prepare
from .metrics import kendall_tau_b, ndcg, rmse
from .spatial import local_moran
from .synth import SynthConfig, generate

__all__ = [
    "BaselineKind", "BaselineRegressor", "EvalConfig", "FeatureMatrix", "FilterPolicy",
    "ForestRegressor", "GridSpec", "MetricReport", "PanelFeaturizer", "ParcelLocation",
    "RunConfig", "ShapReport", "SynthConfig", "TransactionRecord", "assemble", "build_grid",
    "build_panel", "generate", "kendall_tau_b", "local_moran", "ndcg", "prepare", "rmse",
    "run_sweep", "tree_shap",
]
