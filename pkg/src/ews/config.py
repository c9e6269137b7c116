"""Run configuration: a YAML tree validated into typed sections before any stage runs."""
from __future__ import annotations

import copy
import hashlib
from dataclasses import asdict, dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import IO, Any

import yaml

from .evaluation import EvalConfig
from .ingest import FilterPolicy
from .spatial import DEFAULT_RINGS
from .synth import SynthConfig

DEFAULT_A2 = (0.06, 0.14, 0.25, 0.37, 0.5, 0.75, 1.03)


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    transactions: str | None = None
    locations: str | None = None
    census: str | None = None
    output: str = "ews_out"


@dataclass
class GridSection:
    a2_list: list = field(default_factory=lambda: list(DEFAULT_A2))
    t_list: list = field(default_factory=lambda: [1, 2, 3])
    # scenario used by features/train/explain/audit
    focus_a2: float = 0.145
    focus_t: int = 1
    min_homes: int = 10


@dataclass
class FeatureSection:
    delta: int = 3
    ring_sizes: list = field(default_factory=lambda: list(DEFAULT_RINGS))
    lisa_k: int | None = None
    n_perm: int = 999


@dataclass
class EvaluationSection:
    first_data_year: int = 2000
    last_year: int = 2019
    first_label_year: int = 2009
    step: int = 1
    literal_all_years: bool = False


@dataclass
class ForestSection:
    n_estimators: int = 500
    max_features: Any = "sqrt"
    min_samples_leaf: int = 3
    max_depth: int | None = None
    bootstrap: bool = True


@dataclass
class FilterSection:
    deed_whitelist: list = field(default_factory=lambda: ["D1A", "D1B", "D1BU", "DEED"])
    min_price: int = 5
    residential_only: bool = True
    date_start: str = "2000-01-01"
    date_end: str = "2019-12-31"


@dataclass
class ExplainSection:
    top_k: int = 25


@dataclass
class AuditSection:
    k: int = 8
    n_perm: int = 999
    split_year: int | None = 2018  # None: latest evaluable fold


@dataclass
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    grid: GridSection = field(default_factory=GridSection)
    features: FeatureSection = field(default_factory=FeatureSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    forest: ForestSection = field(default_factory=ForestSection)
    filter: FilterSection = field(default_factory=FilterSection)
    explain: ExplainSection = field(default_factory=ExplainSection)
    audit: AuditSection = field(default_factory=AuditSection)
    synth: dict = field(default_factory=dict)
    seed: int = 0
    n_jobs: int = 1

    # -- construction -------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        data = copy.deepcopy(data or {})
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            section_type = _SECTIONS.get(key)
            if section_type is not None:
                kwargs[key] = _section(section_type, key, value)
            else:
                kwargs[key] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, source: IO[str] | str | Path) -> "RunConfig":
        if isinstance(source, (str, Path)):
            with open(source, encoding="utf-8") as fh:
                return cls.from_dict(yaml.safe_load(fh))
        return cls.from_dict(yaml.safe_load(source))

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    def sha256(self) -> str:
        return hashlib.sha256(self.dump().encode("utf-8")).hexdigest()

    def with_overrides(self, assignments) -> "RunConfig":
        """Apply ``dotted.key=value`` overrides (values parsed as YAML scalars)."""
        data = self.to_dict()
        for item in assignments:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            key, raw = item.split("=", 1)
            node = data
            parts = key.strip().split(".")
            for part in parts[:-1]:
                if not isinstance(node.get(part), dict):
                    raise ConfigError(f"unknown config section in {key!r}")
                node = node[part]
            if parts[-1] not in node and node is not data.get("synth"):
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = yaml.safe_load(raw)
        return RunConfig.from_dict(data)

    # -- validation ---------------------------------------------------
    def validate(self):
        g, f, e = self.grid, self.features, self.evaluation
        if not g.a2_list or any(not float(a) > 0 for a in g.a2_list):
            raise ConfigError("grid.a2_list must be a non-empty list of positive areas")
        if not g.t_list or any(int(t) < 1 for t in g.t_list):
            raise ConfigError("grid.t_list must be a non-empty list of positive window lengths")
        if not float(g.focus_a2) > 0 or int(g.focus_t) < 1:
            raise ConfigError("grid.focus_a2 must be positive and grid.focus_t at least 1")
        if g.min_homes < 1:
            raise ConfigError("grid.min_homes must be at least 1")
        if f.delta < 1:
            raise ConfigError("features.delta must be at least 1")
        if not f.ring_sizes or any(int(k) < 1 for k in f.ring_sizes):
            raise ConfigError("features.ring_sizes must be positive neighbor counts")
        if f.n_perm < 1:
            raise ConfigError("features.n_perm must be positive")
        if e.first_data_year > e.last_year:
            raise ConfigError("evaluation.first_data_year must not exceed evaluation.last_year")
        if not e.first_data_year <= e.first_label_year <= e.last_year:
            raise ConfigError("evaluation.first_label_year must lie within the data years")
        if e.step < 1:
            raise ConfigError("evaluation.step must be at least 1")
        if self.forest.n_estimators < 1 or self.forest.min_samples_leaf < 1:
            raise ConfigError("forest.n_estimators and forest.min_samples_leaf must be positive")
        if self.n_jobs == 0:
            raise ConfigError("n_jobs must be nonzero")
        try:
            self.filter_policy()
        except ValueError as exc:
            raise ConfigError(f"filter: {exc}") from exc
        try:
            self.synth_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"synth: {exc}") from exc

    # -- adapters ------------------------------------------------------
    def filter_policy(self) -> FilterPolicy:
        fl = self.filter
        return FilterPolicy(
            deed_whitelist=frozenset(fl.deed_whitelist),
            min_price=int(fl.min_price),
            residential_only=bool(fl.residential_only),
            date_range=(_as_date(fl.date_start), _as_date(fl.date_end)),
        )

    def eval_config(self) -> EvalConfig:
        e, f = self.evaluation, self.features
        return EvalConfig(
            first_data_year=e.first_data_year,
            last_year=e.last_year,
            first_label_year=e.first_label_year,
            delta=f.delta,
            ring_sizes=tuple(int(k) for k in f.ring_sizes),
            lisa_k=f.lisa_k,
            n_perm=f.n_perm,
            min_homes=self.grid.min_homes,
            step=e.step,
            seed=self.seed,
            forest=asdict(self.forest),
            literal_all_years=e.literal_all_years,
        )

    def synth_config(self) -> SynthConfig:
        params = dict(self.synth)
        params.setdefault("seed", self.seed)
        for key in ("extent_km", "years", "census_blocks", "hotspots"):
            if key in params:
                params[key] = tuple(tuple(v) if isinstance(v, list) else v for v in params[key]) \
                    if key == "hotspots" else tuple(params[key])
        return SynthConfig(**params)


_SECTIONS = {
    "paths": Paths,
    "grid": GridSection,
    "features": FeatureSection,
    "evaluation": EvaluationSection,
    "forest": ForestSection,
    "filter": FilterSection,
    "explain": ExplainSection,
    "audit": AuditSection,
}


def _section(kind, name: str, value):
    if value is None:
        return kind()
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    allowed = {f.name for f in fields(kind)}
    unknown = sorted(set(value) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    return kind(**value)


def _as_date(value) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError as exc:
        raise ConfigError(f"bad date {value!r}") from exc
