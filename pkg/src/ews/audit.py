"""Equity audit: census covariates on grid cells and regressions of outcome and error."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import IO, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from shapely.geometry import Polygon, box
from shapely.strtree import STRtree

from .grid import GridSpec
from .spatial import NeighborGraph, moran_permutation_test

logger = logging.getLogger(__name__)

ERROR_CONVENTION = "error = y - yhat (actual minus predicted); positive means under-prediction"
COVARIATES = ("pct_black", "pct_hispanic", "log_mean_income")
LABELS = {
    "pct_black": "% Black residents",
    "pct_hispanic": "% Hispanic Residents",
    "log_mean_income": "Log(Mean Income)",
    "y": "% Homes Sold",
    "const": "Constant",
}
DEFAULT_FIELDS = {
    "pct_black": "pct_black",
    "pct_hispanic": "pct_hispanic",
    "mean_income": "mean_income",
    "households": "households",
}


class RankDeficientError(ValueError):
    pass


@dataclass
class CensusPolygon:
    """Block-group polygon as a closed (lon, lat) ring with ACS-style attributes."""

    ring: list
    pct_black: float
    pct_hispanic: float
    mean_income: float
    households: float
    geoid: str = ""

    def __post_init__(self):
        for name in ("pct_black", "pct_hispanic"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name}={v} outside [0, 1]")


def read_census_geojson(source: IO[str], fields: Mapping[str, str] | None = None) -> list[CensusPolygon]:
    """Polygons (outer rings only) and their attributes from a GeoJSON FeatureCollection."""
    fields = {**DEFAULT_FIELDS, **(fields or {})}
    data = json.load(source)
    out = []
    for feat in data.get("features", []):
        geom = feat["geometry"]
        props = feat.get("properties") or {}
        if geom["type"] == "Polygon":
            rings = [geom["coordinates"][0]]
        elif geom["type"] == "MultiPolygon":
            rings = [poly[0] for poly in geom["coordinates"]]
        else:
            continue
        for ring in rings:
            out.append(
                CensusPolygon(
                    ring=[list(map(float, pt[:2])) for pt in ring],
                    pct_black=float(props[fields["pct_black"]]),
                    pct_hispanic=float(props[fields["pct_hispanic"]]),
                    mean_income=float(props[fields["mean_income"]]),
                    households=float(props[fields["households"]]),
                    geoid=str(props.get("geoid", "")),
                )
            )
    return out


def write_census_geojson(polygons: Sequence[CensusPolygon], out: IO[str]):
    feats = [
        {
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [p.ring]},
            "properties": {
                "geoid": p.geoid,
                "pct_black": p.pct_black,
                "pct_hispanic": p.pct_hispanic,
                "mean_income": p.mean_income,
                "households": p.households,
            },
        }
        for p in polygons
    ]
    json.dump({"type": "FeatureCollection", "features": feats}, out, sort_keys=True, separators=(",", ":"))
    out.write("\n")


def _projected(poly: CensusPolygon, spec: GridSpec) -> Polygon:
    ring = np.asarray(poly.ring, dtype=float)
    x, y = spec.project(ring[:, 1], ring[:, 0])
    shape = Polygon(np.column_stack([x, y]))
    return shape if shape.is_valid else shape.buffer(0)


def interpolate(polygons: Sequence[CensusPolygon], spec: GridSpec, cells: pd.DataFrame) -> pd.DataFrame:
    """Areal interpolation of block-group attributes onto grid cells.

    Rates (% Black, % Hispanic) are intersection-area weighted. Mean income
    is weighted by the households estimated in each intersection
    (households * intersection area / polygon area). Cells with no overlap
    are NaN and flagged in ``masked``.
    """
    shapes = [_projected(p, spec) for p in polygons]
    tree = STRtree(shapes)
    area = np.array([s.area for s in shapes])
    rows = []
    n_masked = 0
    for r, c in zip(cells["row"].to_numpy(), cells["col"].to_numpy()):
        x0 = spec.origin_x + c * spec.cell_side
        y0 = spec.origin_y + r * spec.cell_side
        cell = box(x0, y0, x0 + spec.cell_side, y0 + spec.cell_side)
        acc = np.zeros(5)  # area, area*black, area*hisp, hh, hh*income
        for j in tree.query(cell):
            a = cell.intersection(shapes[j]).area
            if a <= 0:
                continue
            p = polygons[j]
            hh = p.households * a / area[j]
            acc += (a, a * p.pct_black, a * p.pct_hispanic, hh, hh * p.mean_income)
        if acc[0] > 0:
            income = acc[4] / acc[3] if acc[3] > 0 else math.nan
            rows.append((r, c, acc[1] / acc[0], acc[2] / acc[0], income, acc[0], False))
        else:
            n_masked += 1
            rows.append((r, c, math.nan, math.nan, math.nan, 0.0, True))
    if n_masked:
        logger.warning("%d cell(s) have no census coverage and are masked", n_masked)
    return pd.DataFrame(
        rows, columns=["row", "col", "pct_black", "pct_hispanic", "mean_income", "covered_area", "masked"]
    )


def scale_two_sd(x) -> np.ndarray:
    """(x - mean) / (2 * sd), sample sd (n - 1)."""
    x = np.asarray(x, dtype=float)
    sd = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
    if not sd > 0:
        raise ValueError("cannot scale a constant column")
    return (x - x.mean()) / (2.0 * sd)


def stars(p: float) -> str:
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else ""


@dataclass
class OlsResult:
    names: list
    coef: np.ndarray
    se: np.ndarray
    tvalues: np.ndarray
    pvalues: np.ndarray
    residuals: np.ndarray
    sigma2: float
    n: int
    r2: float

    def table(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"coef": self.coef, "se": self.se, "t": self.tvalues, "p": self.pvalues,
             "stars": [stars(p) for p in self.pvalues]},
            index=self.names,
        )


def fit_ols(y, X: pd.DataFrame, intercept: bool = True) -> OlsResult:
    """Ordinary least squares with classical standard errors."""
    y = np.asarray(y, dtype=float)
    names = list(X.columns)
    A = X.to_numpy(dtype=float)
    if intercept:
        A = np.column_stack([A, np.ones(len(y))])
        names.append("const")
    n, p = A.shape
    if n < p + 1:
        raise ValueError(f"{n} observations for {p} parameters")
    if np.linalg.matrix_rank(A) < p:
        raise RankDeficientError("design matrix is rank deficient")
    q, r = np.linalg.qr(A)
    coef = np.linalg.solve(r, q.T @ y)
    resid = y - A @ coef
    dof = n - p
    sigma2 = float(resid @ resid / dof)
    r_inv = np.linalg.inv(r)
    se = np.sqrt(sigma2 * np.sum(r_inv**2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        tvals = np.where(se > 0, coef / se, np.where(coef == 0, 0.0, np.inf))
    pvals = 2 * stats.t.sf(np.abs(tvals), dof)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return OlsResult(names, coef, se, tvals, pvals, resid, sigma2, n, r2)


@dataclass
class AuditReport:
    outcome_model: OlsResult
    error_model: OlsResult
    residual_moran: dict = field(default_factory=dict)
    convention: str = ERROR_CONVENTION

    @property
    def n(self) -> int:
        return self.outcome_model.n

    def to_frame(self) -> pd.DataFrame:
        parts = []
        for label, res in (("outcome", self.outcome_model), ("error", self.error_model)):
            t = res.table().reset_index(names="term")
            t.insert(0, "model", label)
            parts.append(t)
        return pd.concat(parts, ignore_index=True)

    def render(self) -> str:
        """Two-column text table laid out like a regression results table."""
        terms = ["pct_black", "pct_hispanic", "log_mean_income", "y", "const"]
        out = [f"# {self.convention}", f"{'':<24}{'% Homes Sold':>16}{'Prediction Error':>20}",
               f"{'':<24}{'(1)':>16}{'(2)':>20}"]
        for term in terms:
            cells, ses = [], []
            for res in (self.outcome_model, self.error_model):
                if term in res.names:
                    i = res.names.index(term)
                    cells.append(f"{res.coef[i]:.4f}{stars(res.pvalues[i])}")
                    ses.append(f"({res.se[i]:.4f})")
                else:
                    cells.append("")
                    ses.append("")
            out.append(f"{LABELS[term]:<24}{cells[0]:>16}{cells[1]:>20}")
            out.append(f"{'':<24}{ses[0]:>16}{ses[1]:>20}")
        out.append(f"{'Observations':<24}{self.outcome_model.n:>16}{self.error_model.n:>20}")
        for key in ("outcome", "error"):
            m = self.residual_moran.get(key)
            if m:
                out.append(f"residual Moran's I ({key}): {m['I']:.4f} (p={m['p']:.3f})")
        out.append("Note: *p<0.1; **p<0.05; ***p<0.01. Covariates centered and scaled by 2 sd.")
        return "\n".join(out) + "\n"


def audit_design(covariates: pd.DataFrame) -> pd.DataFrame:
    """Two-sd scaled % Black, % Hispanic and log(mean income)."""
    return pd.DataFrame(
        {
            "pct_black": scale_two_sd(covariates["pct_black"]),
            "pct_hispanic": scale_two_sd(covariates["pct_hispanic"]),
            "log_mean_income": scale_two_sd(np.log(covariates["mean_income"].to_numpy(dtype=float))),
        }
    )


def fit_audit(
    outcome,
    error,
    covariates: pd.DataFrame,
    graph: NeighborGraph | None = None,
    k: int = 8,
    n_perm: int = 999,
    seed: int = 0,
) -> AuditReport:
    """OLS audit of the outcome and of the prediction error.

    Model 1 regresses y on the scaled census covariates; model 2 regresses
    ``error`` (y - yhat) on the same covariates plus scaled y. When a
    neighbor graph over the same cells is given, global Moran's I of each
    model's residuals is reported with a permutation p-value.
    """
    y = np.asarray(outcome, dtype=float)
    err = np.asarray(error, dtype=float)
    design = audit_design(covariates.reset_index(drop=True))
    m1 = fit_ols(y, design)
    m2 = fit_ols(err, design.assign(y=scale_two_sd(y)))
    moran = {}
    if graph is not None:
        w = graph.weights_dense(k)
        for key, res in (("outcome", m1), ("error", m2)):
            i_val, p_val = moran_permutation_test(res.residuals, w, n_perm=n_perm, seed=seed)
            moran[key] = {"I": i_val, "p": p_val}
    return AuditReport(m1, m2, moran)
