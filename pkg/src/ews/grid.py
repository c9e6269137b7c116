"""Rectangular analysis grid and the (cell, window) outcome panel."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np
import pandas as pd

from .ingest import ParcelLocation, TransactionRecord

EARTH_RADIUS_M = 6_371_008.8
METERS_PER_DEGREE = EARTH_RADIUS_M * math.pi / 180.0
MIN_HOMES = 10

PANEL_COLUMNS = [
    "row", "col", "window_start", "window_len", "n_homes",
    "n_homes_sold", "n_transactions", "median_price", "y",
]


class OutsideGridError(ValueError):
    pass


class CellIndex(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True)
class GridSpec:
    """An ``n_rows`` x ``n_cols`` grid of square cells in a local projection.

    Coordinates are meters east (x) and north (y) of the reference point,
    using an equirectangular projection scaled by cos(ref_lat).
    """

    origin_x: float
    origin_y: float
    cell_side: float
    n_rows: int
    n_cols: int
    ref_lat: float
    ref_lon: float

    def __post_init__(self):
        if not self.cell_side > 0:
            raise ValueError("cell_side must be positive")
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError("grid needs at least one row and one column")

    @property
    def cell_area_km2(self) -> float:
        return (self.cell_side / 1000.0) ** 2

    def project(self, lat, lon):
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        x = (lon - self.ref_lon) * METERS_PER_DEGREE * math.cos(math.radians(self.ref_lat))
        y = (lat - self.ref_lat) * METERS_PER_DEGREE
        return x, y

    def unproject(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        lat = self.ref_lat + y / METERS_PER_DEGREE
        lon = self.ref_lon + x / (METERS_PER_DEGREE * math.cos(math.radians(self.ref_lat)))
        return lat, lon

    def cells_of(self, lat, lon) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized cell lookup; raises if any point falls outside the grid."""
        x, y = self.project(lat, lon)
        return self.cells_of_xy(x, y)

    def cells_of_xy(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Cell lookup for projected coordinates; cells are half-open on the high edges."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        col = np.floor((x - self.origin_x) / self.cell_side).astype(np.int64)
        row = np.floor((y - self.origin_y) / self.cell_side).astype(np.int64)
        bad = (row < 0) | (row >= self.n_rows) | (col < 0) | (col >= self.n_cols)
        if np.any(bad):
            raise OutsideGridError(f"{int(bad.sum())} point(s) fall outside the grid extent")
        return row, col

    def center(self, row, col):
        """Projected centroid of cell(s) ``(row, col)``."""
        row = np.asarray(row, dtype=float)
        col = np.asarray(col, dtype=float)
        return (
            self.origin_x + (col + 0.5) * self.cell_side,
            self.origin_y + (row + 0.5) * self.cell_side,
        )

    def polygon_lonlat(self, row: int, col: int) -> list[list[float]]:
        x0 = self.origin_x + col * self.cell_side
        y0 = self.origin_y + row * self.cell_side
        xs = np.array([x0, x0 + self.cell_side, x0 + self.cell_side, x0, x0])
        ys = np.array([y0, y0, y0 + self.cell_side, y0 + self.cell_side, y0])
        lat, lon = self.unproject(xs, ys)
        return [[float(a), float(b)] for a, b in zip(lon, lat)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        return cls(**data)


def cell_side_m(a2_km2: float) -> float:
    """Side length in meters of a square cell with area ``a2_km2`` km^2."""
    if not a2_km2 > 0:
        raise ValueError("cell area must be positive")
    return math.sqrt(a2_km2) * 1000.0


def build_grid(parcels: Sequence[ParcelLocation], a2: float) -> GridSpec:
    """Smallest grid of ``a2`` km^2 cells anchored at the parcels' southwest corner.

    The projection is centered on the parcel centroid. Cells are half-open,
    so a parcel lying exactly on the north or east edge of the bounding box
    gets its own row or column.
    """
    if not parcels:
        raise ValueError("cannot build a grid from an empty parcel list")
    side = cell_side_m(a2)
    lat = np.array([p.latitude for p in parcels], dtype=float)
    lon = np.array([p.longitude for p in parcels], dtype=float)
    ref_lat, ref_lon = float(lat.mean()), float(lon.mean())
    probe = GridSpec(0.0, 0.0, side, 1, 1, ref_lat, ref_lon)
    x, y = probe.project(lat, lon)
    x0, y0 = float(x.min()), float(y.min())
    n_cols = int(math.floor((x.max() - x0) / side)) + 1
    n_rows = int(math.floor((y.max() - y0) / side)) + 1
    return GridSpec(x0, y0, side, n_rows, n_cols, ref_lat, ref_lon)


def assign_cell(spec: GridSpec, lat: float, lon: float) -> CellIndex:
    row, col = spec.cells_of([lat], [lon])
    return CellIndex(int(row[0]), int(col[0]))


def window_starts(first_start: int, last_year: int, window_len: int, step: int = 1) -> list[int]:
    """Calendar-year window starts whose window [start, start + len) ends by ``last_year``."""
    if window_len <= 0:
        raise ValueError("window_len must be positive")
    if step <= 0:
        raise ValueError("step must be positive")
    return list(range(first_start, last_year - window_len + 2, step))


def home_cells(spec: GridSpec, homes: Sequence[ParcelLocation]) -> pd.DataFrame:
    """One row per home: parcel_id, row, col."""
    lat = np.array([h.latitude for h in homes], dtype=float)
    lon = np.array([h.longitude for h in homes], dtype=float)
    row, col = spec.cells_of(lat, lon) if homes else (np.empty(0, int), np.empty(0, int))
    return pd.DataFrame({"parcel_id": [h.parcel_id for h in homes], "row": row, "col": col})


def cell_home_counts(
    spec: GridSpec, homes: Sequence[ParcelLocation], min_homes: int = MIN_HOMES
) -> pd.DataFrame:
    """Retained cells (``n_homes >= min_homes``) sorted by (row, col)."""
    hc = home_cells(spec, homes)
    counts = hc.groupby(["row", "col"]).size().rename("n_homes").reset_index()
    counts = counts[counts["n_homes"] >= min_homes]
    return counts.sort_values(["row", "col"]).reset_index(drop=True)


def build_panel(
    spec: GridSpec,
    records: Sequence[TransactionRecord],
    window_len: int,
    first_start: int,
    last_year: int,
    homes: Sequence[ParcelLocation] | None = None,
    step: int = 1,
    min_homes: int = MIN_HOMES,
) -> pd.DataFrame:
    """Outcome panel: one row per (retained cell, window).

    Parameters
    ----------
    spec : GridSpec
    records : sequence of TransactionRecord
        Sales counted in the numerator. Records on parcels outside the home
        inventory are ignored.
    window_len : int
        Window length in years.
    first_start, last_year : int
        Windows start at ``first_start`` and step by ``step`` years; the last
        window ends with calendar year ``last_year``.
    homes : sequence of ParcelLocation, optional
        Home inventory defining each cell's fixed denominator. Defaults to the
        distinct located parcels in ``records``.
    min_homes : int
        Cells with fewer homes are excluded from every window.

    Returns
    -------
    DataFrame with columns ``PANEL_COLUMNS`` sorted by (window_start, row, col).
    """
    starts = window_starts(first_start, last_year, window_len, step)
    if homes is None:
        seen = {}
        for r in records:
            if r.located:
                seen.setdefault(r.parcel_id, ParcelLocation(r.parcel_id, r.latitude, r.longitude))
        homes = [seen[k] for k in sorted(seen)]
    hc = home_cells(spec, homes)
    cells = cell_home_counts(spec, homes, min_homes)
    if cells.empty or not starts:
        return pd.DataFrame({c: pd.Series(dtype=float) for c in PANEL_COLUMNS})

    parcel_cell = hc.set_index("parcel_id")[["row", "col"]]
    tx = pd.DataFrame(
        {
            "parcel_id": [r.parcel_id for r in records],
            "year": [r.date.year for r in records],
            "price": [float(r.price) for r in records],
        }
    )
    tx = tx[tx["parcel_id"].isin(parcel_cell.index)]
    tx = tx.join(parcel_cell, on="parcel_id")

    blocks = []
    for start in starts:
        in_win = tx[(tx["year"] >= start) & (tx["year"] < start + window_len)]
        grouped = in_win.groupby(["row", "col"])
        stats = pd.DataFrame(
            {
                "n_homes_sold": grouped["parcel_id"].nunique(),
                "n_transactions": grouped.size(),
                "median_price": grouped["price"].median(),
            }
        )
        block = cells.join(stats, on=["row", "col"])
        block["n_homes_sold"] = block["n_homes_sold"].fillna(0).astype(np.int64)
        block["n_transactions"] = block["n_transactions"].fillna(0).astype(np.int64)
        block["window_start"] = start
        blocks.append(block)
    panel = pd.concat(blocks, ignore_index=True)
    panel["window_len"] = window_len
    panel["y"] = panel["n_homes_sold"] / panel["n_homes"]
    panel = panel[PANEL_COLUMNS].astype(
        {"row": np.int64, "col": np.int64, "window_start": np.int64, "window_len": np.int64,
         "n_homes": np.int64}
    )
    return panel.sort_values(["window_start", "row", "col"]).reset_index(drop=True)


def write_panel(panel: pd.DataFrame, out: IO[str]):
    panel[PANEL_COLUMNS].to_csv(out, index=False, lineterminator="\n", float_format="%.17g")


def read_panel(source) -> pd.DataFrame:
    return pd.read_csv(source, float_precision="round_trip")


def panel_geojson(spec: GridSpec, panel: pd.DataFrame, window_start: int | None = None) -> dict:
    """Cell polygons (lon/lat) carrying y, for map rendering."""
    if window_start is not None:
        panel = panel[panel["window_start"] == window_start]
    features = []
    for rec in panel.itertuples(index=False):
        props = {
            "row": int(rec.row),
            "col": int(rec.col),
            "window_start": int(rec.window_start),
            "window_len": int(rec.window_len),
            "n_homes": int(rec.n_homes),
            "n_homes_sold": int(rec.n_homes_sold),
            "y": float(rec.y),
        }
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [spec.polygon_lonlat(rec.row, rec.col)]},
                "properties": props,
            }
        )
    return {"type": "FeatureCollection", "features": features}


def dump_geojson(obj: dict, out: IO[str]):
    json.dump(obj, out, sort_keys=True, separators=(",", ":"))
    out.write("\n")


def iter_windows(panel: pd.DataFrame) -> Iterable[tuple[int, pd.DataFrame]]:
    for start, block in panel.groupby("window_start", sort=True):
        yield int(start), block
