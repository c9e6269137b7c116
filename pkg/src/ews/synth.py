"""Synthetic parcels and transactions from a spatial contagion process.

Each year every parcel sells with probability

    logistic(logit(base_rate) + offset + contagion_strength * (r - base_rate) + hotspot boost)

where ``r`` is the share of parcels within ``contagion_radius`` that sold the
previous year. A smooth random surface adds a persistent per-parcel offset
(``propensity_sd``) so some areas turn over faster every year, and a parcel
sold last year is less likely to sell again (``resale_penalty``), which damps
runaway local cascades. Centering on ``base_rate`` keeps the null rate at
``base_rate`` whatever the contagion strength.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree
from scipy.special import expit, logit

from .audit import CensusPolygon
from .ingest import ParcelLocation, TransactionRecord
from .grid import METERS_PER_DEGREE


@dataclass(frozen=True)
class Hotspot:
    x: float  # meters east of the extent's west edge
    y: float  # meters north of the extent's south edge
    year: int


@dataclass(frozen=True)
class SynthConfig:
    n_parcels: int = 8000
    extent_km: tuple = (4.0, 4.0)
    years: tuple = (2000, 2019)
    base_rate: float = 0.08
    contagion_strength: float = 4.0
    contagion_radius: float = 400.0
    resale_penalty: float = 1.0
    hotspots: tuple = ()
    n_random_hotspots: int = 6
    hotspot_boost: float = 1.5
    hotspot_radius: float = 450.0
    hotspot_duration: int = 3
    propensity_sd: float = 0.5
    propensity_scale: float = 800.0
    clustering: float = 0.0
    n_clusters: int = 5
    cluster_sd: float = 600.0
    price_base: float = 120_000.0
    price_gradient: float = 0.08  # log-price change per km eastward
    price_noise_sd: float = 0.35
    center_lat: float = 42.8864
    center_lon: float = -78.8784
    census_blocks: tuple = (5, 5)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.base_rate < 1:
            raise ValueError("base_rate must lie in (0, 1)")
        if self.extent_km[0] <= 0 or self.extent_km[1] <= 0:
            raise ValueError("extent must be positive")
        if self.contagion_strength < 0:
            raise ValueError("contagion_strength must be non-negative")
        if self.years[0] > self.years[1]:
            raise ValueError("years must be increasing")
        object.__setattr__(self, "hotspots", tuple(Hotspot(*h) if not isinstance(h, Hotspot) else h for h in self.hotspots))


def to_lonlat(cfg: SynthConfig, x, y):
    """Extent meters (origin at the southwest corner) to (lat, lon)."""
    w, h = cfg.extent_km[0] * 1000.0, cfg.extent_km[1] * 1000.0
    lat = cfg.center_lat + (np.asarray(y) - h / 2) / METERS_PER_DEGREE
    lon = cfg.center_lon + (np.asarray(x) - w / 2) / (METERS_PER_DEGREE * math.cos(math.radians(cfg.center_lat)))
    return lat, lon


def place_parcels(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    w, h = cfg.extent_km[0] * 1000.0, cfg.extent_km[1] * 1000.0
    n_cl = int(round(cfg.clustering * cfg.n_parcels))
    pts = rng.uniform((0, 0), (w, h), size=(cfg.n_parcels - n_cl, 2))
    if n_cl:
        centers = rng.uniform((0, 0), (w, h), size=(cfg.n_clusters, 2))
        which = rng.integers(0, cfg.n_clusters, n_cl)
        extra = centers[which] + rng.normal(0, cfg.cluster_sd, (n_cl, 2))
        pts = np.vstack([pts, np.clip(extra, 0, (w, h))])
    return pts


def all_hotspots(cfg: SynthConfig, rng: np.random.Generator) -> list[Hotspot]:
    w, h = cfg.extent_km[0] * 1000.0, cfg.extent_km[1] * 1000.0
    spots = list(cfg.hotspots)
    start, end = cfg.years
    for _ in range(cfg.n_random_hotspots):
        spots.append(Hotspot(float(rng.uniform(0, w)), float(rng.uniform(0, h)), int(rng.integers(start + 2, end + 1))))
    return spots


def propensity_field(cfg: SynthConfig, pts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Persistent logit offset per parcel: a smooth random surface with sd ``propensity_sd``."""
    if cfg.propensity_sd == 0 or len(pts) < 2:
        return np.zeros(len(pts))
    w, h = cfg.extent_km[0] * 1000.0, cfg.extent_km[1] * 1000.0
    n_bumps = max(4, int(round(w * h / cfg.propensity_scale**2)))
    centers = rng.uniform((0, 0), (w, h), size=(n_bumps, 2))
    signs = rng.normal(size=n_bumps)
    d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    surface = np.exp(-d2 / (2 * cfg.propensity_scale**2)) @ signs
    sd = surface.std()
    if not sd > 0:
        return np.zeros(len(pts))
    return cfg.propensity_sd * (surface - surface.mean()) / sd


def neighbor_matrix(pts: np.ndarray, radius: float) -> sparse.csr_matrix:
    """Row-normalized indicator of other parcels within ``radius``."""
    tree = cKDTree(pts)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    n = len(pts)
    if len(pairs) == 0:
        return sparse.csr_matrix((n, n))
    i = np.concatenate([pairs[:, 0], pairs[:, 1]])
    j = np.concatenate([pairs[:, 1], pairs[:, 0]])
    a = sparse.csr_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    deg = np.asarray(a.sum(axis=1)).ravel()
    return sparse.diags(1.0 / np.maximum(deg, 1)) @ a


def simulate(cfg: SynthConfig):
    """Run the process; returns parcel coordinates (meters) and a (years, parcels) sale matrix."""
    rng = np.random.default_rng(cfg.seed)
    pts = place_parcels(cfg, rng)
    spots = all_hotspots(cfg, rng)
    offset = propensity_field(cfg, pts, rng)
    nbr = neighbor_matrix(pts, cfg.contagion_radius)
    has_nbr = np.asarray(nbr.sum(axis=1)).ravel() > 0
    start, end = cfg.years
    years = np.arange(start, end + 1)
    base = logit(cfg.base_rate)
    sold = np.zeros((len(years), len(pts)), dtype=bool)
    local = np.full(len(pts), cfg.base_rate)
    for t, year in enumerate(years):
        eta = base + offset + cfg.contagion_strength * (local - cfg.base_rate)
        for s in spots:
            if s.year <= year < s.year + cfg.hotspot_duration:
                d2 = (pts[:, 0] - s.x) ** 2 + (pts[:, 1] - s.y) ** 2
                eta = eta + cfg.hotspot_boost * np.exp(-d2 / (2 * cfg.hotspot_radius**2))
        if t > 0:
            eta = eta - cfg.resale_penalty * sold[t - 1]
        sold[t] = rng.random(len(pts)) < expit(eta)
        local = np.where(has_nbr, nbr @ sold[t].astype(float), cfg.base_rate)
    return pts, years, sold, rng


def generate(cfg: SynthConfig) -> tuple[list[ParcelLocation], list[TransactionRecord]]:
    """Parcel locations and their transaction history in ingest formats.

    Records carry no coordinates; join them to the locations with ``geojoin``.
    """
    pts, years, sold, rng = simulate(cfg)
    lat, lon = to_lonlat(cfg, pts[:, 0], pts[:, 1])
    ids = [f"SBL{i:06d}" for i in range(len(pts))]
    locations = [ParcelLocation(pid, float(a), float(b)) for pid, a, b in zip(ids, lat, lon)]
    log_base = math.log(cfg.price_base) + cfg.price_gradient * pts[:, 0] / 1000.0
    records = []
    for t, year in enumerate(years):
        idx = np.flatnonzero(sold[t])
        n_days = (date(int(year), 12, 31) - date(int(year), 1, 1)).days + 1
        days = rng.integers(0, n_days, len(idx))
        noise = rng.normal(0, cfg.price_noise_sd, len(idx))
        prices = np.round(np.exp(log_base[idx] + noise)).astype(np.int64)
        for i, dd, price in zip(idx, days, prices):
            records.append(
                TransactionRecord(
                    parcel_id=ids[i],
                    date=date(int(year), 1, 1) + timedelta(days=int(dd)),
                    price=int(price),
                    deed_type="DEED",
                    residential=True,
                )
            )
    records.sort(key=lambda r: (r.date, r.parcel_id))
    return locations, records


def generate_census(cfg: SynthConfig) -> list[CensusPolygon]:
    """Rectangular block groups tiling the synthetic extent.

    Attributes vary smoothly across space: % Black rises to the east,
    % Hispanic peaks in the middle rows, income falls as % Black rises.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(7,)))
    nx, ny = cfg.census_blocks
    w, h = cfg.extent_km[0] * 1000.0, cfg.extent_km[1] * 1000.0
    pad = 50.0
    xs = np.linspace(-pad, w + pad, nx + 1)
    ys = np.linspace(-pad, h + pad, ny + 1)
    out = []
    for j in range(ny):
        for i in range(nx):
            cx = (xs[i] + xs[i + 1]) / 2 / w
            cy = (ys[j] + ys[j + 1]) / 2 / h
            black = float(np.clip(expit(4 * (cx - 0.5) + rng.normal(0, 0.5)), 0, 1))
            hisp = float(np.clip(0.25 * math.exp(-((cy - 0.5) ** 2) / 0.05) + rng.uniform(0, 0.05), 0, 1))
            income = float(np.exp(11.0 - 0.8 * black + rng.normal(0, 0.15)))
            hh = int(rng.integers(200, 800))
            rx = [xs[i], xs[i + 1], xs[i + 1], xs[i], xs[i]]
            ry = [ys[j], ys[j], ys[j + 1], ys[j + 1], ys[j]]
            lat, lon = to_lonlat(cfg, rx, ry)
            ring = [[float(a), float(b)] for a, b in zip(lon, lat)]
            out.append(CensusPolygon(ring, black, hisp, income, hh, geoid=f"BG{j:02d}{i:02d}"))
    return out
