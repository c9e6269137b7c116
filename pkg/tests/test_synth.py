import io

import numpy as np
from scipy import stats

from ews.audit import read_census_geojson, write_census_geojson
from ews.ingest import geojoin
from ews.spatial import NeighborGraph, global_moran
from ews.synth import Hotspot, SynthConfig, generate, generate_census, simulate

NULL = dict(contagion_strength=0.0, n_random_hotspots=0, propensity_sd=0.0, resale_penalty=0.0)


def cell_rates(cfg, pts, sold, side=250.0):
    """Yearly share of parcels sold per square cell; returns (years, cells) and the k=8 weights."""
    w, h = cfg.extent_km[0] * 1000, cfg.extent_km[1] * 1000
    nc, nr = int(w // side), int(h // side)
    col = np.minimum((pts[:, 0] // side).astype(int), nc - 1)
    row = np.minimum((pts[:, 1] // side).astype(int), nr - 1)
    cell = row * nc + col
    homes = np.bincount(cell, minlength=nr * nc)
    keep = np.flatnonzero(homes >= 10)
    rates = np.stack([np.bincount(cell, weights=s, minlength=nr * nc)[keep] / homes[keep] for s in sold])
    r, c = keep // nc, keep % nc
    graph = NeighborGraph.from_cells(r, c, (c + 0.5) * side, (r + 0.5) * side)
    return rates, graph.weights_dense(8)


def test_deterministic():
    cfg = SynthConfig(n_parcels=500, extent_km=(1.0, 1.0), seed=3)
    assert generate(cfg) == generate(cfg)
    other = generate(SynthConfig(n_parcels=500, extent_km=(1.0, 1.0), seed=4))
    assert other[1] != generate(cfg)[1]


def test_output_formats():
    cfg = SynthConfig(n_parcels=300, extent_km=(1.0, 1.0), years=(2010, 2012), seed=1)
    locations, records = generate(cfg)
    assert len(locations) == 300
    assert all(2010 <= r.date.year <= 2012 and r.price > 0 for r in records)
    joined, unmatched = geojoin(records, locations)
    assert unmatched == [] and len(joined) == len(records)


def test_null_rate_matches_base():
    cfg = SynthConfig(n_parcels=3000, seed=2, **NULL)
    _, _, sold, _ = simulate(cfg)
    n = sold.size
    lo, hi = stats.binom.interval(0.999, n, cfg.base_rate)
    assert lo <= sold.sum() <= hi


def test_hotspot_raises_clustering():
    cfg = SynthConfig(n_parcels=6000, seed=5, n_random_hotspots=0, propensity_sd=0.0,
                      contagion_strength=4.0, hotspots=(Hotspot(2000.0, 2000.0, 2008),))
    pts, years, sold, _ = simulate(cfg)
    rates, w = cell_rates(cfg, pts, sold)
    moran = np.array([global_moran(r, w) for r in rates])
    before = moran[years < 2008].mean()
    during = moran[(years >= 2008) & (years < 2008 + cfg.hotspot_duration)].mean()
    assert during > before + 0.1


def test_clustering_increases_with_contagion():
    means = []
    for strength in (0.0, 2.0, 4.0):
        vals = []
        for seed in range(4):
            cfg = SynthConfig(n_parcels=4000, seed=seed, n_random_hotspots=3, propensity_sd=0.0,
                              contagion_strength=strength)
            pts, _, sold, _ = simulate(cfg)
            rates, w = cell_rates(cfg, pts, sold)
            vals.extend(global_moran(r, w) for r in rates[1:])
        means.append(np.mean(vals))
    assert means[0] < means[1] < means[2]


def test_census_round_trip():
    cfg = SynthConfig(census_blocks=(3, 2), seed=9)
    polys = generate_census(cfg)
    assert len(polys) == 6
    buf = io.StringIO()
    write_census_geojson(polys, buf)
    buf.seek(0)
    back = read_census_geojson(buf)
    assert [p.geoid for p in back] == [p.geoid for p in polys]
    assert back == polys
    assert all(0 <= p.pct_black <= 1 and p.households > 0 for p in back)
