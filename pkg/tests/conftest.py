import sys

import pytest

from ews.ingest import prepare
from ews.synth import SynthConfig, generate


@pytest.fixture(scope="session")
def small_city():
    """About 2000 parcels on a 2 km square; prepared sales and home inventory."""
    cfg = SynthConfig(n_parcels=2000, extent_km=(2.0, 2.0), n_random_hotspots=2, seed=7)
    locations, records = generate(cfg)
    return prepare(records, locations)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
