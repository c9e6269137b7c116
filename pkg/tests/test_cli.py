import json

import pandas as pd
import pytest

from ews.artifacts import atomic_open, sha256_file
from ews.cli import EXIT_DATA, EXIT_USAGE, main
from ews.config import ConfigError, RunConfig
from pipeline import chdir, run_pipeline, write_config


@pytest.fixture(scope="module")
def pipeline_out(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("cli"))


def test_all_writes_every_stage(pipeline_out):
    for rel in ("ingest/report.json", "grid/a2=0.25_t=1/panel.csv", "grid/a2=1_t=2/cells.geojson",
                "features/features.csv", "model/forest.json", "evaluate/aggregate.csv",
                "explain/shap.csv", "audit/audit.txt", "config.yaml"):
        assert (pipeline_out / rel).is_file(), rel
    manifest = json.loads((pipeline_out / "manifest.json").read_text())
    assert manifest["command"] == "all"
    assert manifest["outputs"]["audit/audit.txt"] == sha256_file(pipeline_out / "audit/audit.txt")
    assert set(manifest["inputs"]) == {"transactions", "locations", "census"}
    agg = pd.read_csv(pipeline_out / "evaluate/aggregate.csv")
    assert set(agg["metric"]) == {"rmse", "kendall_tau_b", "ndcg"}
    assert set(agg["a2"]) == {0.25, 1.0}


def test_stages_rerun_from_artifacts(pipeline_out):
    with chdir(pipeline_out.parent):
        assert main(["explain", "-c", "run.yaml"]) == 0
        assert main(["audit", "-c", "run.yaml", "--set", "audit.k=4"]) == 0


def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["all", "--set", "nonsense"]) == EXIT_USAGE
    assert main(["all", "--set", "grid.bogus=1"]) == EXIT_USAGE
    assert main(["all", "-c", str(tmp_path / "missing.yaml")]) == EXIT_USAGE
    bad = tmp_path / "bad.yaml"
    bad.write_text("grid:\n  a2_list: [-1]\n")
    assert main(["grid", "-c", str(bad)]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_missing_inputs_are_data_errors(tmp_path, capsys):
    write_config(tmp_path)
    with chdir(tmp_path):
        assert main(["ingest", "-c", "run.yaml"]) == EXIT_DATA
        assert main(["features", "-c", "run.yaml"]) == EXIT_DATA
    assert "not found" in capsys.readouterr().err


def test_help_and_version(capsys):
    assert main(["--version"]) == 0
    assert main(["all", "--help"]) == 0
    assert "--set" in capsys.readouterr().out


def test_atomic_open_leaves_no_partial(tmp_path):
    target = tmp_path / "a.txt"
    target.write_text("old")
    with pytest.raises(RuntimeError):
        with atomic_open(target) as fh:
            fh.write("new")
            raise RuntimeError("boom")
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]
    with atomic_open(tmp_path / "sub" / "b.txt") as fh:
        fh.write("ok")
    assert (tmp_path / "sub" / "b.txt").read_text() == "ok"


def test_config_overrides_and_round_trip(tmp_path):
    cfg = RunConfig().with_overrides(["forest.n_estimators=50", "grid.a2_list=[0.25, 0.5]", "seed=3"])
    assert cfg.forest.n_estimators == 50 and cfg.grid.a2_list == [0.25, 0.5] and cfg.seed == 3
    path = tmp_path / "c.yaml"
    path.write_text(cfg.dump())
    again = RunConfig.load(path)
    assert again == cfg and again.sha256() == cfg.sha256()
    assert RunConfig().sha256() != cfg.sha256()
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"unknown": {}})
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(["features.delta=0"])
