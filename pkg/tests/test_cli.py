"""End-to-end command-line pipeline tests: exit codes, file contracts, and
determinism. Commands run in-process through ``main`` for speed."""

import csv
import json
import os

import numpy as np
import pytest

from heterograph import load_graph, load_params, mixed_set, normalize_features
from heterograph.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_MISSING,
    EXIT_OK,
    config_hash,
    load_config,
    main,
)
from heterograph.errors import ConfigError
from heterograph.graph import LAND_USE_CATEGORIES
from heterograph.models import GCNRegressor, HGTRegressor, MLPRegressor

CONFIG_TEMPLATE = """\
out_dir = "{out_dir}"
seed = 11

[synth]
tube_count = 4
bus_count = 40
bike_count = 12
extent = [0.08, 0.04]
cluster_grid = [2, 1]
mixtures = [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1]]
poi_rate = 2.0

[train]
epochs = 25

[explain]
ig_steps = 10
"""


def write_config(directory, **replacements):
    out_dir = replacements.pop("out_dir", os.path.join(str(directory), "run"))
    text = CONFIG_TEMPLATE.format(out_dir=out_dir)
    for old, new in replacements.items():
        text = text.replace(old, new)
    path = os.path.join(str(directory), "config.toml")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path, out_dir


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Config plus a completed synth + train, shared by downstream tests."""
    root = tmp_path_factory.mktemp("cli_pipeline")
    config, out_dir = write_config(root)
    assert main(["synth", "--config", config]) == EXIT_OK
    assert main(["train", "--config", config]) == EXIT_OK
    return {"config": config, "out_dir": out_dir}


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


# ------------------------------------------------------------------- synth

def test_synth_writes_city_files_and_run_log(tmp_path):
    config, out_dir = write_config(tmp_path)
    assert main(["synth", "--config", config]) == EXIT_OK
    for name in ("nodes.csv", "edges.csv", "pois.csv", "manifest.json",
                 "run.json"):
        assert os.path.exists(os.path.join(out_dir, "synth", name)), name
    with open(os.path.join(out_dir, "synth", "run.json")) as fh:
        log = json.load(fh)
    assert log["command"] == "synth"
    assert log["seed"] == 11
    assert len(log["config_hash"]) == 64
    assert log["wall_time_s"] >= 0


def test_synth_rerun_is_byte_identical(tmp_path):
    config, out_dir = write_config(tmp_path)
    assert main(["synth", "--config", config]) == EXIT_OK
    synth_dir = os.path.join(out_dir, "synth")
    city_files = ("nodes.csv", "edges.csv", "pois.csv", "manifest.json")
    before = {}
    for name in city_files:
        with open(os.path.join(synth_dir, name), "rb") as fh:
            before[name] = fh.read()
    assert main(["synth", "--config", config]) == EXIT_OK
    for name in city_files:
        with open(os.path.join(synth_dir, name), "rb") as fh:
            assert fh.read() == before[name], name


def test_seed_flag_overrides_config(tmp_path):
    config, out_dir = write_config(tmp_path)
    assert main(["synth", "--config", config, "--seed", "5"]) == EXIT_OK
    with open(os.path.join(out_dir, "synth", "manifest.json")) as fh:
        assert json.load(fh)["seed"] == 5
    with open(os.path.join(out_dir, "synth", "run.json")) as fh:
        assert json.load(fh)["seed"] == 5


# -------------------------------------------------------------- exit codes

def test_malformed_config_exits_1_with_line_number(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('out_dir = "x\nbroken')
    assert main(["synth", "--config", str(bad)]) == EXIT_CONFIG
    assert "line 1" in capsys.readouterr().err


def test_unknown_config_key_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("epoch = 5\n")
    assert main(["synth", "--config", str(bad)]) == EXIT_CONFIG
    assert "unknown config key" in capsys.readouterr().err


def test_invalid_cityspec_value_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[synth]\ntube_count = 0\n")
    assert main(["synth", "--config", str(bad)]) == EXIT_CONFIG
    assert "tube" in capsys.readouterr().err


def test_usage_error_exits_1():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--not-a-flag"])
    assert exc.value.code == EXIT_CONFIG


def test_missing_city_artifacts_exit_3(tmp_path, capsys):
    config, _ = write_config(tmp_path)
    assert main(["eval", "--config", config]) == EXIT_MISSING
    assert "nodes" in capsys.readouterr().err


def test_missing_snapshot_exits_3(tmp_path, capsys):
    config, _ = write_config(tmp_path)
    assert main(["synth", "--config", config]) == EXIT_OK
    assert main(["attribute", "--config", config]) == EXIT_MISSING
    assert "params" in capsys.readouterr().err


def test_unwritable_output_exits_2(tmp_path, monkeypatch, capsys):
    config, _ = write_config(tmp_path)

    def deny(path, exist_ok=False):
        raise PermissionError(13, "denied", path)

    monkeypatch.setattr("heterograph.cli.os.makedirs", deny)
    assert main(["synth", "--config", config]) == EXIT_IO
    assert "I/O error" in capsys.readouterr().err


# ---------------------------------------------------------------- commands

def test_train_snapshot_round_trips(pipeline):
    params_path = os.path.join(pipeline["out_dir"], "train", "params.json")
    params = load_params(params_path)
    assert params.meta["model"] == "hgt"
    history = read_csv(os.path.join(pipeline["out_dir"], "train",
                                    "history.csv"))
    assert history[0] == ["epoch", "train_loss", "val_loss"]
    assert len(history) == 25 + 2  # header + epochs 0..25 inclusive


def test_eval_writes_six_indicator_rows(pipeline):
    assert main(["eval", "--config", pipeline["config"]]) == EXIT_OK
    rows = read_csv(os.path.join(pipeline["out_dir"], "eval", "metrics.csv"))
    assert rows[0][0] == "indicator"
    assert [r[0] for r in rows[1:]] == list(LAND_USE_CATEGORIES)
    with open(os.path.join(pipeline["out_dir"], "eval", "metrics.json")) as fh:
        doc = json.load(fh)
    per_indicator = doc["models"]["hgt"]["per_indicator"]
    assert set(per_indicator) == set(LAND_USE_CATEGORIES)
    assert all(np.isfinite(row["r2"]) for row in per_indicator.values())
    assert os.path.exists(os.path.join(pipeline["out_dir"], "eval",
                                       "residuals.csv"))


def test_ablate_scenario_flag_limits_rows(pipeline):
    assert main(["ablate", "--config", pipeline["config"],
                 "--scenario", "bus-only"]) == EXIT_OK
    rows = read_csv(os.path.join(pipeline["out_dir"], "ablate",
                                 "ablation.csv"))
    assert rows[0][0] == "scenario"
    assert rows[0][-1] == "mean_r2"
    assert len(rows) == 2
    assert rows[1][0] == "bus-only"


def test_attribute_emits_six_by_sixtyfour_heatmap(pipeline):
    with pytest.warns(UserWarning):   # tiny city lacks some dominant groups
        assert main(["attribute", "--config", pipeline["config"]]) == EXIT_OK
    rows = read_csv(os.path.join(pipeline["out_dir"], "attribute",
                                 "heatmap.csv"))
    assert rows[0][0] == "indicator"
    assert rows[0][1] == "06:00" and rows[0][-1] == "21:45"
    assert len(rows[0]) == 1 + 64
    assert [r[0] for r in rows[1:]] == list(LAND_USE_CATEGORIES)
    assert all(len(r) == 65 for r in rows[1:])


def _fitted_predictions(pipeline):
    graph = normalize_features(load_graph(
        os.path.join(pipeline["out_dir"], "synth", "nodes.csv"),
        os.path.join(pipeline["out_dir"], "synth", "edges.csv")))
    params = load_params(os.path.join(pipeline["out_dir"], "train",
                                      "params.json"))
    est = HGTRegressor()
    est.params_ = params
    return graph, est.predict(graph)


def test_counterfactual_aggregate_table(pipeline):
    assert main(["counterfactual", "--config", pipeline["config"]]) == EXIT_OK
    rows = read_csv(os.path.join(pipeline["out_dir"], "counterfactual",
                                 "cf_components.csv"))
    assert rows[0] == ["indicator", "component", "mean", "std"]
    indicators = {r[0] for r in rows[1:]}
    assert indicators <= set(LAND_USE_CATEGORIES)
    for row in rows[1:]:
        assert row[1] in ("feature", "node_type", "edge_type", "structure")


def test_counterfactual_single_node_modes(pipeline):
    graph, pred = _fitted_predictions(pipeline)
    mixed = mixed_set(graph, pred, fraction=0.10)
    outside = next(n for n in graph.nodes if n not in mixed)
    assert main(["counterfactual", "--config", pipeline["config"],
                 "--node-id", outside]) == EXIT_OK
    report_path = os.path.join(pipeline["out_dir"], "counterfactual",
                               f"ce_{outside}.json")
    with open(report_path) as fh:
        report = json.load(fh)
    assert report["input_node"] == outside
    assert report["ce_node"] in mixed
    # a node already in the desired set cannot be explained into it
    inside = mixed.members[0]
    assert main(["counterfactual", "--config", pipeline["config"],
                 "--node-id", inside]) == EXIT_CONFIG


# ------------------------------------------------------------ config logic

def test_load_config_merges_defaults_and_overrides(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('seed = 3\n[train]\nepochs = 7\n')
    cfg = load_config(str(path))
    assert cfg["seed"] == 3
    assert cfg["train"]["epochs"] == 7
    assert cfg["train"]["model"] == "hgt"          # untouched default
    assert load_config(str(path), seed=9)["seed"] == 9


def test_load_config_missing_file_raises():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/config.toml")


def test_config_hash_is_order_insensitive():
    a = {"seed": 1, "train": {"epochs": 2, "model": "hgt"}}
    b = {"train": {"model": "hgt", "epochs": 2}, "seed": 1}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({"seed": 2, "train": a["train"]})


def test_train_model_choices_cover_all_estimators(tmp_path):
    for name, cls in (("mlp", MLPRegressor), ("gcn", GCNRegressor),
                      ("hgt", HGTRegressor)):
        from heterograph.cli import ESTIMATORS
        assert ESTIMATORS[name] is cls
