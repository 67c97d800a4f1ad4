"""Command-line pipeline driver.

One TOML config file describes a whole run; each subcommand reads the
sections it needs, writes its outputs under ``<out_dir>/<command>/``, and
drops a ``run.json`` log with the seed, the hash of the effective config,
and the wall time. Outputs are deterministic for a fixed seed; the log is
the only file whose bytes change between repeated runs.

Exit codes: 0 success, 1 config error, 2 I/O error, 3 missing upstream
artifact (run the producing command first).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

try:
    import tomllib
except ModuleNotFoundError:                      # Python 3.10
    import tomli as tomllib

from .attribution import heatmap_matrix, time_bin_labels, write_heatmap_csv
from .counterfactual import (
    aggregate_cf_scores,
    counterfactual_report,
    mixed_set,
    write_ce_report,
    write_cf_table_csv,
)
from .errors import ConfigError, HeterographError
from .graph import (
    LAND_USE_CATEGORIES,
    label_by_catchment,
    load_graph,
    normalize_features,
    split,
)
from .models import GCNRegressor, HGTRegressor, MLPRegressor, load_params, save_params
from .synth import CitySpec, default_archetypes, generate
from .training import ABLATION_SCENARIOS, ablate, evaluate, export_residuals
from .training import write_metrics_csv, write_metrics_json

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_MISSING = 3

ESTIMATORS = {"hgt": HGTRegressor, "gcn": GCNRegressor, "mlp": MLPRegressor}

DEFAULT_CONFIG = {
    "out_dir": "runs",
    "seed": 42,
    "paths": {
        # empty string means "derive from out_dir"; resolved in _paths
        "nodes": "",
        "edges": "",
        "pois": "",
        "params": "",
    },
    "synth": {},
    "train": {
        "model": "hgt",
        "hidden_dim": 128,
        "num_heads": 2,
        "num_layers": 2,
        "epochs": 200,
        "learning_rate": 0.002,
        "weight_decay": 0.01,
        "split": [0.70, 0.15, 0.15],
    },
    "explain": {
        "ig_steps": 50,
        "mixed_fraction": 0.10,
        "catchment_radius_m": 1000.0,
    },
}

# CitySpec fields settable from the [synth] table; list-valued entries are
# converted to tuples. Archetype templates are not expressible in a flat
# config; `noise_level` rebuilds the default templates at that noise.
SYNTH_SCALAR_KEYS = {
    "tube_count", "bus_count", "bike_count", "placement_jitter",
    "poi_rate", "poi_base", "neighbor_weight", "scatter_m", "knn_k",
}
SYNTH_TUPLE_KEYS = {"center", "extent", "cluster_grid", "mixtures",
                    "cluster_poi_bias"}


class MissingArtifactError(Exception):
    """An upstream pipeline output is absent."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; this toolkit reserves 2 for I/O
    def error(self, message):
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _deep_merge(base, override):
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path=None, seed=None):
    """Effective config: defaults <- TOML file <- command-line overrides."""
    file_cfg = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "rb") as fh:
            file_cfg = tomllib.load(fh)
        _check_known_keys(file_cfg)
    cfg = _deep_merge(DEFAULT_CONFIG, file_cfg)
    if seed is not None:
        cfg["seed"] = seed
    if not isinstance(cfg["seed"], int):
        raise ConfigError(f"seed must be an integer, got {cfg['seed']!r}")
    return cfg


def _check_known_keys(file_cfg):
    for key, value in file_cfg.items():
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(DEFAULT_CONFIG[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be a table")
            known = set(DEFAULT_CONFIG[key]) if DEFAULT_CONFIG[key] else None
            if key == "synth":
                known = SYNTH_SCALAR_KEYS | SYNTH_TUPLE_KEYS | {"noise_level"}
            for sub in value:
                if known is not None and sub not in known:
                    raise ConfigError(f"unknown config key {key}.{sub!r}")


def config_hash(cfg):
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _paths(cfg):
    out = cfg["out_dir"]
    p = cfg["paths"]
    return {
        "nodes": p["nodes"] or os.path.join(out, "synth", "nodes.csv"),
        "edges": p["edges"] or os.path.join(out, "synth", "edges.csv"),
        "pois": p["pois"] or os.path.join(out, "synth", "pois.csv"),
        "params": p["params"] or os.path.join(out, "train", "params.json"),
    }


def _command_dir(cfg, command):
    path = os.path.join(cfg["out_dir"], command)
    os.makedirs(path, exist_ok=True)
    return path


def _write_run_log(cfg, command, started):
    log = {
        "command": command,
        "seed": cfg["seed"],
        "config_hash": config_hash(cfg),
        "wall_time_s": round(time.monotonic() - started, 3),
    }
    path = os.path.join(cfg["out_dir"], command, "run.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(log, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require_files(labels_to_paths):
    missing = [f"{label} ({path})"
               for label, path in labels_to_paths.items()
               if not os.path.exists(path)]
    if missing:
        raise MissingArtifactError(
            "missing upstream artifacts: " + ", ".join(missing))


def _build_cityspec(cfg):
    section = dict(cfg["synth"])
    kwargs = {"seed": cfg["seed"]}
    noise = section.pop("noise_level", None)
    if noise is not None:
        kwargs["archetypes"] = default_archetypes(noise_level=noise)
    for key, value in section.items():
        if key in SYNTH_TUPLE_KEYS:
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = value
    return CitySpec(**kwargs)


def _load_city(cfg):
    """Graph with normalized features, plus catchment targets."""
    paths = _paths(cfg)
    _require_files({k: paths[k] for k in ("nodes", "edges", "pois")})
    graph = normalize_features(load_graph(paths["nodes"], paths["edges"]))
    radius = cfg["explain"]["catchment_radius_m"]
    targets = label_by_catchment(graph, paths["pois"], radius_m=radius)
    return graph, targets


def _split_masks(cfg, graph):
    ratios = tuple(cfg["train"]["split"])
    return split(graph, ratios, seed=cfg["seed"])


def _make_estimator(cfg):
    section = cfg["train"]
    name = section["model"]
    if name not in ESTIMATORS:
        raise ConfigError(
            f"unknown model {name!r}; choose from {sorted(ESTIMATORS)}")
    kwargs = {
        "hidden_dim": section["hidden_dim"],
        "epochs": section["epochs"],
        "learning_rate": section["learning_rate"],
        "weight_decay": section["weight_decay"],
        "seed": cfg["seed"],
    }
    if name == "hgt":
        kwargs["num_heads"] = section["num_heads"]
        kwargs["num_layers"] = section["num_layers"]
    return ESTIMATORS[name](**kwargs)


def _estimator_from_snapshot(cfg):
    """Rebuild a fitted estimator from the saved parameter snapshot."""
    paths = _paths(cfg)
    _require_files({"params": paths["params"]})
    params = load_params(paths["params"])
    meta = params.meta
    name = meta.get("model")
    if name not in ESTIMATORS:
        raise ConfigError(f"snapshot has unknown model kind {name!r}")
    kwargs = {"hidden_dim": meta.get("hidden_dim", 128)}
    if name == "hgt":
        kwargs["num_heads"] = meta.get("num_heads", 2)
        kwargs["num_layers"] = meta.get("num_layers", 2)
    estimator = ESTIMATORS[name](**kwargs)
    estimator.params_ = params
    return estimator


# ---------------------------------------------------------------- commands

def cmd_synth(cfg):
    out = _command_dir(cfg, "synth")
    generate(_build_cityspec(cfg), out)


def cmd_train(cfg):
    graph, targets = _load_city(cfg)
    masks = _split_masks(cfg, graph)
    estimator = _make_estimator(cfg)
    estimator.fit(graph, targets, masks)
    out = _command_dir(cfg, "train")
    save_params(estimator.params_, _paths(cfg)["params"])
    with open(os.path.join(out, "history.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for entry in estimator.history_:
            writer.writerow([entry["epoch"], repr(entry["train_loss"]),
                             repr(entry["val_loss"])])


def cmd_eval(cfg):
    graph, targets = _load_city(cfg)
    estimator = _estimator_from_snapshot(cfg)
    masks = _split_masks(cfg, graph)
    pred = estimator.predict(graph)
    name = estimator.model_name
    report = evaluate(pred, targets, graph, masks.test, split="test")
    out = _command_dir(cfg, "eval")
    write_metrics_csv({name: report}, os.path.join(out, "metrics.csv"),
                      baseline=name)
    write_metrics_json({name: report}, os.path.join(out, "metrics.json"),
                       baseline=name)
    export_residuals(graph, targets, pred, masks.test,
                     os.path.join(out, "residuals.csv"))


def cmd_ablate(cfg, scenario=None):
    graph, targets = _load_city(cfg)
    scenarios = [scenario] if scenario else list(ABLATION_SCENARIOS)
    factory = lambda: _make_estimator(cfg)
    ratios = tuple(cfg["train"]["split"])
    results = [
        ablate(graph, targets, name, factory, ratios=ratios,
               split_seed=cfg["seed"])
        for name in scenarios
    ]
    out = _command_dir(cfg, "ablate")
    with open(os.path.join(out, "ablation.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario"]
                        + [f"{c}_r2" for c in LAND_USE_CATEGORIES]
                        + ["mean_r2"])
        for res in results:
            writer.writerow([res.scenario]
                            + [repr(float(v)) for v in res.report.r2]
                            + [repr(res.report.mean_r2)])


def cmd_attribute(cfg):
    graph, targets = _load_city(cfg)
    estimator = _estimator_from_snapshot(cfg)
    masks = _split_masks(cfg, graph)
    matrix, _ = heatmap_matrix(estimator, graph, targets, masks,
                               steps=cfg["explain"]["ig_steps"])
    out = _command_dir(cfg, "attribute")
    write_heatmap_csv(matrix, LAND_USE_CATEGORIES,
                      os.path.join(out, "heatmap.csv"),
                      labels=time_bin_labels())


def cmd_counterfactual(cfg, node_id=None):
    graph, _ = _load_city(cfg)
    estimator = _estimator_from_snapshot(cfg)
    pred = estimator.predict(graph)
    mixed = mixed_set(graph, pred, fraction=cfg["explain"]["mixed_fraction"])
    out = _command_dir(cfg, "counterfactual")
    if node_id is not None:
        report = counterfactual_report(graph, node_id, mixed.members)
        write_ce_report(report, os.path.join(out, f"ce_{node_id}.json"))
    else:
        scores = aggregate_cf_scores(graph, pred, mixed)
        write_cf_table_csv(scores, os.path.join(out, "cf_components.csv"))


def build_parser():
    parser = _Parser(prog="heterograph",
                     description="synthetic-city graph learning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "synth": "generate the synthetic city (nodes, edges, POIs, manifest)",
        "train": "fit a model on the city and snapshot its parameters",
        "eval": "score the trained snapshot on the held-out test split",
        "ablate": "retrain on node-type subsets and tabulate test R2",
        "attribute": "integrated-gradients heatmap over indicators x time bins",
        "counterfactual": "counterfactual subgraph explanations",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", metavar="FILE",
                       help="TOML config; omitted keys use defaults")
        p.add_argument("--seed", type=int, help="override the config seed")
        if name == "ablate":
            p.add_argument("--scenario", choices=sorted(ABLATION_SCENARIOS),
                           help="run one scenario instead of all")
        if name == "counterfactual":
            p.add_argument("--node-id", metavar="ID",
                           help="explain one node (default: aggregate table)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    started = time.monotonic()
    try:
        cfg = load_config(args.config, seed=args.seed)
        if args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg)
        elif args.command == "ablate":
            cmd_ablate(cfg, scenario=args.scenario)
        elif args.command == "attribute":
            cmd_attribute(cfg)
        elif args.command == "counterfactual":
            cmd_counterfactual(cfg, node_id=args.node_id)
        _write_run_log(cfg, args.command, started)
    except tomllib.TOMLDecodeError as exc:
        print(f"heterograph {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"heterograph {args.command}: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except HeterographError as exc:
        print(f"heterograph {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"heterograph {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
