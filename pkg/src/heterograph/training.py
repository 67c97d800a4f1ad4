"""Training loop, AdamW optimizer, evaluation metrics, residuals, ablation.

The loss is mean squared error averaged over train-mask nodes and all six
targets.  Training is full batch, so a (config, seed) pair fixes every float
of the run; the configured batch size only applies when neighbor sampling is
in play.  Model selection keeps the epoch with the lowest validation MSE,
including the initialization.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import GradTape, Tensor, backward, gather_rows, mul, scale, sub, sum_all
from .errors import AblationError, ConfigError, ContractError, TrainingError
from .graph import filter_graph, split
from .validation import check_targets

ABLATION_SCENARIOS = {
    "all": ("bike", "bus", "tube"),
    "bus+bike": ("bike", "bus"),
    "bus+tube": ("bus", "tube"),
    "bus-only": ("bus",),
}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.002
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    model_kind: str = "hgt"

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class AdamWState:
    m: dict
    v: dict
    t: int = 0


def init_adamw_state(params):
    return AdamWState(
        m={k: np.zeros_like(t.data) for k, t in params.items()},
        v={k: np.zeros_like(t.data) for k, t in params.items()},
        t=0,
    )


def adamw_step(arrays, grads, state, config):
    """One decoupled-weight-decay AdamW update.

    Moments use bias correction; the decay term multiplies the raw weights
    and is not part of the adaptive gradient estimate, so zero gradients
    with nonzero decay shrink weights by exactly (1 - lr * decay) per step.
    """
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    lr, wd, eps = config.learning_rate, config.weight_decay, config.eps
    new_arrays = {}
    new_m = {}
    new_v = {}
    for key, theta in arrays.items():
        g = grads[key]
        if g.shape != theta.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape "
                                f"{theta.shape} for {key!r}")
        m = b1 * state.m[key] + (1.0 - b1) * g
        v = b2 * state.v[key] + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_arrays[key] = theta - lr * (m_hat / (np.sqrt(v_hat) + eps) + wd * theta)
        new_m[key] = m
        new_v[key] = v
    return new_arrays, AdamWState(m=new_m, v=new_v, t=t)


@dataclass
class TrainResult:
    params: object
    history: list
    best_epoch: int


def _masked_mse(pred_data, y, pos):
    if pos.size == 0:
        return float("nan")
    diff = pred_data[pos] - y[pos]
    return float(np.mean(diff * diff))


def train(forward_fn, graph, params, targets, masks, config):
    """Fit ``params`` by full-batch AdamW on the train mask.

    Each epoch runs one taped forward, evaluates train loss on the same
    prediction, updates, and records the pre-update validation loss.  When
    the validation mask is empty the train loss stands in for selection.
    Aborts with a diagnostic if the loss stops being finite.
    """
    y = check_targets(graph, targets)
    train_pos = masks.positions(graph, "train")
    val_pos = masks.positions(graph, "val")
    y_train = Tensor(y[train_pos])
    denom = float(y_train.data.size)

    state = init_adamw_state(params)
    history = []
    best_val = math.inf
    best_epoch = 0
    best_arrays = params.copy_arrays()

    for epoch in range(config.epochs):
        with GradTape() as tape:
            pred = forward_fn(graph, params)
            diff = sub(gather_rows(pred, train_pos), y_train)
            loss = scale(sum_all(mul(diff, diff)), 1.0 / denom)
        train_loss = loss.item()
        if not math.isfinite(train_loss):
            raise TrainingError(
                f"non-finite training loss at epoch {epoch}; check the learning "
                f"rate and input scaling"
            )
        val_loss = _masked_mse(pred.data, y, val_pos)
        selection = val_loss if val_pos.size else train_loss
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if selection < best_val:
            best_val = selection
            best_epoch = epoch
            best_arrays = params.copy_arrays()

        grads_by_tensor = backward(loss, tape)
        grads = {}
        for key, tensor in params.items():
            g = grads_by_tensor.get(tensor)
            grads[key] = np.zeros_like(tensor.data) if g is None else g
        new_arrays, state = adamw_step(params.copy_arrays(), grads, state, config)
        params = params.with_values(new_arrays)

    # final parameters also compete for the checkpoint
    pred = forward_fn(graph, params).data
    train_loss = _masked_mse(pred, y, train_pos)
    val_loss = _masked_mse(pred, y, val_pos)
    selection = val_loss if val_pos.size else train_loss
    history.append({"epoch": config.epochs, "train_loss": train_loss,
                    "val_loss": val_loss})
    if selection < best_val:
        best_epoch = config.epochs
        best_arrays = params.copy_arrays()

    return TrainResult(params=params.with_values(best_arrays), history=history,
                       best_epoch=best_epoch)


# ----------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class MetricsReport:
    """Per-indicator regression metrics on one split."""

    categories: tuple
    split: str
    mae: np.ndarray
    rmse: np.ndarray
    r2: np.ndarray
    notes: tuple = field(default=())

    def row(self, category):
        k = self.categories.index(category)
        return {"mae": float(self.mae[k]), "rmse": float(self.rmse[k]),
                "r2": float(self.r2[k])}

    @property
    def mean_r2(self):
        finite = self.r2[np.isfinite(self.r2)]
        return float(finite.mean()) if finite.size else float("nan")

    def to_dict(self):
        return {
            "split": self.split,
            "per_indicator": {c: self.row(c) for c in self.categories},
            "mean_r2": self.mean_r2,
            "notes": list(self.notes),
        }


def regression_metrics(y_true, y_pred):
    """Column-wise MAE, RMSE, and R^2 from their definitions.

    Zero-variance truth columns make R^2 undefined: those entries are NaN.
    """
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise ContractError(f"shape mismatch {y_true.shape} vs {y_pred.shape}")
    if y_true.ndim != 2 or y_true.shape[0] == 0:
        raise ContractError("metrics need a non-empty 2-D sample")
    err = y_pred - y_true
    mae = np.abs(err).mean(axis=0)
    rmse = np.sqrt((err * err).mean(axis=0))
    ss_res = (err * err).sum(axis=0)
    ss_tot = ((y_true - y_true.mean(axis=0)) ** 2).sum(axis=0)
    r2 = np.full(y_true.shape[1], np.nan)
    defined = ss_tot > 0
    r2[defined] = 1.0 - ss_res[defined] / ss_tot[defined]
    return mae, rmse, r2


def evaluate(pred, targets, graph, mask_ids, split="eval"):
    """Metrics over the mask's nodes; mask order never affects the result."""
    y = check_targets(graph, targets)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != y.shape:
        raise ContractError(f"prediction shape {pred.shape} != target shape {y.shape}")
    mask_ids = set(mask_ids)
    if not mask_ids:
        raise ContractError("evaluation mask is empty")
    pos = np.array([k for k, nid in enumerate(graph.index.ids) if nid in mask_ids],
                   dtype=np.intp)
    if pos.size != len(mask_ids):
        raise ContractError("evaluation mask references node ids outside the graph")
    mae, rmse, r2 = regression_metrics(y[pos], pred[pos])
    notes = []
    for k, cat in enumerate(targets.categories):
        if not np.isfinite(r2[k]):
            notes.append(f"R2 undefined for {cat!r}: zero target variance in mask")
    if notes:
        warnings.warn("; ".join(notes), stacklevel=2)
    return MetricsReport(categories=tuple(targets.categories), split=split,
                         mae=mae, rmse=rmse, r2=r2, notes=tuple(notes))


def improvement_pct(baseline, value):
    """Error reduction relative to the baseline, in percent (NaN when the
    baseline is zero or undefined)."""
    if not np.isfinite(baseline) or baseline == 0:
        return float("nan")
    return float((baseline - value) / baseline * 100.0)


def metrics_rows(reports, baseline="mlp"):
    """Flatten model reports into per-indicator rows for CSV/JSON export.

    Every model contributes MAE, RMSE, R2, and its MAE reduction relative to
    the baseline model (the baseline's own cell stays empty, as conventional
    for self-comparison).
    """
    if baseline not in reports:
        raise ConfigError(f"baseline model {baseline!r} missing from reports")
    categories = next(iter(reports.values())).categories
    for report in reports.values():
        if report.categories != categories:
            raise ContractError("reports disagree on indicator categories")
    rows = []
    for k, cat in enumerate(categories):
        row = {"indicator": cat}
        for name, report in reports.items():
            row[f"{name}_mae"] = float(report.mae[k])
            row[f"{name}_rmse"] = float(report.rmse[k])
            row[f"{name}_r2"] = float(report.r2[k])
            if name == baseline:
                row[f"{name}_impr_pct"] = None
            else:
                row[f"{name}_impr_pct"] = improvement_pct(
                    float(reports[baseline].mae[k]), float(report.mae[k]))
        rows.append(row)
    return rows


def _cell(value):
    if value is None:
        return "-"
    return repr(value)


def write_metrics_csv(reports, path, baseline="mlp"):
    rows = metrics_rows(reports, baseline=baseline)
    header = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row["indicator"]] + [_cell(row[h]) for h in header[1:]])


def write_metrics_json(reports, path, baseline="mlp"):
    import json

    doc = {
        "baseline": baseline,
        "models": {name: rep.to_dict() for name, rep in reports.items()},
        "rows": metrics_rows(reports, baseline=baseline),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def export_residuals(graph, targets, pred, mask_ids, path):
    """Signed residuals (prediction minus target) for mask nodes, one row per
    (node, indicator), in node insertion order."""
    y = check_targets(graph, targets)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != y.shape:
        raise ContractError(f"prediction shape {pred.shape} != target shape {y.shape}")
    mask_ids = set(mask_ids)
    idx = graph.index
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "lon", "lat", "indicator", "residual"])
        for k, nid in enumerate(idx.ids):
            if nid not in mask_ids:
                continue
            for c, cat in enumerate(targets.categories):
                writer.writerow([nid, repr(float(idx.lon[k])), repr(float(idx.lat[k])),
                                 cat, repr(float(pred[k, c] - y[k, c]))])


# ------------------------------------------------------------------- ablation

@dataclass
class AblationResult:
    scenario: str
    graph: object
    masks: object
    estimator: object
    report: MetricsReport


def ablate(graph, targets, scenario, estimator_factory, ratios=(0.70, 0.15, 0.15),
           split_seed=0):
    """Full train/evaluate cycle on the scenario's node-type subset.

    The scenario keeps only its node types and their induced edges, re-splits
    with the same seed, trains a fresh estimator, and reports test metrics.
    ``ablate("all")`` reproduces the unfiltered pipeline exactly.
    """
    if scenario not in ABLATION_SCENARIOS:
        raise ConfigError(
            f"unknown ablation scenario {scenario!r}; "
            f"choose from {sorted(ABLATION_SCENARIOS)}"
        )
    sub = filter_graph(graph, ABLATION_SCENARIOS[scenario])
    if sub.num_nodes == 0:
        raise AblationError(f"scenario {scenario!r} leaves no labeled nodes")
    sub_targets = targets.subset(set(sub.nodes))
    masks = split(sub, ratios, seed=split_seed)
    estimator = estimator_factory()
    estimator.fit(sub, sub_targets, masks)
    pred = estimator.predict(sub)
    report = evaluate(pred, sub_targets, sub, masks.test, split="test")
    return AblationResult(scenario=scenario, graph=sub, masks=masks,
                          estimator=estimator, report=report)
