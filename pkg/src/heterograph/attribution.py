"""Gradient-based feature attribution for node-level predictions.

Two methods over the same plumbing: Gradient times Input, and a Riemann-sum
approximation of Integrated Gradients along the straight path from a
zero-feature baseline (structure and types stay fixed; only node features
interpolate).  Scores live on every (node, feature) pair and explain one
scalar output: prediction j of node i.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import GradTape, Tensor, backward, gather_rows, matmul, ones
from .errors import ConfigError, ContractError
from .validation import check_targets

GRAD_INPUT = "grad-input"
INTEGRATED_GRADIENTS = "integrated-gradients"


@dataclass(frozen=True)
class AttributionScores:
    """Per-(node, feature) scores explaining output ``output_index`` of
    ``node_id``."""

    matrix: np.ndarray
    node_id: str
    output_index: int
    method: str
    steps: int | None = None

    @property
    def shape(self):
        return self.matrix.shape


def _node_position(graph, node_id):
    pos = graph.index.pos.get(node_id)
    if pos is None:
        raise ContractError(f"unknown node id {node_id!r}")
    return pos


def _output_gradient(model, graph, params, features_data, rows, output_index,
                     row_weights=None):
    """Gradient of a weighted sum of out[rows, output_index] w.r.t. features.

    ``rows`` is a position array; weights default to 1.  Selecting through
    matmul keeps the whole computation on the tape.
    """
    feats = Tensor(features_data, requires_grad=True)
    with GradTape() as tape:
        out = model.forward_tensor(graph, features=feats, params=params)
        if not 0 <= output_index < out.cols:
            raise ContractError(
                f"output index {output_index} out of range for {out.cols} outputs"
            )
        picked = gather_rows(out, rows)
        e_j = np.zeros((out.cols, 1))
        e_j[output_index, 0] = 1.0
        col = matmul(picked, Tensor(e_j))
        if row_weights is None:
            w = ones(1, len(rows))
        else:
            w = Tensor(np.asarray(row_weights, dtype=np.float64).reshape(1, -1))
        scalar = matmul(w, col)
    grads = backward(scalar, tape)
    g = grads.get(feats)
    return np.zeros_like(features_data) if g is None else g


def grad_input(model, graph, node_id, output_index, params=None):
    """S = x * d(out[i, j])/dx over every node feature."""
    pos = _node_position(graph, node_id)
    x = graph.index.features
    grad = _output_gradient(model, graph, params, x, np.array([pos]), output_index)
    return AttributionScores(matrix=x * grad, node_id=node_id,
                             output_index=output_index, method=GRAD_INPUT)


def _check_baseline(graph, baseline):
    if baseline is None:
        return np.zeros_like(graph.index.features)
    same_structure = (
        baseline.index.ids == graph.index.ids
        and np.array_equal(baseline.index.node_type, graph.index.node_type)
        and baseline.edges == graph.edges
        and baseline.node_types == graph.node_types
        and baseline.edge_types == graph.edge_types
    )
    if not same_structure:
        raise ContractError("baseline graph structure differs from the input graph")
    return baseline.index.features


def integrated_gradients(model, graph, node_id, output_index, baseline=None,
                         steps=50, params=None):
    """Right-endpoint Riemann approximation of the path integral.

    S = (x - xb) * (1/n) * sum_{q=1..n} grad at xb + (q/n)(x - xb).
    The default baseline zeroes node features and keeps structure fixed.
    """
    if steps < 1:
        raise ConfigError(f"integrated gradients needs steps >= 1, got {steps}")
    pos = _node_position(graph, node_id)
    x = graph.index.features
    xb = _check_baseline(graph, baseline)
    delta = x - xb
    rows = np.array([pos])
    acc = np.zeros_like(x)
    for q in range(1, steps + 1):
        point = xb + (q / steps) * delta
        acc += _output_gradient(model, graph, params, point, rows, output_index)
    return AttributionScores(matrix=delta * (acc / steps), node_id=node_id,
                             output_index=output_index,
                             method=INTEGRATED_GRADIENTS, steps=steps)


def aggregate(scores):
    """Column sums: one score per feature, summed over all nodes."""
    return scores.matrix.sum(axis=0)


def dominant_indicators(targets):
    """Argmax of each node's normalized target row (first index wins ties)."""
    return np.argmax(np.asarray(targets.values, dtype=np.float64), axis=1)


def heatmap_matrix(model, graph, targets, masks, steps=50, params=None):
    """Mean aggregated IG per indicator over its dominant test-mask nodes.

    Row j averages ``aggregate(integrated_gradients(node, output=j))`` over
    every test node whose dominant label is j.  Gradient linearity lets each
    group share one backward pass per path step.  Indicators with no group
    members yield a zero row and a warning.

    Returns (matrix, group_sizes): (|categories| x |features|) and a count
    per indicator.
    """
    check_targets(graph, targets)
    test_pos = masks.positions(graph, "test")
    if test_pos.size == 0:
        raise ContractError("test mask is empty")
    dominant = dominant_indicators(targets)
    x = graph.index.features
    categories = targets.categories
    matrix = np.zeros((len(categories), x.shape[1]))
    group_sizes = np.zeros(len(categories), dtype=np.intp)
    empty = []
    for j in range(len(categories)):
        group = test_pos[dominant[test_pos] == j]
        group_sizes[j] = group.size
        if group.size == 0:
            empty.append(categories[j])
            continue
        acc = np.zeros_like(x)
        for q in range(1, steps + 1):
            point = (q / steps) * x  # zero baseline
            acc += _output_gradient(model, graph, params, point, group, j)
        scores = x * (acc / steps) / group.size
        matrix[j] = scores.sum(axis=0)
    if empty:
        warnings.warn(f"no test nodes with dominant indicator: {empty}; "
                      f"rows left at zero", stacklevel=2)
    return matrix, group_sizes


def time_bin_labels(count=64, start_hour=6, step_minutes=15):
    """Clock labels for the ridership bins: 06:00, 06:15, ..., 21:45."""
    labels = []
    minutes = start_hour * 60
    for _ in range(count):
        labels.append(f"{minutes // 60:02d}:{minutes % 60:02d}")
        minutes += step_minutes
    return labels


def write_heatmap_csv(matrix, categories, path, labels=None):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape[0] != len(categories):
        raise ContractError(
            f"heatmap has {matrix.shape[0]} rows for {len(categories)} indicators"
        )
    labels = labels or time_bin_labels(matrix.shape[1])
    if len(labels) != matrix.shape[1]:
        raise ContractError(f"{len(labels)} labels for {matrix.shape[1]} columns")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["indicator"] + list(labels))
        for cat, row in zip(categories, matrix):
            writer.writerow([cat] + [repr(float(v)) for v in row])
