"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError
from .graph import HeteroGraph, LandUseTargets, SplitMasks


def check_graph(graph, require_hetero=False):
    """Validate an estimator's graph input and return it unchanged."""
    if not isinstance(graph, HeteroGraph):
        raise ContractError(f"expected HeteroGraph, got {type(graph).__name__}")
    if graph.num_nodes == 0:
        raise ContractError("graph has no nodes")
    if require_hetero and not graph.is_heterogeneous():
        raise ContractError(
            "graph is not heterogeneous: need more than two node plus edge types"
        )
    feats = graph.index.features
    if not np.all(np.isfinite(feats)):
        raise ContractError("graph features contain non-finite values")
    return graph


def check_targets(graph, targets):
    """Validate targets against the graph; returns the aligned (N, C) array."""
    if not isinstance(targets, LandUseTargets):
        raise ContractError(f"expected LandUseTargets, got {type(targets).__name__}")
    if targets.ids != graph.index.ids:
        raise ContractError("targets are not aligned with the graph's node order")
    values = np.asarray(targets.values, dtype=np.float64)
    if values.shape != (graph.num_nodes, len(targets.categories)):
        raise ShapeError(
            f"targets shape {values.shape}, expected "
            f"({graph.num_nodes}, {len(targets.categories)})"
        )
    if not np.all(np.isfinite(values)):
        raise ContractError("targets contain non-finite values")
    return values


def check_masks(graph, masks):
    """Validate split masks: disjoint, covering, and drawn from the graph."""
    if not isinstance(masks, SplitMasks):
        raise ContractError(f"expected SplitMasks, got {type(masks).__name__}")
    all_ids = set(graph.nodes)
    union = masks.train | masks.val | masks.test
    if union - all_ids:
        raise ContractError("masks reference node ids outside the graph")
    if union != all_ids:
        raise ContractError("masks do not cover every node")
    if (masks.train & masks.val) or (masks.train & masks.test) or (masks.val & masks.test):
        raise ContractError("masks overlap")
    if not masks.train:
        raise ContractError("train mask is empty")
    return masks
