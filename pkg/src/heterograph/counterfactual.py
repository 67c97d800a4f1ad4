"""Counterfactual subgraph explanations.

A prediction for node i is explained by pointing at the mixed-use node j
whose 1-hop complete subgraph is least dissimilar to i's. Dissimilarity
decomposes into four additive parts: node features, node-type multisets,
edge-type ordinals, and edge-count structure. The "mixed" desired set is
the top decile of nodes by Shannon diversity of their land-use rows.

Candidates are always real nodes of the graph, so every counterfactual
lies on the data manifold by construction.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DiversityError, SearchError
from .graph import LAND_USE_CATEGORIES, HeteroGraph

COMPONENT_NAMES = ("feature", "node_type", "edge_type", "structure")


@dataclass(frozen=True)
class SubgraphView:
    """1-hop complete subgraph: center, its neighbors, and induced edges."""

    graph: HeteroGraph
    center: str
    members: tuple
    edges: tuple

    def __post_init__(self):
        member_set = set(self.members)
        if self.center not in member_set:
            raise ContractError(f"center {self.center!r} missing from members")
        missing = member_set - set(self.graph.nodes)
        if missing:
            raise ContractError(f"members not in parent graph: {sorted(missing)}")
        induced = tuple(e for e in self.graph.edges
                        if e.src in member_set and e.dst in member_set)
        if self.edges != induced:
            raise ContractError(
                f"edge list of subgraph at {self.center!r} is not the induced set")

    @property
    def num_edges(self):
        return len(self.edges)

    def type_counts(self):
        """Member count per node type, keyed in vocabulary order."""
        seen = Counter(self.graph.nodes[m].node_type for m in self.members)
        return {t: seen.get(t, 0) for t in self.graph.node_types}

    def ordinal_mean(self):
        """(mean edge ordinal, defaulted) — empty edge set means 0.0 by convention."""
        if not self.edges:
            return 0.0, True
        return sum(e.ordinal for e in self.edges) / len(self.edges), False

    def summary(self):
        mean, defaulted = self.ordinal_mean()
        return {
            "center": self.center,
            "num_nodes": len(self.members),
            "num_edges": self.num_edges,
            "type_counts": self.type_counts(),
            "mean_edge_ordinal": mean,
            "edge_mean_defaulted": defaulted,
        }


@dataclass(frozen=True)
class DissimilarityBreakdown:
    """Four additive dissimilarity components between two subgraphs.

    ``degenerate_edges`` lists the centers whose subgraph had no edges and
    therefore contributed a 0.0 ordinal mean. ``scaled``/``scaling`` are
    filled only when a population of breakdowns defines min-max bounds.
    """

    feature: float
    node_type: float
    edge_type: float
    structure: float
    degenerate_edges: tuple = ()
    scaled: tuple = None
    scaling: dict = None

    @property
    def components(self):
        return (self.feature, self.node_type, self.edge_type, self.structure)

    @property
    def total(self):
        return self.feature + self.node_type + self.edge_type + self.structure

    def with_scaling(self, bounds):
        """Attach min-max scaled components given per-component (lo, hi)."""
        scaled = tuple(_minmax(v, *bounds[name])
                       for v, name in zip(self.components, COMPONENT_NAMES))
        return dataclasses.replace(self, scaled=scaled, scaling=dict(bounds))

    def to_dict(self):
        out = {
            "raw": dict(zip(COMPONENT_NAMES, self.components)),
            "total": self.total,
            "degenerate_edges": list(self.degenerate_edges),
        }
        if self.scaled is not None:
            out["scaled"] = dict(zip(COMPONENT_NAMES, self.scaled))
            out["scaling"] = {k: {"min": lo, "max": hi}
                              for k, (lo, hi) in self.scaling.items()}
        return out


@dataclass(frozen=True)
class MixedSet:
    """Nodes classified as mixed-use: the top ``fraction`` by Shannon diversity."""

    members: tuple
    diversity: dict
    fraction: float

    def __contains__(self, node_id):
        return node_id in set(self.members)

    def __len__(self):
        return len(self.members)


def _minmax(value, lo, hi):
    # constant population: everything maps to 0 rather than dividing by zero
    if hi == lo:
        return 0.0
    return (value - lo) / (hi - lo)


def one_hop_subgraph(graph, node_id):
    """Center + in/out neighbors, with every parent edge among them."""
    member_set = graph.neighbors(node_id) | {node_id}
    members = tuple(n for n in graph.nodes if n in member_set)
    edges = tuple(e for e in graph.edges
                  if e.src in member_set and e.dst in member_set)
    return SubgraphView(graph=graph, center=node_id, members=members, edges=edges)


def shannon_diversity(row):
    """Entropy of a land-use row; negatives clamp to 0, zero terms drop out."""
    y = np.maximum(np.asarray(row, dtype=np.float64), 0.0)
    if y.ndim != 1:
        raise ContractError(f"expected a single prediction row, got shape {y.shape}")
    total = y.sum()
    if total <= 0.0:
        raise DiversityError("prediction row is all zero; proportions undefined")
    p = y / total
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum()) + 0.0


def mixed_set(graph, predictions, fraction=0.10):
    """Top ``ceil(fraction * N)`` nodes by diversity, ids ascending on ties."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    values = np.asarray(predictions, dtype=np.float64)
    ids = graph.index.ids
    if values.ndim != 2 or values.shape[0] != len(ids):
        raise ContractError(
            f"predictions shape {values.shape} does not cover {len(ids)} nodes")
    diversity = {ids[p]: shannon_diversity(values[p]) for p in range(len(ids))}
    count = math.ceil(fraction * len(ids))
    ranked = sorted(ids, key=lambda n: (-diversity[n], n))
    return MixedSet(members=tuple(ranked[:count]), diversity=diversity,
                    fraction=fraction)


def multiset_jaccard_distance(counts_a, counts_b):
    """1 - sum(min)/sum(max) over per-type counts; empty-vs-empty is 0."""
    keys = set(counts_a) | set(counts_b)
    num = sum(min(counts_a.get(t, 0), counts_b.get(t, 0)) for t in keys)
    den = sum(max(counts_a.get(t, 0), counts_b.get(t, 0)) for t in keys)
    if den == 0:
        return 0.0
    return 1.0 - num / den


def _feature_distance(graph, center_id, member_ids):
    """Mean of 0.5*(L2 + cosine distance) from the center to each member."""
    pos = graph.index.pos
    feats = graph.index.features
    xi = feats[pos[center_id]]
    block = feats[[pos[m] for m in member_ids]]
    diff = block - xi
    l2 = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    norm_i = float(np.linalg.norm(xi))
    norms = np.linalg.norm(block, axis=1)
    cos = np.ones(len(member_ids))
    if norm_i > 0.0:
        valid = norms > 0.0
        cos[valid] = 1.0 - (block[valid] @ xi) / (norms[valid] * norm_i)
        np.maximum(cos, 0.0, out=cos)
        # bitwise-identical rows are exactly cosine-identical; kill ulp noise
        cos[valid & (l2 == 0.0)] = 0.0
    return float(np.mean(0.5 * (l2 + cos)))


def dissimilarity(sub_a, sub_b):
    """Four-component breakdown between two subgraphs of one parent graph."""
    if sub_a.graph is not sub_b.graph and sub_a.graph != sub_b.graph:
        raise ContractError("subgraphs come from different parent graphs")
    d_feature = _feature_distance(sub_a.graph, sub_a.center, sub_b.members)
    d_type = multiset_jaccard_distance(sub_a.type_counts(), sub_b.type_counts())
    mean_a, empty_a = sub_a.ordinal_mean()
    mean_b, empty_b = sub_b.ordinal_mean()
    degenerate = tuple(center for center, empty
                       in ((sub_a.center, empty_a), (sub_b.center, empty_b)) if empty)
    d_edge = abs(mean_a - mean_b)
    d_structure = float(abs(sub_a.num_edges - sub_b.num_edges))
    return DissimilarityBreakdown(
        feature=d_feature, node_type=d_type, edge_type=d_edge,
        structure=d_structure, degenerate_edges=degenerate)


def _search(graph, node_id, desired, candidate_views=None):
    """Evaluate every candidate; return the winner and all breakdowns.

    ``desired`` is a :class:`MixedSet` or any iterable of node ids.
    """
    members = tuple(getattr(desired, "members", desired))
    if len(members) == 0:
        raise SearchError("desired set is empty; nothing to search")
    if node_id in members:
        raise ContractError(f"input node {node_id!r} is itself in the desired set")
    if candidate_views is None:
        candidate_views = {c: one_hop_subgraph(graph, c) for c in members}
    center = one_hop_subgraph(graph, node_id)
    evaluated = {}
    for candidate in members:
        view = candidate_views[candidate]
        evaluated[candidate] = (view, dissimilarity(center, view))
    best = min(evaluated, key=lambda n: (evaluated[n][1].total, n))
    return center, best, evaluated


def find_counterfactual(graph, node_id, desired):
    """Exhaustive argmin of dissimilarity over the desired set.

    Ties resolve to the smallest node id. Returns the winning node id, its
    subgraph, and the raw breakdown.
    """
    _, best, evaluated = _search(graph, node_id, desired)
    view, breakdown = evaluated[best]
    return best, view, breakdown


def counterfactual_report(graph, node_id, desired):
    """JSON-ready single-node explanation.

    Scaled components use min-max bounds over all candidate evaluations
    performed for this query, so the report is self-contained.
    """
    center, best, evaluated = _search(graph, node_id, desired)
    view, breakdown = evaluated[best]
    bounds = _component_bounds([b for _, b in evaluated.values()])
    return {
        "input_node": node_id,
        "ce_node": best,
        "input_subgraph": center.summary(),
        "ce_subgraph": view.summary(),
        "dissimilarity": breakdown.with_scaling(bounds).to_dict(),
        "candidates_evaluated": len(evaluated),
    }


def _component_bounds(breakdowns):
    matrix = np.array([b.components for b in breakdowns], dtype=np.float64)
    return {name: (float(matrix[:, k].min()), float(matrix[:, k].max()))
            for k, name in enumerate(COMPONENT_NAMES)}


@dataclass(frozen=True)
class AggregatedScores:
    """Mean +/- std of scaled CE components, grouped by dominant indicator."""

    rows: tuple                 # (indicator, component, mean, std)
    omitted: tuple              # indicators with no non-mixed nodes
    bounds: dict                # component -> (lo, hi) used for scaling
    evaluated: int


def aggregate_cf_scores(graph, predictions, mixed, categories=LAND_USE_CATEGORIES):
    """Counterfactual component table over every non-mixed node.

    Each non-mixed node is explained against the mixed set, components are
    min-max scaled across all evaluated nodes, and nodes are grouped by the
    argmax of their land-use row.
    """
    if len(mixed) == 0:
        raise SearchError("mixed set is empty; nothing to aggregate against")
    values = np.asarray(predictions, dtype=np.float64)
    ids = graph.index.ids
    if values.ndim != 2 or values.shape != (len(ids), len(categories)):
        raise ContractError(
            f"predictions shape {values.shape} does not match "
            f"{len(ids)} nodes x {len(categories)} indicators")
    member_set = set(mixed.members)
    evaluated_ids = [n for n in ids if n not in member_set]
    if not evaluated_ids:
        raise SearchError("every node is mixed; no nodes left to explain")

    candidate_views = {c: one_hop_subgraph(graph, c) for c in mixed.members}
    breakdowns = {}
    for node_id in evaluated_ids:
        _, best, evaluated = _search(graph, node_id, mixed, candidate_views)
        breakdowns[node_id] = evaluated[best][1]

    bounds = _component_bounds(list(breakdowns.values()))
    scaled = {n: b.with_scaling(bounds).scaled for n, b in breakdowns.items()}

    pos = graph.index.pos
    dominant = np.argmax(values, axis=1)
    rows = []
    omitted = []
    for j, indicator in enumerate(categories):
        group = [n for n in evaluated_ids if dominant[pos[n]] == j]
        if not group:
            omitted.append(indicator)
            warnings.warn(f"no non-mixed nodes with dominant indicator "
                          f"{indicator!r}; row omitted", stacklevel=2)
            continue
        block = np.array([scaled[n] for n in group], dtype=np.float64)
        for k, component in enumerate(COMPONENT_NAMES):
            rows.append((indicator, component,
                         float(block[:, k].mean()), float(block[:, k].std())))
    return AggregatedScores(rows=tuple(rows), omitted=tuple(omitted),
                            bounds=bounds, evaluated=len(evaluated_ids))


def write_ce_report(report, path):
    """Write a single-node explanation as deterministic JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_cf_table_csv(scores, path):
    """Write the aggregated component table as indicator,component,mean,std."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("indicator", "component", "mean", "std"))
        for indicator, component, mean, std in scores.rows:
            writer.writerow((indicator, component, repr(mean), repr(std)))
