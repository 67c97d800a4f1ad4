"""Shared fixture builders for the test suite."""

import numpy as np

from heterograph import EdgeRecord, HeteroGraph, LandUseTargets, NodeRecord

CATEGORIES = ("office", "sustenance", "transport", "retail", "leisure", "residence")


def five_node_graph(num_feat=8, seed=0):
    """Five nodes over all three types, five typed directed edges."""
    rng = np.random.default_rng(seed)

    def feats():
        return tuple(float(v) for v in rng.uniform(0.0, 1.0, num_feat))

    nodes = [
        NodeRecord("t0", "tube", -0.12, 51.50, feats()),
        NodeRecord("b0", "bus", -0.11, 51.51, feats()),
        NodeRecord("b1", "bus", -0.13, 51.49, feats()),
        NodeRecord("k0", "bike", -0.10, 51.50, feats()),
        NodeRecord("k1", "bike", -0.14, 51.52, feats()),
    ]
    edges = [
        EdgeRecord("t0", "b0", "primary", 0),
        EdgeRecord("b0", "t0", "primary", 0),
        EdgeRecord("b0", "b1", "secondary", 1),
        EdgeRecord("k0", "t0", "residential", 3),
        EdgeRecord("t0", "k1", "tube-line", 5),
    ]
    return HeteroGraph(nodes, edges)


def line_graph(num_nodes, num_feat=4, seed=0, types=None):
    """Directed path n0 -> n1 -> ... with configurable node types."""
    rng = np.random.default_rng(seed)
    nodes = []
    for k in range(num_nodes):
        ntype = types[k] if types else ("tube", "bus", "bike")[k % 3]
        nodes.append(NodeRecord(
            f"n{k}", ntype, -0.1 + 0.01 * k, 51.5,
            tuple(float(v) for v in rng.uniform(0.0, 1.0, num_feat))))
    edges = [EdgeRecord(f"n{k}", f"n{k+1}", "primary", 0)
             for k in range(num_nodes - 1)]
    return HeteroGraph(nodes, edges, node_type_vocab=("bike", "bus", "tube"))


def make_targets(graph, values, categories=CATEGORIES):
    """Wrap a raw (N, C) array as aligned targets with identity scaling."""
    values = np.asarray(values, dtype=np.float64)
    return LandUseTargets(
        ids=graph.index.ids,
        values=values,
        raw=values.copy(),
        categories=tuple(categories),
        norm_min=np.zeros(values.shape[1]),
        norm_max=np.ones(values.shape[1]),
    )
