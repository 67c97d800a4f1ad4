"""Model forward-pass tests against unrolled per-equation oracles."""

import math

import numpy as np
import pytest

from heterograph import EdgeRecord, GradTape, HeteroGraph, NodeRecord, Tensor, backward
from heterograph.autodiff import sum_all
from heterograph.errors import ConfigError, ContractError
from heterograph.models.baselines import (
    forward_gcn,
    forward_mlp,
    init_mlp_params,
    normalized_adjacency,
)
from heterograph.models.hgt import (
    aggregate,
    edge_attention,
    edge_messages,
    forward,
    hgt_layout,
    init_hgt_params,
    project,
)
from heterograph.models.params import ParamSet

import oracles
from helpers import five_node_graph, line_graph

D = 8  # hidden width used throughout; small keeps oracles fast


def small_params(graph, num_feat=8, num_heads=2, num_layers=2, seed=3):
    return init_hgt_params(graph, feature_count=num_feat, hidden_dim=D,
                           num_heads=num_heads, num_layers=num_layers, seed=seed)


def with_overrides(params, **arrays):
    new = params.copy_arrays()
    for key, value in arrays.items():
        new[key.replace("__", "/")] = value
    return params.with_values(new)


# ------------------------------------------------------------------ project

def test_project_identity_returns_features():
    g = five_node_graph(num_feat=D)
    params = small_params(g, num_feat=D)
    arrays = params.copy_arrays()
    for ntype in g.node_types:
        arrays[f"proj/{ntype}"] = np.eye(D)
    params = params.with_values(arrays)
    h0 = project(g, params)
    assert np.array_equal(h0.data, g.index.features)


def test_project_zero_features_zero_representation():
    g = five_node_graph(num_feat=D)
    params = small_params(g, num_feat=D)
    zeros = Tensor(np.zeros((5, D)))
    assert np.array_equal(project(g, params, features=zeros).data, np.zeros((5, D)))


def test_project_matches_per_node_oracle():
    g = five_node_graph(num_feat=6)
    params = small_params(g, num_feat=6)
    h0 = project(g, params).data
    for k, (nid, node) in enumerate(g.nodes.items()):
        expected = np.asarray(node.features) @ params[f"proj/{node.node_type}"].data
        assert np.allclose(h0[k], expected, atol=1e-12)


def test_project_missing_type_matrix_names_the_type():
    g = five_node_graph(num_feat=D)
    params = small_params(g, num_feat=D)
    tensors = dict(params.items())
    del tensors["proj/tube"]
    broken = ParamSet(tensors, meta=params.meta)
    with pytest.raises(ConfigError, match="tube"):
        project(g, broken)


# ------------------------------------------------------------------ messages

def test_message_single_head_identity_passes_source_through():
    g = five_node_graph(num_feat=D)
    params = init_hgt_params(g, feature_count=D, hidden_dim=D, num_heads=1,
                             num_layers=1, seed=0)
    arrays = params.copy_arrays()
    for ntype in g.node_types:
        arrays[f"l1/h0/msg_src/{ntype}"] = np.eye(D)
    for etype in g.edge_types:
        arrays[f"l1/msg_edge/{etype}"] = np.eye(D)
    params = params.with_values(arrays)
    h_prev = Tensor(np.random.default_rng(1).normal(size=(5, D)))
    m = edge_messages(g, h_prev, params, layer=1)
    for k, e in enumerate(g.edges):
        src_pos = g.index.pos[e.src]
        assert np.allclose(m.data[k], h_prev.data[src_pos], atol=1e-15)


def test_message_zero_source_is_zero():
    g = five_node_graph(num_feat=D)
    params = small_params(g, num_feat=D, num_layers=1)
    m = edge_messages(g, Tensor(np.zeros((5, D))), params, layer=1)
    assert np.array_equal(m.data, np.zeros((g.num_edges, D)))


def test_message_two_heads_match_head_by_head_oracle():
    g = five_node_graph(num_feat=D)
    params = small_params(g, num_feat=D, num_layers=1, seed=11)
    h_prev = Tensor(np.random.default_rng(2).normal(size=(5, D)))
    m = edge_messages(g, h_prev, params, layer=1).data
    ntype = {nid: n.node_type for nid, n in g.nodes.items()}
    for k, e in enumerate(g.edges):
        hs = h_prev.data[g.index.pos[e.src]]
        parts = []
        for t in range(2):
            v = hs @ params[f"l1/h{t}/msg_src/{ntype[e.src]}"].data
            parts.append(v @ params[f"l1/msg_edge/{e.edge_type}"].data)
        assert np.allclose(m[k], np.concatenate(parts), atol=1e-12)


# ----------------------------------------------------------------- attention

def test_attention_singleton_edge_gets_weight_one():
    g = line_graph(2, num_feat=D)
    params = small_params(g, num_feat=D, num_layers=1)
    h_prev = Tensor(np.random.default_rng(3).normal(size=(2, D)))
    a = edge_attention(g, h_prev, params, layer=1)
    assert a.data.shape == (1, 1)
    assert a.data[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_attention_identical_sources_split_evenly():
    rng = np.random.default_rng(4)
    shared = tuple(float(v) for v in rng.uniform(0, 1, D))
    nodes = [
        NodeRecord("s1", "bus", 0.0, 0.0, shared),
        NodeRecord("s2", "bus", 0.1, 0.0, shared),
        NodeRecord("t", "tube", 0.2, 0.0,
                   tuple(float(v) for v in rng.uniform(0, 1, D))),
    ]
    edges = [EdgeRecord("s1", "t", "primary", 0), EdgeRecord("s2", "t", "primary", 0)]
    g = HeteroGraph(nodes, edges, node_type_vocab=("bike", "bus", "tube"))
    params = small_params(g, num_feat=D, num_layers=1)
    h_prev = project(g, params)
    a = edge_attention(g, h_prev, params, layer=1)
    assert np.allclose(a.data, [[0.5], [0.5]], atol=1e-12)


def test_attention_matches_explicit_softmax_oracle():
    rng = np.random.default_rng(5)
    nodes = [NodeRecord(f"s{k}", ("bus", "bike", "tube")[k], 0.01 * k, 0.0,
                        tuple(float(v) for v in rng.uniform(0, 1, D)))
             for k in range(3)]
    nodes.append(NodeRecord("t", "tube", 0.5, 0.0,
                            tuple(float(v) for v in rng.uniform(0, 1, D))))
    edges = [EdgeRecord(f"s{k}", "t", etype, 0)
             for k, etype in enumerate(("primary", "secondary", "residential"))]
    g = HeteroGraph(nodes, edges, node_type_vocab=("bike", "bus", "tube"))
    params = small_params(g, num_feat=D, num_layers=1, seed=8)
    h_prev = project(g, params)
    per_head = edge_attention(g, h_prev, params, layer=1, return_per_head=True)
    mean_alpha = edge_attention(g, h_prev, params, layer=1)

    dh = D // 2
    h = h_prev.data
    tpos = g.index.pos["t"]
    for t in range(2):
        raw = []
        for e in g.edges:
            q = h[g.index.pos[e.src]] @ params[f"l1/h{t}/attn_q"].data
            k = h[tpos] @ params[f"l1/h{t}/attn_k"].data
            raw.append((q @ params[f"l1/h{t}/attn_a"].data @ k) / math.sqrt(dh))
        raw = np.array(raw)
        expected = np.exp(raw) / np.exp(raw).sum()
        assert np.allclose(per_head[t].data[:, 0], expected, atol=1e-12)
    assert np.allclose(mean_alpha.data,
                       (per_head[0].data + per_head[1].data) / 2.0, atol=1e-15)


def test_attention_normalizes_per_head_per_target():
    g = five_node_graph(num_feat=D)
    params = small_params(g, num_feat=D, num_layers=2, seed=21)
    h_prev = project(g, params)
    per_head = edge_attention(g, h_prev, params, layer=1, return_per_head=True)
    dst = g.index.dst
    for head in per_head:
        sums = np.zeros(g.num_nodes)
        np.add.at(sums, dst, head.data[:, 0])
        for node_pos in np.unique(dst):
            assert sums[node_pos] == pytest.approx(1.0, abs=1e-9)


# ----------------------------------------------------------------- aggregate

def test_aggregate_isolated_node_keeps_residual():
    g = five_node_graph(num_feat=D)  # b1 and k1 have no incoming edges? b1 has one
    params = small_params(g, num_feat=D, num_layers=1)
    h_prev = Tensor(np.random.default_rng(6).normal(size=(5, D)))
    m = edge_messages(g, h_prev, params, layer=1)
    a = edge_attention(g, h_prev, params, layer=1)
    out = aggregate(g, h_prev, m, a, params, layer=1)
    # k0 has no incoming edges: row is exactly the residual
    k0 = g.index.pos["k0"]
    assert np.array_equal(out.data[k0], h_prev.data[k0])


def test_aggregate_zero_agg_matrix_is_residual_only():
    g = five_node_graph(num_feat=D)
    params = small_params(g, num_feat=D, num_layers=1)
    arrays = params.copy_arrays()
    for ntype in g.node_types:
        arrays[f"l1/agg/{ntype}"] = np.zeros((D, D))
    params = params.with_values(arrays)
    h_prev = Tensor(np.random.default_rng(7).normal(size=(5, D)))
    m = edge_messages(g, h_prev, params, layer=1)
    a = edge_attention(g, h_prev, params, layer=1)
    out = aggregate(g, h_prev, m, a, params, layer=1)
    assert np.array_equal(out.data, h_prev.data)


def test_aggregate_matches_weighted_sum_oracle_on_star():
    rng = np.random.default_rng(8)
    nodes = [NodeRecord("hub", "tube", 0.0, 0.0,
                        tuple(float(v) for v in rng.uniform(0, 1, D)))]
    edges = []
    for k in range(3):
        nodes.append(NodeRecord(f"leaf{k}", ("bus", "bike", "bus")[k], 0.01 * k, 0.1,
                                tuple(float(v) for v in rng.uniform(0, 1, D))))
        edges.append(EdgeRecord(f"leaf{k}", "hub", "primary", 0))
    g = HeteroGraph(nodes, edges, node_type_vocab=("bike", "bus", "tube"))
    params = small_params(g, num_feat=D, num_layers=1, seed=14)
    h_prev = project(g, params)
    m = edge_messages(g, h_prev, params, layer=1)
    a = edge_attention(g, h_prev, params, layer=1)
    out = aggregate(g, h_prev, m, a, params, layer=1)
    hub = g.index.pos["hub"]
    weighted = sum(a.data[k, 0] * m.data[k] for k in range(3))
    expected = weighted @ params["l1/agg/tube"].data + h_prev.data[hub]
    assert np.allclose(out.data[hub], expected, atol=1e-12)


# ------------------------------------------------------------------- forward

def test_forward_output_shape():
    g = line_graph(10, num_feat=6)
    params = init_hgt_params(g, hidden_dim=D, num_heads=2, num_layers=2, seed=0)
    assert forward(g, params).shape == (10, 6)


def test_forward_zero_params_zero_predictions():
    g = five_node_graph(num_feat=D)
    params = small_params(g, num_feat=D)
    params = params.with_values({k: np.zeros_like(v)
                                 for k, v in params.copy_arrays().items()})
    assert np.array_equal(forward(g, params).data, np.zeros((5, 6)))


def test_forward_matches_per_equation_oracle():
    g = five_node_graph(num_feat=D, seed=9)
    params = small_params(g, num_feat=D, num_layers=2, seed=17)
    got = forward(g, params).data
    expected = oracles.hgt_forward_reference(g, params)
    assert np.max(np.abs(got - expected)) < 1e-10


def test_forward_zero_layers_is_linear_probe():
    g = five_node_graph(num_feat=D)
    params = init_hgt_params(g, feature_count=D, hidden_dim=D, num_heads=2,
                             num_layers=0, seed=5)
    got = forward(g, params).data
    for k, node in enumerate(g.nodes.values()):
        h0 = np.asarray(node.features) @ params[f"proj/{node.node_type}"].data
        expected = h0 @ params["head/w"].data + params["head/b"].data[0]
        assert np.allclose(got[k], expected, atol=1e-12)


def test_forward_node_relabeling_equivariance():
    g = five_node_graph(num_feat=D, seed=10)
    params = small_params(g, num_feat=D, seed=19)
    pred = forward(g, params).data

    order = ["b1", "k1", "t0", "k0", "b0"]
    permuted = HeteroGraph([g.nodes[nid] for nid in order], g.edges,
                           node_type_vocab=g.node_types,
                           edge_type_vocab=g.edge_types)
    pred_perm = forward(permuted, params).data
    for k, nid in enumerate(order):
        assert np.allclose(pred_perm[k], pred[g.index.pos[nid]], atol=1e-12)


def test_forward_locality_two_layers():
    # path n0 -> n1 -> n2 -> n3: n0 is three hops from n3
    g = line_graph(4, num_feat=D, seed=12)
    params = small_params(g, num_feat=D, num_layers=2, seed=23)
    base = forward(g, params).data

    bumped = list(g.nodes.values())
    far = bumped[0]
    bumped[0] = NodeRecord(far.id, far.node_type, far.lon, far.lat,
                           tuple(v + 5.0 for v in far.features))
    g2 = HeteroGraph(bumped, g.edges, node_type_vocab=g.node_types,
                     edge_type_vocab=g.edge_types)
    pred2 = forward(g2, params).data
    assert np.array_equal(pred2[3], base[3])       # out of range
    assert not np.allclose(pred2[1], base[1])      # in range


def test_forward_sensitive_to_node_type():
    g = five_node_graph(num_feat=D, seed=13)
    params = small_params(g, num_feat=D, seed=29)
    base = forward(g, params).data

    retyped = list(g.nodes.values())
    b0 = retyped[1]
    assert b0.node_type == "bus"
    retyped[1] = NodeRecord(b0.id, "bike", b0.lon, b0.lat, b0.features)
    g2 = HeteroGraph(retyped, g.edges, node_type_vocab=g.node_types,
                     edge_type_vocab=g.edge_types)
    assert not np.allclose(forward(g2, params).data, base)


def test_forward_determinism_bitwise():
    g = five_node_graph(num_feat=D)
    params = small_params(g, num_feat=D)
    a = forward(g, params).data
    b = forward(g, params).data
    assert np.array_equal(a, b)


def test_forward_rejects_mismatched_vocab():
    g = five_node_graph(num_feat=D)
    other = line_graph(3, num_feat=D)
    params = small_params(g, num_feat=D)
    bad_meta = dict(params.meta, node_types=["bus"])
    with pytest.raises(ConfigError, match="node types"):
        forward(g, ParamSet(dict(params.items()), meta=bad_meta))
    assert forward(other, params).shape == (3, 6)  # same vocab works


def test_forward_gradient_matches_finite_differences():
    g = five_node_graph(num_feat=4, seed=30)
    params = init_hgt_params(g, feature_count=4, hidden_dim=4, num_heads=2,
                             num_layers=2, seed=31)
    x0 = g.index.features

    def loss_fn(x):
        feats = Tensor(x, requires_grad=True)
        with GradTape() as tape:
            out = forward(g, params, features=feats)
            loss = sum_all(out)
        return loss.item()

    feats = Tensor(x0, requires_grad=True)
    with GradTape() as tape:
        out = forward(g, params, features=feats)
        loss = sum_all(out)
    grads = backward(loss, tape)
    fd = oracles.finite_difference_gradient(loss_fn, [x0])[0]
    assert oracles.relative_error(grads[feats], fd) < 1e-6


def test_hgt_layout_validation():
    with pytest.raises(ConfigError):
        hgt_layout(("bus",), ("primary",), 4, hidden_dim=6, num_heads=4)
    with pytest.raises(ConfigError):
        hgt_layout(("bus",), ("primary",), 4, num_heads=0)
    with pytest.raises(ConfigError):
        hgt_layout(("bus",), ("primary",), 4, num_layers=-1)


# ------------------------------------------------------------------ baselines

def test_mlp_ignores_edges():
    g = five_node_graph(num_feat=D)
    params = init_mlp_params(g, hidden_dim=D, seed=2)
    base = forward_mlp(g, params).data
    reordered = HeteroGraph(list(g.nodes.values()), list(reversed(g.edges)),
                            node_type_vocab=g.node_types,
                            edge_type_vocab=g.edge_types)
    assert np.array_equal(forward_mlp(reordered, params).data, base)
    no_edges = HeteroGraph(list(g.nodes.values()), [],
                           node_type_vocab=g.node_types,
                           edge_type_vocab=g.edge_types)
    assert np.array_equal(forward_mlp(no_edges, params).data, base)


def test_mlp_zero_weights_zero_output():
    g = five_node_graph(num_feat=D)
    params = init_mlp_params(g, hidden_dim=D, seed=2)
    params = params.with_values({k: np.zeros_like(v)
                                 for k, v in params.copy_arrays().items()})
    assert np.array_equal(forward_mlp(g, params).data, np.zeros((5, 6)))


def test_mlp_matches_dense_oracle():
    g = five_node_graph(num_feat=D, seed=3)
    params = init_mlp_params(g, hidden_dim=D, seed=4)
    got = forward_mlp(g, params).data
    expected = oracles.mlp_forward_reference(g.index.features, params)
    assert np.max(np.abs(got - expected)) < 1e-12


def test_gcn_isolated_node_equals_mlp():
    rng = np.random.default_rng(5)
    nodes = [
        NodeRecord("iso", "bus", 0.0, 0.0,
                   tuple(float(v) for v in rng.uniform(0, 1, D))),
        NodeRecord("a", "tube", 0.1, 0.0,
                   tuple(float(v) for v in rng.uniform(0, 1, D))),
        NodeRecord("b", "bike", 0.2, 0.0,
                   tuple(float(v) for v in rng.uniform(0, 1, D))),
    ]
    edges = [EdgeRecord("a", "b", "primary", 0)]
    g = HeteroGraph(nodes, edges, node_type_vocab=("bike", "bus", "tube"))
    params = init_mlp_params(g, hidden_dim=D, seed=6)
    gcn = forward_gcn(g, params).data
    mlp = forward_mlp(g, params).data
    assert np.allclose(gcn[0], mlp[0], atol=1e-12)   # isolated: self-loop only
    assert not np.allclose(gcn[1], mlp[1])


def test_gcn_symmetric_pair_identical_outputs():
    rng = np.random.default_rng(6)
    shared = tuple(float(v) for v in rng.uniform(0, 1, D))
    nodes = [NodeRecord("a", "bus", 0.0, 0.0, shared),
             NodeRecord("b", "bus", 0.1, 0.0, shared)]
    edges = [EdgeRecord("a", "b", "primary", 0)]
    g = HeteroGraph(nodes, edges, node_type_vocab=("bike", "bus", "tube"))
    params = init_mlp_params(g, hidden_dim=D, seed=7)
    out = forward_gcn(g, params).data
    assert np.allclose(out[0], out[1], atol=1e-12)


def test_gcn_matches_dense_oracle():
    g = five_node_graph(num_feat=D, seed=8)
    extra = NodeRecord("x", "tube", -0.2, 51.4,
                       tuple(float(v) for v in np.random.default_rng(9).uniform(0, 1, D)))
    g = HeteroGraph(list(g.nodes.values()) + [extra],
                    list(g.edges) + [EdgeRecord("x", "b1", "tertiary", 2)],
                    node_type_vocab=g.node_types, edge_type_vocab=g.edge_types)
    params = init_mlp_params(g, hidden_dim=D, seed=10)
    got = forward_gcn(g, params).data
    expected = oracles.gcn_forward_reference(g, params)
    assert np.max(np.abs(got - expected)) < 1e-12


def test_normalized_adjacency_rows():
    g = line_graph(3, num_feat=D)
    a_hat = normalized_adjacency(g)
    assert a_hat.shape == (3, 3)
    assert np.allclose(a_hat, a_hat.T, atol=1e-15)
    # degrees: n0=2 (self+n1), n1=3, n2=2
    assert a_hat[0, 0] == pytest.approx(1 / 2)
    assert a_hat[0, 1] == pytest.approx(1 / math.sqrt(6))
    assert a_hat[0, 2] == 0.0
