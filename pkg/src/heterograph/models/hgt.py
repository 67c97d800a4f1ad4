"""Typed graph transformer for node-level regression.

Each layer turns source representations into per-edge messages (source-type
then edge-type specific linear maps, one slice per head), weighs them by
attention normalized over every target's incoming edges, aggregates with a
target-type specific linear map plus a residual, and applies ReLU.  A linear
head maps the final representation to the six land-use intensities.

All functions are pure: they read the graph and a :class:`ParamSet` and emit
tensor operations onto the active gradient tape (if any).
"""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import (
    Tensor,
    add,
    concat_cols,
    gather_rows,
    matmul,
    mul,
    ones,
    relu,
    scale,
    scatter_sum_rows,
    segment_softmax,
)
from ..errors import ConfigError, ContractError, ShapeError
from .estimator import GraphRegressorBase
from .params import ParamSet

OUT_CATEGORIES = 6


def hgt_layout(node_types, edge_types, feature_count, hidden_dim=128, num_heads=2,
               num_layers=2, out_dim=OUT_CATEGORIES):
    """Ordered parameter layout for :class:`ParamSet.build`.

    Per node type: a projection (F, d).  Per layer: per head and source type
    a message transform (d, d/heads); per edge type one projection
    (d/heads, d/heads) shared by all heads; per head query/key maps
    (d, d/heads) and a bilinear attention core (d/heads, d/heads); per
    target type an aggregation map (d, d).  Finally the output head (d, C)
    with the only bias in the model.
    """
    if num_heads < 1:
        raise ConfigError(f"num_heads must be >= 1, got {num_heads}")
    if num_layers < 0:
        raise ConfigError(f"num_layers must be >= 0, got {num_layers}")
    if hidden_dim % num_heads != 0:
        raise ConfigError(
            f"hidden_dim {hidden_dim} is not divisible by num_heads {num_heads}"
        )
    dh = hidden_dim // num_heads
    layout = []
    for ntype in node_types:
        layout.append((f"proj/{ntype}", feature_count, hidden_dim, "uniform"))
    for layer in range(1, num_layers + 1):
        for h in range(num_heads):
            for ntype in node_types:
                layout.append((f"l{layer}/h{h}/msg_src/{ntype}", hidden_dim, dh, "uniform"))
        for etype in edge_types:
            layout.append((f"l{layer}/msg_edge/{etype}", dh, dh, "uniform"))
        for h in range(num_heads):
            layout.append((f"l{layer}/h{h}/attn_q", hidden_dim, dh, "uniform"))
            layout.append((f"l{layer}/h{h}/attn_k", hidden_dim, dh, "uniform"))
            layout.append((f"l{layer}/h{h}/attn_a", dh, dh, "uniform"))
        for ntype in node_types:
            layout.append((f"l{layer}/agg/{ntype}", hidden_dim, hidden_dim, "uniform"))
    layout.append(("head/w", hidden_dim, out_dim, "uniform"))
    layout.append(("head/b", 1, out_dim, "zeros"))
    return layout


def init_hgt_params(graph, feature_count=None, hidden_dim=128, num_heads=2,
                    num_layers=2, out_dim=OUT_CATEGORIES, seed=0):
    """Seeded ParamSet matching the graph's type vocabularies."""
    feature_count = graph.feature_count if feature_count is None else feature_count
    layout = hgt_layout(graph.node_types, graph.edge_types, feature_count,
                        hidden_dim, num_heads, num_layers, out_dim)
    meta = {
        "model": "hgt",
        "node_types": list(graph.node_types),
        "edge_types": list(graph.edge_types),
        "feature_count": feature_count,
        "hidden_dim": hidden_dim,
        "num_heads": num_heads,
        "num_layers": num_layers,
        "out_dim": out_dim,
        "seed": seed,
    }
    return ParamSet.build(layout, seed=seed, meta=meta)


def _require(params, key, role, type_name):
    if key not in params:
        raise ConfigError(f"missing {role} matrix for type {type_name!r}")
    return params[key]


def _typed_map(x, row_types, type_names, key_for, params, role):
    """Apply a per-type matrix to the rows of ``x`` grouped by ``row_types``.

    Groups partition the rows, so scattering each transformed group back to
    the full row count and summing reassembles the result.
    """
    parts = []
    for k, tname in enumerate(type_names):
        pos = np.flatnonzero(row_types == k)
        if pos.size == 0:
            continue
        w = _require(params, key_for(tname), role, tname)
        parts.append(scatter_sum_rows(matmul(gather_rows(x, pos), w), pos, x.rows))
    out = parts[0]
    for p in parts[1:]:
        out = add(out, p)
    return out


def _check_meta(graph, params):
    meta = params.meta
    if not meta:
        raise ContractError("parameter set carries no model metadata")
    if tuple(meta.get("node_types", ())) != graph.node_types:
        raise ConfigError(
            f"parameters were built for node types {meta.get('node_types')}, "
            f"graph has {list(graph.node_types)}"
        )
    if tuple(meta.get("edge_types", ())) != graph.edge_types:
        raise ConfigError(
            f"parameters were built for edge types {meta.get('edge_types')}, "
            f"graph has {list(graph.edge_types)}"
        )
    return meta


def project(graph, params, features=None):
    """Initial representations: each node's features through its type's map."""
    idx = graph.index
    x = features if features is not None else Tensor(idx.features)
    if x.cols != params.meta.get("feature_count", x.cols):
        raise ShapeError(
            f"features have {x.cols} columns, parameters expect "
            f"{params.meta['feature_count']}"
        )
    return _typed_map(x, idx.node_type, graph.node_types,
                      lambda t: f"proj/{t}", params, "projection")


def edge_messages(graph, h_prev, params, layer):
    """Per-edge messages: concat over heads of source-type then edge-type maps."""
    idx = graph.index
    num_heads = params.meta["num_heads"]
    src_types = idx.node_type[idx.src]
    src_h = gather_rows(h_prev, idx.src)
    head_parts = []
    for h in range(num_heads):
        mh = _typed_map(src_h, src_types, graph.node_types,
                        lambda t: f"l{layer}/h{h}/msg_src/{t}", params, "message-source")
        me = _typed_map(mh, idx.edge_type, graph.edge_types,
                        lambda t: f"l{layer}/msg_edge/{t}", params, "message-edge")
        head_parts.append(me)
    return concat_cols(*head_parts)


def edge_attention(graph, h_prev, params, layer, return_per_head=False):
    """Attention weight per edge, normalized over each target's incoming edges.

    Per head the raw score is a bilinear form between the source's query and
    the target's key, scaled by 1/sqrt(key dimension).  Scores are
    softmax-normalized per head across each target's incoming-edge set, then
    averaged across heads into a single scalar per edge.
    """
    idx = graph.index
    num_heads = params.meta["num_heads"]
    dh = params.meta["hidden_dim"] // num_heads
    inv_sqrt_xi = 1.0 / math.sqrt(dh)
    col = ones(dh, 1)
    per_head = []
    for h in range(num_heads):
        q = matmul(h_prev, params[f"l{layer}/h{h}/attn_q"])
        k = matmul(h_prev, params[f"l{layer}/h{h}/attn_k"])
        qe = gather_rows(q, idx.src)
        ke = gather_rows(k, idx.dst)
        qa = matmul(qe, params[f"l{layer}/h{h}/attn_a"])
        score = scale(matmul(mul(qa, ke), col), inv_sqrt_xi)
        per_head.append(segment_softmax(score, idx.dst, graph.num_nodes))
    if return_per_head:
        return per_head
    total = per_head[0]
    for a in per_head[1:]:
        total = add(total, a)
    return scale(total, 1.0 / num_heads)


def aggregate(graph, h_prev, messages, alpha, params, layer):
    """Pre-activation layer output: typed map of the attention-weighted
    message sum per target, plus the residual."""
    idx = graph.index
    d = params.meta["hidden_dim"]
    weighted = mul(messages, matmul(alpha, ones(1, d)))
    summed = scatter_sum_rows(weighted, idx.dst, graph.num_nodes)
    mapped = _typed_map(summed, idx.node_type, graph.node_types,
                        lambda t: f"l{layer}/agg/{t}", params, "aggregation")
    return add(mapped, h_prev)


def forward(graph, params, features=None):
    """Full model: project, run every layer with ReLU, apply the linear head."""
    meta = _check_meta(graph, params)
    h = project(graph, params, features=features)
    for layer in range(1, meta["num_layers"] + 1):
        if graph.num_edges == 0:
            h = relu(h)
            continue
        m = edge_messages(graph, h, params, layer)
        a = edge_attention(graph, h, params, layer)
        h = relu(aggregate(graph, h, m, a, params, layer))
    return add(matmul(h, params["head/w"]), params["head/b"])


class HGTRegressor(GraphRegressorBase):
    """Estimator wrapper around :func:`forward` with AdamW training.

    Follows the fit/predict convention: ``fit(graph, targets, masks)`` trains
    on the train mask, tracks the best validation epoch, and freezes those
    parameters; ``predict(graph)`` returns an (N, 6) array.
    """

    model_name = "hgt"

    def __init__(self, hidden_dim=128, num_heads=2, num_layers=2, epochs=200,
                 learning_rate=0.002, weight_decay=0.01, beta1=0.9, beta2=0.999,
                 eps=1e-8, seed=0):
        self.hidden_dim = hidden_dim
        self.num_heads = num_heads
        self.num_layers = num_layers
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.seed = seed

    def _init_params(self, graph):
        return init_hgt_params(
            graph,
            hidden_dim=self.hidden_dim,
            num_heads=self.num_heads,
            num_layers=self.num_layers,
            seed=self.seed,
        )

    def _forward(self, graph, params, features=None):
        return forward(graph, params, features=features)
