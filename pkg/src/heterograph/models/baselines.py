"""Baseline regressors: a feature-only MLP and a type-blind graph convolution."""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, add, matmul, relu
from ..errors import ShapeError
from .estimator import GraphRegressorBase
from .hgt import OUT_CATEGORIES
from .params import ParamSet


def mlp_layout(feature_count, hidden_dim=128, out_dim=OUT_CATEGORIES):
    return [
        ("fc1/w", feature_count, hidden_dim, "uniform"),
        ("fc2/w", hidden_dim, hidden_dim, "uniform"),
        ("head/w", hidden_dim, out_dim, "uniform"),
        ("head/b", 1, out_dim, "zeros"),
    ]


def init_mlp_params(graph, hidden_dim=128, out_dim=OUT_CATEGORIES, seed=0):
    meta = {
        "model": "mlp",
        "feature_count": graph.feature_count,
        "hidden_dim": hidden_dim,
        "out_dim": out_dim,
        "seed": seed,
    }
    return ParamSet.build(mlp_layout(graph.feature_count, hidden_dim, out_dim),
                          seed=seed, meta=meta)


def _check_features(x, params):
    expected = params.meta.get("feature_count", x.cols)
    if x.cols != expected:
        raise ShapeError(f"features have {x.cols} columns, parameters expect {expected}")
    return x


def forward_mlp(graph, params, features=None):
    """Two ReLU hidden layers on raw node features; edges are ignored."""
    x = features if features is not None else Tensor(graph.index.features)
    _check_features(x, params)
    h = relu(matmul(x, params["fc1/w"]))
    h = relu(matmul(h, params["fc2/w"]))
    return add(matmul(h, params["head/w"]), params["head/b"])


def normalized_adjacency(graph):
    """Dense symmetric-normalized adjacency with self-loops.

    Edges are symmetrized and made binary; every diagonal entry is forced to
    one, so multiplicities and explicit self-edges do not change the matrix.
    """
    n = graph.num_nodes
    idx = graph.index
    a = np.zeros((n, n))
    a[idx.src, idx.dst] = 1.0
    a[idx.dst, idx.src] = 1.0
    np.fill_diagonal(a, 1.0)
    inv_sqrt_deg = 1.0 / np.sqrt(a.sum(axis=1))
    return a * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]


def forward_gcn(graph, params, features=None):
    """Two symmetric-normalized convolution layers, blind to node/edge types."""
    x = features if features is not None else Tensor(graph.index.features)
    _check_features(x, params)
    adj = Tensor(normalized_adjacency(graph))
    h = relu(matmul(adj, matmul(x, params["fc1/w"])))
    h = relu(matmul(adj, matmul(h, params["fc2/w"])))
    return add(matmul(h, params["head/w"]), params["head/b"])


class MLPRegressor(GraphRegressorBase):
    """Feature-only baseline: shares the estimator convention, ignores edges."""

    model_name = "mlp"

    def __init__(self, hidden_dim=128, epochs=200, learning_rate=0.002,
                 weight_decay=0.01, beta1=0.9, beta2=0.999, eps=1e-8, seed=0):
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.seed = seed

    def _init_params(self, graph):
        return init_mlp_params(graph, hidden_dim=self.hidden_dim, seed=self.seed)

    def _forward(self, graph, params, features=None):
        return forward_mlp(graph, params, features=features)


class GCNRegressor(GraphRegressorBase):
    """Homogeneous graph-convolution baseline over the symmetrized edge set."""

    model_name = "gcn"

    def __init__(self, hidden_dim=128, epochs=200, learning_rate=0.002,
                 weight_decay=0.01, beta1=0.9, beta2=0.999, eps=1e-8, seed=0):
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.seed = seed

    def _init_params(self, graph):
        params = init_mlp_params(graph, hidden_dim=self.hidden_dim, seed=self.seed)
        params.meta["model"] = "gcn"
        return params

    def _forward(self, graph, params, features=None):
        return forward_gcn(graph, params, features=features)
