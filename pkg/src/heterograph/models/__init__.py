"""Model implementations: typed graph transformer and the two baselines."""

from .params import ParamSet, load_params, save_params
from .hgt import HGTRegressor, forward, hgt_layout
from .baselines import GCNRegressor, MLPRegressor

__all__ = [
    "ParamSet",
    "load_params",
    "save_params",
    "HGTRegressor",
    "MLPRegressor",
    "GCNRegressor",
    "forward",
    "hgt_layout",
]
