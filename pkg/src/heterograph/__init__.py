"""Heterogeneous-graph learning toolkit for land-use inference.

Trains a typed graph transformer on multi-modal mobility graphs, evaluates
it against MLP and GCN baselines, explains predictions with gradient-based
feature attribution, and searches 1-hop subgraphs for counterfactual
examples.
"""

from .attribution import (
    AttributionScores,
    aggregate,
    grad_input,
    heatmap_matrix,
    integrated_gradients,
    time_bin_labels,
    write_heatmap_csv,
)
from .autodiff import GradTape, Tensor, backward
from .counterfactual import (
    AggregatedScores,
    DissimilarityBreakdown,
    MixedSet,
    SubgraphView,
    aggregate_cf_scores,
    counterfactual_report,
    dissimilarity,
    find_counterfactual,
    mixed_set,
    one_hop_subgraph,
    shannon_diversity,
    write_ce_report,
    write_cf_table_csv,
)
from .errors import (
    AblationError,
    ConfigError,
    ContractError,
    DiversityError,
    HeterographError,
    IngestionError,
    LabelingError,
    SearchError,
    ShapeError,
    TrainingError,
)
from .graph import (
    EdgeRecord,
    GraphSchema,
    HeteroGraph,
    LandUseTargets,
    NodeRecord,
    SplitMasks,
    filter_graph,
    label_by_catchment,
    load_graph,
    load_pois,
    normalize_features,
    split,
    write_graph,
)
from .models import (
    GCNRegressor,
    HGTRegressor,
    MLPRegressor,
    ParamSet,
    load_params,
    save_params,
)
from .synth import (
    Archetype,
    CitySpec,
    GeneratedCity,
    default_archetypes,
    generate,
)
from .training import (
    ABLATION_SCENARIOS,
    MetricsReport,
    TrainConfig,
    ablate,
    evaluate,
    export_residuals,
    train,
    write_metrics_csv,
    write_metrics_json,
)

__version__ = "0.1.0"

__all__ = [
    "GradTape",
    "Tensor",
    "backward",
    "HeterographError",
    "ShapeError",
    "ContractError",
    "IngestionError",
    "LabelingError",
    "ConfigError",
    "TrainingError",
    "AblationError",
    "SearchError",
    "DiversityError",
    "HeteroGraph",
    "NodeRecord",
    "EdgeRecord",
    "GraphSchema",
    "LandUseTargets",
    "SplitMasks",
    "load_graph",
    "write_graph",
    "load_pois",
    "label_by_catchment",
    "normalize_features",
    "filter_graph",
    "split",
    "ParamSet",
    "save_params",
    "load_params",
    "HGTRegressor",
    "MLPRegressor",
    "GCNRegressor",
    "TrainConfig",
    "MetricsReport",
    "train",
    "evaluate",
    "ablate",
    "export_residuals",
    "write_metrics_csv",
    "write_metrics_json",
    "ABLATION_SCENARIOS",
    "CitySpec",
    "Archetype",
    "GeneratedCity",
    "default_archetypes",
    "generate",
    "AttributionScores",
    "grad_input",
    "integrated_gradients",
    "aggregate",
    "heatmap_matrix",
    "time_bin_labels",
    "write_heatmap_csv",
    "SubgraphView",
    "DissimilarityBreakdown",
    "MixedSet",
    "AggregatedScores",
    "one_hop_subgraph",
    "shannon_diversity",
    "mixed_set",
    "dissimilarity",
    "find_counterfactual",
    "counterfactual_report",
    "aggregate_cf_scores",
    "write_ce_report",
    "write_cf_table_csv",
    "__version__",
]
