"""Random-walk graph embeddings with adversarial-training regularization."""

__version__ = "0.1.0"

from .graph import Graph, build_graph, load_edge_list, load_labels, negative_distribution
from .walks import WalkConfig, generate_walks, build_pairs, attach_negatives, PairBatch
from .proximity import transition_matrix, shifted_ppmi, ScaleMatrix, scale_factors
from .training import (
    EmbeddingModel,
    TrainConfig,
    init_model,
    batch_loss,
    fast_gradient_perturbations,
    random_perturbations,
    build_neighbor_directions,
    interpretable_perturbations,
    train,
    save_embeddings,
    load_embeddings,
)
from .evaluation import (
    EvalSplit,
    split_link_prediction,
    residual_graph,
    hadamard_features,
    LinearClassifier,
    auc_link_prediction,
    node_classification,
    attack,
)

__all__ = [
    "Graph",
    "build_graph",
    "load_edge_list",
    "load_labels",
    "negative_distribution",
    "WalkConfig",
    "generate_walks",
    "build_pairs",
    "attach_negatives",
    "PairBatch",
    "transition_matrix",
    "shifted_ppmi",
    "ScaleMatrix",
    "scale_factors",
    "EmbeddingModel",
    "TrainConfig",
    "init_model",
    "batch_loss",
    "fast_gradient_perturbations",
    "random_perturbations",
    "build_neighbor_directions",
    "interpretable_perturbations",
    "train",
    "save_embeddings",
    "load_embeddings",
    "EvalSplit",
    "split_link_prediction",
    "residual_graph",
    "hadamard_features",
    "LinearClassifier",
    "auc_link_prediction",
    "node_classification",
    "attack",
]
