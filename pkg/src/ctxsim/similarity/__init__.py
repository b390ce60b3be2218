from .oracle import (
    neighborhoods,
    oracle_contextual_similarity,
    oracle_pipeline_forward,
    reciprocal_sets,
)
from .pipeline import (
    Batch,
    ContextualSimilarityMatrix,
    NeighborIndicator,
    contextual_loss,
    contextual_similarity,
    intersection_step,
    kth_threshold,
    neighbor_indicator,
    pairwise_cosine,
    pairwise_sqdist,
    query_expansion_step,
    same_label_matrix,
    sigmoid_theta,
    ste_theta,
)

__all__ = [
    "Batch",
    "ContextualSimilarityMatrix",
    "NeighborIndicator",
    "contextual_loss",
    "contextual_similarity",
    "intersection_step",
    "kth_threshold",
    "neighbor_indicator",
    "neighborhoods",
    "oracle_contextual_similarity",
    "oracle_pipeline_forward",
    "pairwise_cosine",
    "pairwise_sqdist",
    "query_expansion_step",
    "reciprocal_sets",
    "same_label_matrix",
    "sigmoid_theta",
    "ste_theta",
]
