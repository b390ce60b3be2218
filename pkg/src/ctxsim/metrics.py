"""Retrieval metrics and pairwise-distance diagnostics.

The query set doubles as the gallery; each query's own entry is removed
from its ranking. Distance ties are broken by ascending gallery index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass
class RetrievalResult:
    rankings: np.ndarray  # (n_queries, n_gallery - 1) gallery indices, nearest first
    query_labels: np.ndarray
    gallery_labels: np.ndarray

    def relevance(self) -> np.ndarray:
        return self.gallery_labels[self.rankings] == self.query_labels[:, None]


@dataclass
class DistanceStats:
    mean: float
    counts: np.ndarray
    edges: np.ndarray


def _sqdist(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return (diff * diff).sum(axis=2)


def rank_gallery(embeddings, labels) -> RetrievalResult:
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    n = x.shape[0]
    if n < 2:
        raise ContractError("need at least two samples to rank")
    d = _sqdist(x)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")[:, : n - 1]
    return RetrievalResult(order, labels, labels)


def recall_at_k(embeddings, labels, ks=(1,)) -> dict:
    """Fraction of queries with a same-label sample among their k nearest."""
    res = rank_gallery(embeddings, labels)
    _require_positives(res)
    rel = res.relevance()
    first_hit = np.where(rel.any(axis=1), rel.argmax(axis=1), rel.shape[1])
    return {int(k): float((first_hit < k).mean()) for k in ks}


def _require_positives(res: RetrievalResult) -> np.ndarray:
    n_pos = res.relevance().sum(axis=1)
    if np.any(n_pos == 0):
        raise ContractError("every label needs at least two samples")
    return n_pos


def _average_precision(res: RetrievalResult, truncate: bool) -> float:
    rel = res.relevance().astype(np.float64)
    n_pos = _require_positives(res)
    ranks = np.arange(1, rel.shape[1] + 1)
    prec = np.cumsum(rel, axis=1) / ranks
    hits = prec * rel
    if truncate:
        hits = np.where(ranks[None, :] <= n_pos[:, None], hits, 0.0)
    return float((hits.sum(axis=1) / n_pos).mean())


def mean_average_precision(rankings: RetrievalResult) -> float:
    return _average_precision(rankings, truncate=False)


def map_at_r(rankings: RetrievalResult) -> float:
    """mAP truncated at R = number of positives for each query."""
    return _average_precision(rankings, truncate=True)


def pairwise_distance_stats(embeddings, bins: int = 20) -> DistanceStats:
    """Mean Euclidean distance over distinct pairs plus a histogram on [0, 2]."""
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ContractError("need at least two points")
    iu = np.triu_indices(n, k=1)
    dist = np.sqrt(np.maximum(_sqdist(x)[iu], 0.0))
    counts, edges = np.histogram(np.clip(dist, 0.0, 2.0), bins=bins, range=(0.0, 2.0))
    return DistanceStats(float(dist.mean()), counts, edges)


def evaluate(embeddings, labels, ks=(1, 2, 4, 8)) -> dict:
    res = rank_gallery(embeddings, labels)
    out = {f"R@{k}": v for k, v in recall_at_k(embeddings, labels, ks).items()}
    out["mAP"] = mean_average_precision(res)
    out["mAP@R"] = map_at_r(res)
    out["mean_pairwise_distance"] = pairwise_distance_stats(embeddings).mean
    return out
