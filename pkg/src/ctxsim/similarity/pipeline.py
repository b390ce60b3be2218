"""Vectorized, differentiable contextual similarity.

Step 1 builds a neighborhood indicator from squared distances with a
detached k-th-neighbor threshold. Step 2 counts shared neighbors and shared
non-neighbors with indicator matrix products. Step 3 averages over close
reciprocal neighbors and symmetrizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Callable

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import ContractError

ThetaFn = Callable[[Tensor], Tensor]

UNIT_NORM_TOL = 1e-9


def ste_theta(alpha: float) -> ThetaFn:
    """Exact heaviside with constant backward gain ``alpha``."""
    return partial(ad.heaviside_ste, alpha=alpha)


def sigmoid_theta(tau: float) -> ThetaFn:
    return partial(ad.heaviside_sigmoid, tau=tau)


@dataclass
class Batch:
    """Unit-norm embeddings of one mini-batch plus their labels."""

    F: Tensor
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape[0] != self.F.shape[0]:
            raise ContractError(
                f"{self.F.shape[0]} embeddings but {self.labels.shape[0]} labels"
            )
        _check_unit_rows(self.F.values)

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def d(self) -> int:
        return self.F.shape[1]

    @property
    def Y(self) -> np.ndarray:
        return same_label_matrix(self.labels)


@dataclass
class NeighborIndicator:
    mask: Tensor
    row_sizes: np.ndarray  # (n, 1), detached
    threshold: np.ndarray  # (n, 1), detached
    k_effective: int
    epsilon: float


@dataclass
class ContextualSimilarityMatrix:
    W: Tensor
    provenance: str


def same_label_matrix(labels) -> np.ndarray:
    labels = np.asarray(labels).reshape(-1)
    return (labels[:, None] == labels[None, :]).astype(np.float64)


def _check_unit_rows(F: np.ndarray) -> None:
    norms = np.sqrt((F * F).sum(axis=1))
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)
    if bad.size:
        raise ContractError(f"embedding rows {bad.tolist()} are not unit-norm")


def pairwise_cosine(F: Tensor) -> Tensor:
    _check_unit_rows(F.values)
    return ad.matmul(F, ad.transpose(F))


def pairwise_sqdist(S: Tensor) -> Tensor:
    """``D = 2 - 2S`` with the diagonal pinned to exactly zero."""
    n = S.shape[0]
    off = 1.0 - np.eye(n)
    return ad.mul(ad.sub(2.0, ad.scalar_mul(S, 2.0)), off)


def kth_threshold(D, k: int) -> np.ndarray:
    """Detached distance to each row's k-th closest sample, self ranked first.

    Remaining ranks are ordered by distance with ties going to the lower
    index. The returned value is the largest distance among the first ``k``
    ranked samples, which equals the k-th distance except when rounding
    pushes some off-diagonal distance below the self-distance.
    """
    values = D.values if isinstance(D, Tensor) else np.asarray(D, dtype=np.float64)
    n = values.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"k must lie in [1, {n}], got {k}")
    key = values.copy()
    np.fill_diagonal(key, -np.inf)
    order = np.argsort(key, axis=1, kind="stable")[:, :k]
    return np.take_along_axis(values, order, axis=1).max(axis=1, keepdims=True)


def neighbor_indicator(D: Tensor, k: int, epsilon: float, theta_fn: ThetaFn) -> NeighborIndicator:
    if epsilon < 0:
        raise ContractError(f"epsilon must be non-negative, got {epsilon}")
    t = kth_threshold(D, k)
    arg = ad.add(ad.add(ad.scalar_mul(D, -1.0), t), float(epsilon))
    mask = theta_fn(arg)
    return NeighborIndicator(
        mask=mask,
        row_sizes=mask.values.sum(axis=1, keepdims=True),
        threshold=t,
        k_effective=k,
        epsilon=float(epsilon),
    )


def intersection_step(
    ind: NeighborIndicator,
    m_minus: bool = True,
    logical_and: str = "mul",
    detach_denominators: bool = True,
    empty_complement: str = "raise",
) -> Tensor:
    """Preliminary contextual similarity from neighborhood overlaps.

    Each pair's overlap count is divided by the row sample's neighborhood
    size. ``logical_and="min"`` swaps every product-as-AND for a minimum.

    A row whose neighborhood is the whole batch has no non-neighbors, making
    its shared-non-neighbor ratio 0/0. ``empty_complement="raise"`` rejects
    it; ``"zero"`` takes the ratio as 0 (the all-zero count row over any
    positive denominator); ``"one"`` takes it as 1, since every one of the
    row's (zero) non-neighbors is trivially shared.
    """
    if empty_complement not in ("raise", "zero", "one"):
        raise ContractError(
            f"empty_complement must be 'raise', 'zero' or 'one', got {empty_complement!r}"
        )
    if logical_and not in ("mul", "min"):
        raise ContractError(f"logical_and must be 'mul' or 'min', got {logical_and!r}")
    N = ind.mask
    n = N.shape[0]
    if np.any(ind.row_sizes <= 0):
        raise ContractError("empty neighborhood row; the diagonal should always be a member")
    product = ad.matmul if logical_and == "mul" else ad.min_matmul
    both = ad.mul if logical_and == "mul" else ad.min_elementwise

    M_plus = product(N, ad.transpose(N))
    if detach_denominators:
        pos = ad.div_by_detached(M_plus, ind.row_sizes)
    else:
        pos = ad.div(M_plus, ad.sum(N, axis=1))
    if not m_minus:
        return both(pos, N)

    Nc = ad.sub(1.0, N)
    comp_sizes = n - ind.row_sizes
    empty = (comp_sizes <= 0).astype(np.float64)
    if empty_complement != "raise":
        comp_sizes = comp_sizes + empty
    elif np.any(empty):
        rows = np.flatnonzero(comp_sizes[:, 0] <= 0).tolist()
        raise ContractError(
            f"rows {rows} have every sample as a neighbor, so the complement set is "
            "empty; reduce epsilon below the batch's distance spread"
        )
    M_minus = product(Nc, ad.transpose(Nc))
    if detach_denominators:
        neg = ad.div_by_detached(M_minus, comp_sizes)
    else:
        sizes = ad.sum(Nc, axis=1)
        if empty_complement != "raise":
            sizes = ad.add(sizes, (sizes.values <= 0).astype(np.float64))
        neg = ad.div(M_minus, sizes)
    if empty_complement == "one" and np.any(empty):
        neg = ad.add(neg, empty)
    return both(ad.scalar_mul(ad.add(pos, neg), 0.5), N)


def query_expansion_step(
    W_tilde: Tensor,
    D: Tensor,
    k: int,
    epsilon: float,
    theta_fn: ThetaFn,
    detach_R: bool = False,
    logical_and: str = "mul",
    provenance: str = "full",
) -> ContextualSimilarityMatrix:
    """Average rows of ``W_tilde`` over reciprocal (k/2)-neighbors, then symmetrize.

    The reciprocal-set size stays attached to the graph unless ``detach_R``.
    """
    half = max(1, k // 2)
    near = neighbor_indicator(D, half, epsilon, theta_fn).mask
    both = ad.mul if logical_and == "mul" else ad.min_elementwise
    R = both(near, ad.transpose(near))
    sizes = ad.sum(R, axis=1)
    if np.any(sizes.values <= 0):
        raise ContractError("empty reciprocal neighborhood")
    summed = ad.matmul(R, W_tilde)
    W_hat = ad.div_by_detached(summed, sizes) if detach_R else ad.div(summed, sizes)
    W = ad.scalar_mul(ad.add(W_hat, ad.transpose(W_hat)), 0.5)
    return ContextualSimilarityMatrix(W=W, provenance=provenance)


def contextual_loss(W, Y) -> Tensor:
    """Squared error between ``W`` and ``Y`` off the diagonal, divided by n**2."""
    if isinstance(W, ContextualSimilarityMatrix):
        W = W.W
    W = W if isinstance(W, Tensor) else Tensor(W)
    Y = Y.values if isinstance(Y, Tensor) else np.asarray(Y, dtype=np.float64)
    if W.shape != Y.shape:
        raise ContractError(f"W shape {W.shape} != Y shape {Y.shape}")
    n = Y.shape[0]
    off = 1.0 - np.eye(n)
    err = ad.mul(ad.square(ad.sub(Y, W)), off)
    return ad.scalar_mul(ad.sum(err), 1.0 / (n * n))


def contextual_similarity(
    F: Tensor,
    k: int,
    epsilon: float,
    theta_fn: ThetaFn,
    m_minus: bool = True,
    logical_and: str = "mul",
    detach_denominators: bool = True,
    detach_R: bool = False,
    empty_complement: str = "raise",
) -> ContextualSimilarityMatrix:
    """All three steps from embeddings to the symmetric matrix ``W``."""
    D = pairwise_sqdist(pairwise_cosine(F))
    ind = neighbor_indicator(D, k, epsilon, theta_fn)
    W_tilde = intersection_step(ind, m_minus, logical_and, detach_denominators, empty_complement)
    return query_expansion_step(W_tilde, D, k, epsilon, theta_fn, detach_R, logical_and)
