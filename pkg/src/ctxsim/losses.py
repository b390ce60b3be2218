"""Contrastive loss, similarity regularizer, and the combined objective.

The contextual term can be swapped for any of the ablation variants named
in :class:`Variant`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .similarity import (
    Batch,
    contextual_loss,
    intersection_step,
    neighbor_indicator,
    pairwise_cosine,
    pairwise_sqdist,
    query_expansion_step,
    sigmoid_theta,
    ste_theta,
)


class Variant(str, Enum):
    FULL = "full"
    L1_ONLY = "l1_only"  # step 1 only
    L1_SIGMOID = "l1_sigmoid"  # step 1 only, sigmoid heaviside
    L2_ONLY = "l2_only"  # steps 1-2, no query expansion
    SKIP_STEP2 = "skip_step2"  # raw indicator fed to query expansion
    MIN_AND = "min_and"
    SIGMOID_ALL = "sigmoid_all"
    M_PLUS_ONLY = "m_plus_only"
    NO_SG_EQ10 = "no_sg_eq10"  # overlap denominators left attached
    DETACH_R = "detach_R"  # reciprocal-set size detached


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.4
    gamma: float = 0.1
    delta_plus: float = 0.75
    delta_minus: float = 0.6
    s_tilde: float = 0.25
    alpha: float = 10.0
    epsilon: float = 0.05
    k: int = 4
    tau: float = 0.01
    variant: Variant = Variant.FULL
    empty_complement: str = "zero"

    def __post_init__(self):
        try:
            object.__setattr__(self, "variant", Variant(self.variant))
        except ValueError:
            raise ConfigError(f"unknown loss variant {self.variant!r}") from None
        if self.empty_complement not in ("raise", "zero", "one"):
            raise ConfigError(f"unknown empty_complement policy {self.empty_complement!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 <= self.gamma <= 1.0 - self.lam + 1e-12:
            raise ConfigError(f"gamma must lie in [0, 1 - lambda], got {self.gamma}")
        for name in ("delta_plus", "delta_minus", "s_tilde"):
            v = getattr(self, name)
            if not -1.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [-1, 1], got {v}")
        if not self.delta_minus < self.delta_plus:
            raise ConfigError("delta_minus must be smaller than delta_plus")
        if self.alpha <= 0 or self.tau <= 0:
            raise ConfigError("alpha and tau must be positive")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if int(self.k) != self.k or self.k < 1:
            raise ConfigError(f"k must be a positive integer, got {self.k}")

    @classmethod
    def contrastive_baseline(cls, **overrides) -> "LossConfig":
        """Contrastive-only preset with the wider positive margin."""
        base = dict(lam=0.0, gamma=0.0, delta_plus=0.9, delta_minus=0.6)
        base.update(overrides)
        return cls(**base)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


@dataclass
class LossBreakdown:
    total: Tensor
    context: Tensor
    contrast: Tensor
    reg: Tensor

    def floats(self) -> dict:
        return {
            "loss_total": self.total.item(),
            "l_context": self.context.item(),
            "l_contrast": self.contrast.item(),
            "l_reg": self.reg.item(),
        }


def contrastive_loss(S, Y, delta_plus: float, delta_minus: float) -> Tensor:
    """Hinge on positive and negative pairs, each averaged over its strict violators.

    Diagonal pairs are excluded. A term with no violators is exactly zero.
    """
    S = S if isinstance(S, Tensor) else Tensor(S)
    Y = np.asarray(Y, dtype=np.float64)
    n = Y.shape[0]
    off = 1.0 - np.eye(n)
    pos_mask = Y * off
    neg_mask = (1.0 - Y) * off

    pos_gap = ad.sub(delta_plus, S)
    neg_gap = ad.sub(S, delta_minus)
    n_pos = int(((pos_gap.values > 0) & (pos_mask > 0)).sum())
    n_neg = int(((neg_gap.values > 0) & (neg_mask > 0)).sum())

    pos = ad.sum(ad.mul(ad.hinge_pos(pos_gap), pos_mask))
    neg = ad.sum(ad.mul(ad.hinge_pos(neg_gap), neg_mask))
    # with no violators the hinge sum is already 0, so dividing by 1 keeps it 0
    return ad.add(ad.scalar_mul(pos, 1.0 / max(n_pos, 1)), ad.scalar_mul(neg, 1.0 / max(n_neg, 1)))


def similarity_regularizer(S, s_tilde: float) -> Tensor:
    """``(s_tilde - mean(S))**2`` with the mean over all n**2 entries."""
    return ad.square(ad.sub(s_tilde, ad.mean(S)))


def _step1(D: Tensor, cfg: LossConfig, sigmoid: bool):
    theta = sigmoid_theta(cfg.tau) if sigmoid else ste_theta(cfg.alpha)
    return theta, neighbor_indicator(D, cfg.k, cfg.epsilon, theta)


def loss_l1(batch: Batch, cfg: LossConfig, D: Tensor = None, sigmoid: bool = False) -> Tensor:
    """Squared error between labels and the raw neighborhood indicator."""
    if D is None:
        D = pairwise_sqdist(pairwise_cosine(batch.F))
    _, ind = _step1(D, cfg, sigmoid)
    return contextual_loss(ind.mask, batch.Y)


def loss_l2(batch: Batch, cfg: LossConfig, D: Tensor = None) -> Tensor:
    """Squared error against the overlap matrix, skipping query expansion."""
    if D is None:
        D = pairwise_sqdist(pairwise_cosine(batch.F))
    _, ind = _step1(D, cfg, False)
    return contextual_loss(intersection_step(ind, empty_complement=cfg.empty_complement), batch.Y)


def context_term(batch: Batch, cfg: LossConfig, D: Tensor = None) -> Tensor:
    """The contextual loss under ``cfg.variant``."""
    if D is None:
        D = pairwise_sqdist(pairwise_cosine(batch.F))
    v = cfg.variant
    if v is Variant.L1_ONLY:
        return loss_l1(batch, cfg, D)
    if v is Variant.L1_SIGMOID:
        return loss_l1(batch, cfg, D, sigmoid=True)
    if v is Variant.L2_ONLY:
        return loss_l2(batch, cfg, D)

    theta, ind = _step1(D, cfg, sigmoid=v is Variant.SIGMOID_ALL)
    logical_and = "min" if v is Variant.MIN_AND else "mul"
    if v is Variant.SKIP_STEP2:
        W_tilde = ind.mask
    else:
        W_tilde = intersection_step(
            ind,
            m_minus=v is not Variant.M_PLUS_ONLY,
            logical_and=logical_and,
            detach_denominators=v is not Variant.NO_SG_EQ10,
            empty_complement=cfg.empty_complement,
        )
    W = query_expansion_step(
        W_tilde,
        D,
        cfg.k,
        cfg.epsilon,
        theta,
        detach_R=v is Variant.DETACH_R,
        logical_and=logical_and,
        provenance=v.value,
    )
    return contextual_loss(W, batch.Y)


def combined_loss(batch: Batch, cfg: LossConfig) -> LossBreakdown:
    """``lam * context + gamma * reg + (1 - lam - gamma) * contrast``.

    Every component is computed even when its weight is zero so curves of
    the contextual loss can be logged for any mix.
    """
    S = pairwise_cosine(batch.F)
    D = pairwise_sqdist(S)
    Y = batch.Y
    context = context_term(batch, cfg, D)
    contrast = contrastive_loss(S, Y, cfg.delta_plus, cfg.delta_minus)
    reg = similarity_regularizer(S, cfg.s_tilde)
    w_contrast = 1.0 - cfg.lam - cfg.gamma
    total = ad.add(
        ad.add(ad.scalar_mul(context, cfg.lam), ad.scalar_mul(reg, cfg.gamma)),
        ad.scalar_mul(contrast, w_contrast),
    )
    return LossBreakdown(total=total, context=context, contrast=contrast, reg=reg)
