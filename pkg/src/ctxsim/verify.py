"""Verification suites behind the ``oracle-check`` and ``gradcheck`` commands."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .config import ExperimentConfig
from .data import gen_concentric_circles
from .gradcheck import check, negative_pair_sign_table, numerical_grad, relative_error, ste_gain
from .losses import contrastive_loss, similarity_regularizer
from .model import MlpParams, embed, forward
from .similarity import (
    intersection_step,
    neighbor_indicator,
    neighborhoods,
    oracle_contextual_similarity,
    oracle_pipeline_forward,
    pairwise_cosine,
    pairwise_sqdist,
    query_expansion_step,
    same_label_matrix,
    ste_theta,
)


@dataclass
class CheckRow:
    name: str
    value: float
    tol: float
    passed: bool
    detail: str = ""


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _pipeline(F, k, eps, alpha, corrupt_denominator=False):
    theta = ste_theta(alpha)
    with Tape():
        D = pairwise_sqdist(pairwise_cosine(Tensor(F)))
        ind = neighbor_indicator(D, k, eps, theta)
        if corrupt_denominator:
            sizes = ind.row_sizes.copy()
            sizes[0, 0] += 1.0
            ind = replace(ind, row_sizes=sizes)
        W_tilde = intersection_step(ind)
        W = query_expansion_step(W_tilde, D, k, eps, theta).W
        return W.values, W_tilde.values, ind.row_sizes[:, 0]


def _tie_free(D: np.ndarray, tol: float = 1e-9) -> bool:
    off = D[~np.eye(D.shape[0], dtype=bool)].reshape(D.shape[0], -1)
    gaps = np.diff(np.sort(off, axis=1), axis=1)
    return bool(gaps.min() > tol)


def oracle_check(cfg: ExperimentConfig, corrupt_denominator: bool = False, dim: int = 4) -> dict:
    """Vectorized forward against the set-based oracle on random batches.

    Batch ``b`` has size ``oracle_sizes[b % S]`` and margin
    ``oracle_epsilons[(b // S) % E]``. Every epsilon=0 tie-free batch also
    checks the affine relation between the definitional overlap ratio and
    the pipeline's two-term overlap.
    """
    rng = np.random.default_rng(cfg.seed)
    sizes, epsilons, k = cfg.oracle_sizes, cfg.oracle_epsilons, cfg.k
    worst = {"dev": 0.0}
    affine = {"dev": 0.0, "batches": 0}
    start = time.perf_counter()
    for b in range(cfg.oracle_batches):
        n = sizes[b % len(sizes)]
        eps = epsilons[(b // len(sizes)) % len(epsilons)]
        F = _unit_rows(rng.normal(size=(n, dim)))
        S = F @ F.T
        W, W_tilde, row_sizes = _pipeline(F, k, eps, cfg.alpha, corrupt_denominator)
        dev = np.abs(W - oracle_pipeline_forward(S, k, eps))
        if dev.max() > worst["dev"]:
            i, j = np.unravel_index(int(dev.argmax()), dev.shape)
            worst = {"dev": float(dev.max()), "batch": b, "n": n, "epsilon": eps, "i": int(i), "j": int(j)}
        D = (2 - 2 * S) * (1 - np.eye(n))
        if eps == 0.0 and _tie_free(D) and np.all(row_sizes == k):
            w = oracle_contextual_similarity(S, k, 0.0, stage="intersection")
            mask = np.array([[float(j in s) for j in range(n)] for s in neighborhoods(S, k, 0.0)])
            predicted = mask * 0.5 * (w + (n - 2 * k + k * w) / (n - k))
            affine["dev"] = max(affine["dev"], float(np.abs(W_tilde - predicted).max()))
            affine["batches"] += 1
    elapsed = time.perf_counter() - start
    tol = cfg.oracle_tol
    return {
        "batches": cfg.oracle_batches,
        "max_abs_deviation": worst["dev"],
        "worst": worst,
        "affine_max_abs_deviation": affine["dev"],
        "affine_batches": affine["batches"],
        "tolerance": tol,
        "seconds": elapsed,
        "passed": bool(worst["dev"] <= tol and affine["dev"] <= tol and affine["batches"] > 0),
    }


def _mlp_relu_signature(widths, X):
    def sig(*arrays):
        p = MlpParams.init(widths)
        p.load_arrays(arrays)
        out, h = [], X
        for w, b in zip(p.weights[:-1], p.biases[:-1]):
            h = h @ w.values + b.values
            out.append((h > 0).tobytes())
            h = np.maximum(h, 0)
        return tuple(out)

    return sig


def gradcheck_suite(cfg: ExperimentConfig) -> tuple:
    """Returns ``(rows, sign_rows, context)``; every row must pass."""
    rng = np.random.default_rng(cfg.seed)
    h, tol = cfg.gradcheck_h, cfg.gradcheck_tol
    rows = []

    xs = np.concatenate([rng.normal(size=7), [0.0, -1e-12, 1e-12]])
    gain = ste_gain(cfg.alpha, xs)
    exact = bool(np.all(gain == cfg.alpha))
    rows.append(CheckRow("heaviside_ste backward/upstream", float(gain.max()), cfg.alpha, exact,
                         "exact equality to alpha"))

    F = _unit_rows(rng.normal(size=(8, 3)))
    Y = same_label_matrix(np.repeat(np.arange(4), 2))
    dp, dm = cfg.delta_plus, cfg.delta_minus

    def contrast(F):
        return contrastive_loss(ad.matmul(F, ad.transpose(F)), Y, dp, dm)

    def contrast_sig(F):
        S = F @ F.T
        return ((dp - S > 0).tobytes(), (S - dm > 0).tobytes())

    err = check(contrast, [F], h, contrast_sig)
    rows.append(CheckRow("contrastive loss finite differences", err, tol, bool(err < tol), "relative error"))

    S = rng.uniform(-1, 1, size=(6, 6))
    err = check(lambda s: similarity_regularizer(s, cfg.s_tilde), [S], h)
    rows.append(CheckRow("similarity regularizer finite differences", err, tol, bool(err < tol), "relative error"))

    widths = (2, 6, 6, 3)
    X = gen_concentric_circles(3, 4, 0.0, seed=cfg.seed).points
    proj = rng.normal(size=(X.shape[0], widths[-1]))
    arrays = MlpParams.init(widths, seed=cfg.seed).arrays()

    def mlp_value(*arrs):
        p = MlpParams.init(widths)
        p.load_arrays(arrs)
        return float((embed(p, X) * proj).sum())

    numeric, stable = numerical_grad(mlp_value, [a.copy() for a in arrays], h, _mlp_relu_signature(widths, X))
    p = MlpParams.init(widths)
    p.load_arrays(arrays)
    with Tape():
        ad.backward(ad.sum(ad.mul(forward(p, X), proj)))
    err = max(relative_error(t.grad[ok], n[ok]) for t, n, ok in zip(p.tensors(), numeric, stable))
    coverage = sum(ok.sum() for ok in stable) / sum(a.size for a in arrays)
    rows.append(CheckRow("MLP forward finite differences", err, tol, bool(err < tol and coverage > 0.5),
                         f"relative error; {coverage:.0%} of entries mask-stable"))

    sign_rows, ctx = negative_pair_sign_table(alpha=cfg.alpha, k=cfg.k)
    matched = sum(r.ok for r in sign_rows)
    rows.append(CheckRow("negative-pair gradient sign table", float(matched), float(len(sign_rows)),
                         bool(matched == len(sign_rows)), f"{matched}/{len(sign_rows)} entries match"))
    return rows, sign_rows, ctx
