"""Gradient verification: finite differences, straight-through gain, and the
sign pattern of the overlap-matrix gradient for a misranked negative pair."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .similarity import intersection_step, neighbor_indicator, ste_theta


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numerical_grad(fn, arrays: list, h: float = 1e-6, signature=None) -> tuple:
    """Central differences of scalar ``fn(*arrays)`` w.r.t. every entry.

    When ``signature`` is given it maps ``arrays`` to a hashable summary of
    the discrete decisions the function makes (masks, violator sets).
    Entries whose ``+-h`` perturbation changes that summary are reported in
    the returned boolean ``stable`` masks as False, and their numeric
    gradient is left as NaN.
    """
    base_sig = signature(*arrays) if signature else None
    grads, stable = [], []
    for a in arrays:
        g = np.full(a.shape, np.nan)
        ok = np.ones(a.shape, dtype=bool)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + h
            f_plus = fn(*arrays)
            sig_plus = signature(*arrays) if signature else None
            a[idx] = orig - h
            f_minus = fn(*arrays)
            sig_minus = signature(*arrays) if signature else None
            a[idx] = orig
            if signature and (sig_plus != base_sig or sig_minus != base_sig):
                ok[idx] = False
                continue
            g[idx] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
        stable.append(ok)
    return grads, stable


def analytic_grad(build, arrays: list) -> list:
    """Gradients of ``build(*tensors)`` (a 1x1 Tensor) via the tape."""
    with Tape():
        leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        ad.backward(build(*leaves))
    return [t.grad if t.grad is not None else np.zeros_like(t.values) for t in leaves]


def check(build, arrays: list, h: float = 1e-6, signature=None) -> float:
    """Worst relative error between tape and finite-difference gradients."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]

    def value(*xs):
        with Tape():
            return build(*[Tensor(x) for x in xs]).item()

    numeric, stable = numerical_grad(value, arrays, h, signature)
    analytic = analytic_grad(build, arrays)
    worst = 0.0
    for a, n, ok in zip(analytic, numeric, stable):
        worst = max(worst, relative_error(a[ok], n[ok]))
    return worst


def ste_gain(alpha: float, x) -> np.ndarray:
    """Backward/upstream ratio of the straight-through heaviside at ``x``."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    upstream = np.linspace(0.5, 2.0, x.shape[1]).reshape(1, -1)
    with Tape():
        t = Tensor(x, requires_grad=True)
        ad.backward(ad.sum(ad.mul(ad.heaviside_ste(t, alpha), upstream)))
    return t.grad / upstream


# ---------------------------------------------------------------------------
# sign analysis for a negative pair inside a neighborhood


def misranked_negative_batch(far_cluster: bool = True):
    """Points on the unit circle, labels of four samples each, no distance ties.

    Sample 3 (label 0) sits between its own cluster and sample 4 (label 1),
    closer to 4 than to sample 0, so 4 displaces 0 from 3's 4-neighborhood.
    Every other neighborhood is exactly its own label, for epsilon in
    [0, 0.05]. With
    ``far_cluster`` a third label is placed on the opposite side, giving
    n=12 so that n - k differs from k. Returns ``(embeddings, labels, i, j)``.
    """
    angles = [0.0, 0.11, 0.2, 0.5, 0.9, 0.97, 1.02, 1.06]
    labels = [0, 0, 0, 0, 1, 1, 1, 1]
    if far_cluster:
        angles += [3.0, 3.02, 3.05, 3.09]
        labels += [2, 2, 2, 2]
    angles = np.array(angles)
    F = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return F, np.array(labels), 3, 4


@dataclass
class SignRow:
    row: int
    col: int
    in_partner_neighborhood: bool
    predicted_sign: int
    predicted_magnitude: float
    measured: float

    @property
    def ok(self) -> bool:
        return np.sign(self.measured) == self.predicted_sign and np.isclose(
            abs(self.measured), self.predicted_magnitude, rtol=1e-12, atol=0.0
        )


def negative_pair_sign_table(alpha: float = 10.0, k: int = 4):
    """Backprop the single overlap-matrix entry of a misranked negative pair.

    The loss is that pair's squared-error summand, ``(0 - W~[i, j])**2 / n**2``,
    taken w.r.t. a leaf distance matrix with ``epsilon = 0``. For every
    ``p`` other than ``i`` and ``j`` the gradient on ``D[i, p]`` must be
    ``-alpha * g / (2k)`` when ``p`` is a neighbor of ``j`` and
    ``+alpha * g / (2(n - k))`` otherwise, with ``g = dloss/dW~[i, j]``;
    the same holds for ``D[j, p]`` with the roles of ``i`` and ``j`` swapped.
    """
    F, labels, i, j = misranked_negative_batch()
    n = F.shape[0]
    D0 = 2.0 - 2.0 * (F @ F.T)
    np.fill_diagonal(D0, 0.0)
    select = np.zeros((n, n))
    select[i, j] = 1.0
    y = float(labels[i] == labels[j])
    with Tape():
        D = Tensor(D0, requires_grad=True)
        ind = neighbor_indicator(D, k, 0.0, ste_theta(alpha))
        W_tilde = intersection_step(ind)
        term = ad.sum(ad.mul(ad.square(ad.sub(y, W_tilde)), select))
        ad.backward(ad.scalar_mul(term, 1.0 / (n * n)))
    N = ind.mask.values
    sizes = ind.row_sizes[:, 0]
    w_ij = W_tilde.values[i, j]
    g = -2.0 * (y - w_ij) / (n * n)
    rows = []
    for a, b in ((i, j), (j, i)):
        for p in range(n):
            if p in (i, j):
                continue
            inside = bool(N[b, p] == 1.0)
            denom = sizes[i] if inside else n - sizes[i]
            rows.append(
                SignRow(
                    row=a,
                    col=p,
                    in_partner_neighborhood=inside,
                    predicted_sign=-1 if inside else 1,
                    predicted_magnitude=alpha * g / (2.0 * denom),
                    measured=float(D.grad[a, p]),
                )
            )
    context = {
        "i": i,
        "j": j,
        "j_in_N(i)": bool(N[i, j] == 1.0),
        "labels_differ": bool(labels[i] != labels[j]),
        "row_sizes": sizes.tolist(),
        "g": float(g),
        "W_tilde_ij": float(w_ij),
    }
    return rows, context
