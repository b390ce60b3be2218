"""Set-based reference computations of contextual similarity.

Nothing here touches the autodiff engine. Neighborhoods are Python
``frozenset`` objects and every ratio is an exact ``Fraction``; conversion to
float happens once at the end. Membership uses the same floating-point
expression as the vectorized Step 1 (``(-d + t) + eps >= 0``) so both sides
agree on borderline pairs.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from ..errors import ContractError


def _distances(S) -> list:
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    return [[0.0 if i == j else 2.0 - 2.0 * float(S[i, j]) for j in range(n)] for i in range(n)]


def neighborhoods(S, k: int, epsilon: float) -> list:
    """``N_{k+eps}(i)`` for every ``i``, self counted as the closest sample."""
    D = _distances(S)
    n = len(D)
    if not 1 <= k <= n:
        raise ContractError(f"k must lie in [1, {n}], got {k}")
    out = []
    for i in range(n):
        ranked = sorted(range(n), key=lambda j: (j != i, D[i][j], j))
        t = max(D[i][j] for j in ranked[:k])
        out.append(frozenset(j for j in range(n) if (-D[i][j] + t) + epsilon >= 0))
    return out


def reciprocal_sets(S, k: int, epsilon: float) -> list:
    near = neighborhoods(S, max(1, k // 2), epsilon)
    return [frozenset(j for j in near[i] if i in near[j]) for i in range(len(near))]


def _definition_step2(N: list) -> list:
    n = len(N)
    return [
        [Fraction(len(N[i] & N[j]), len(N[i])) if j in N[i] else Fraction(0) for j in range(n)]
        for i in range(n)
    ]


def _pipeline_step2(N: list, m_minus: bool) -> list:
    n = len(N)
    universe = frozenset(range(n))
    comp = [universe - s for s in N]
    if m_minus and any(not c for c in comp):
        raise ContractError("a neighborhood covers the whole batch; complement is empty")
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            if j not in N[i]:
                row.append(Fraction(0))
                continue
            pos = Fraction(len(N[i] & N[j]), len(N[i]))
            if m_minus:
                neg = Fraction(len(comp[i] & comp[j]), len(comp[i]))
                row.append((pos + neg) / 2)
            else:
                row.append(pos)
        rows.append(row)
    return rows


def _expand(w_tilde: list, R: list) -> list:
    n = len(w_tilde)
    w_hat = [
        [sum((w_tilde[p][j] for p in R[i]), Fraction(0)) / len(R[i]) for j in range(n)]
        for i in range(n)
    ]
    return [[(w_hat[i][j] + w_hat[j][i]) / 2 for j in range(n)] for i in range(n)]


def _to_array(rows: list) -> np.ndarray:
    return np.array([[float(v) for v in row] for row in rows], dtype=np.float64)


def oracle_contextual_similarity(S, k: int, epsilon: float, stage: str = "final") -> np.ndarray:
    """Contextual similarity straight from the set definition.

    ``stage="intersection"`` returns the preliminary overlap ratio before
    query expansion.
    """
    N = neighborhoods(S, k, epsilon)
    w_tilde = _definition_step2(N)
    if stage == "intersection":
        return _to_array(w_tilde)
    if stage != "final":
        raise ContractError(f"unknown stage {stage!r}")
    return _to_array(_expand(w_tilde, reciprocal_sets(S, k, epsilon)))


def oracle_pipeline_forward(
    S, k: int, epsilon: float, m_minus: bool = True, stage: str = "final"
) -> np.ndarray:
    """Loss-side forward (shared neighbors and shared non-neighbors) via sets."""
    N = neighborhoods(S, k, epsilon)
    w_tilde = _pipeline_step2(N, m_minus)
    if stage == "intersection":
        return _to_array(w_tilde)
    if stage != "final":
        raise ContractError(f"unknown stage {stage!r}")
    return _to_array(_expand(w_tilde, reciprocal_sets(S, k, epsilon)))
