"""Treatment selection and list construction.

``best_treatment`` solves the slot allocation as a grouped knapsack over
categories: ``f[c][k]`` is the best total of ``j * A[c][j]`` when ``k``
slots go to the first ``c`` categories, with each category's count kept
within ``epsilon`` of the backend allocation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._apportion import largest_remainder
from .backend import rank_by_score
from .causal import AdrfMatrix, MtefVector
from .data import CategoryMap

NEG_INF = float("-inf")


class InfeasibleError(ValueError):
    def __init__(self, category: int, message: str):
        super().__init__(message)
        self.category = category


@dataclass(frozen=True, eq=False)
class DpTable:
    f: np.ndarray
    choice: np.ndarray


def _values(A) -> np.ndarray:
    return A.A if isinstance(A, AdrfMatrix) else np.asarray(A, dtype=float)


def _offsets(epsilon: int) -> list[int]:
    # preference order for equal objective values: closest to t0, then fewer slots
    return sorted(range(-epsilon, epsilon + 1), key=lambda d: (abs(d), d))


def _candidates(t0: int, epsilon: int, K: int) -> list[int]:
    return [t0 + d for d in _offsets(epsilon) if 0 <= t0 + d <= K]


def solve_dp_batch(A: np.ndarray, t0: np.ndarray, epsilon: int, K: int) -> DpTable:
    """Run the DP for a batch of instances at once.

    ``A`` is B x C x (K+1), ``t0`` is B x C. Loops run over categories and
    deviation offsets only; every state value is still formed as
    ``f[c-1][k-j] + j * A[c][j]`` exactly as in the scalar recurrence.
    """
    A = np.asarray(A, dtype=float)
    t0 = np.asarray(t0, dtype=np.int64)
    B, C = t0.shape
    f = np.full((B, C + 1, K + 1), NEG_INF)
    choice = np.full((B, C + 1, K + 1), -1, dtype=np.int64)
    f[:, 0, 0] = 0.0
    ks = np.arange(K + 1)
    rows = np.arange(B)
    for c in range(1, C + 1):
        prev = f[:, c - 1]
        cur = f[:, c]
        ch = choice[:, c]
        for d in _offsets(epsilon):
            j = t0[:, c - 1] + d
            ok = (j >= 0) & (j <= K)
            if not ok.any():
                continue
            jj = np.clip(j, 0, K)
            gain = jj * A[rows, c - 1, jj]
            src = ks[None, :] - jj[:, None]
            valid = ok[:, None] & (src >= 0)
            base = np.where(valid, prev[rows[:, None], np.clip(src, 0, K)], NEG_INF)
            with np.errstate(invalid="ignore"):
                v = base + gain[:, None]
            better = valid & (base != NEG_INF) & (v > cur)
            cur[better] = v[better]
            ch[better] = np.broadcast_to(jj[:, None], better.shape)[better]
    return DpTable(f, choice)


def solve_dp(A, t0_slots: Sequence[int], epsilon: int, K: int) -> DpTable:
    A = _values(A)
    t = solve_dp_batch(A[None], np.asarray(t0_slots)[None], epsilon, K)
    return DpTable(t.f[0], t.choice[0])


def _binding_category(f: np.ndarray, t0_slots: Sequence[int], epsilon: int, K: int) -> int:
    C = len(t0_slots)
    lo = [max(0, int(t) - epsilon) for t in t0_slots]
    hi = [min(K, int(t) + epsilon) for t in t0_slots]
    for c in range(1, C + 1):
        need_lo = K - sum(hi[c:])
        need_hi = K - sum(lo[c:])
        reachable = [k for k in range(K + 1) if f[c, k] != NEG_INF and need_lo <= k <= need_hi]
        if not reachable:
            return c - 1
    return C - 1


def _backtrack(choice: np.ndarray, K: int) -> np.ndarray:
    C = choice.shape[0] - 1
    slots = np.zeros(C, dtype=np.int64)
    k = K
    for c in range(C, 0, -1):
        j = int(choice[c, k])
        slots[c - 1] = j
        k -= j
    return slots


def best_treatment(A, t0_slots: Sequence[int], epsilon: int, K: int) -> tuple[np.ndarray, float]:
    """Optimal slot allocation near ``t0_slots`` and its objective value.

    ``A`` is an :class:`AdrfMatrix` or a C x (K+1) array (unfilled cells
    already carry the null value). Returns (slots, f[C][K]).
    """
    t0 = np.asarray(t0_slots, dtype=np.int64)
    if int(t0.sum()) != K:
        raise ValueError(f"backend allocation {t0.tolist()} does not sum to K={K}")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    table = solve_dp(A, t0, epsilon, K)
    C = len(t0)
    if table.f[C, K] == NEG_INF:
        c = _binding_category(table.f, t0, epsilon, K)
        raise InfeasibleError(c, f"no allocation of {K} slots within epsilon={epsilon}; category {c} cannot be satisfied")
    return _backtrack(table.choice, K), float(table.f[C, K])


def best_treatment_many(A: np.ndarray, t0: np.ndarray, epsilon: int, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Batched :func:`best_treatment`: returns (B x C slots, B objective values)."""
    t0 = np.asarray(t0, dtype=np.int64)
    if np.any(t0.sum(axis=1) != K):
        raise ValueError(f"every backend allocation must sum to K={K}")
    table = solve_dp_batch(A, t0, epsilon, K)
    C = t0.shape[1]
    values = table.f[:, C, K]
    if np.any(values == NEG_INF):
        b = int(np.argmax(values == NEG_INF))
        c = _binding_category(table.f[b], t0[b], epsilon, K)
        raise InfeasibleError(c, f"instance {b}: category {c} cannot be satisfied")
    slots = np.stack([_backtrack(table.choice[b], K) for b in range(len(t0))]) if len(t0) else np.zeros((0, C), np.int64)
    return slots, values.copy()


def best_treatment_aggregate(A, t0_slots: Sequence[int], epsilon: int, K: int) -> tuple[np.ndarray, float]:
    """Variant with a total budget: sum over c of |slots_c - t0_c| <= epsilon."""
    A = _values(A)
    t0 = np.asarray(t0_slots, dtype=np.int64)
    if int(t0.sum()) != K:
        raise ValueError(f"backend allocation {t0.tolist()} does not sum to K={K}")
    C = len(t0)
    E = epsilon
    f = np.full((C + 1, K + 1, E + 1), NEG_INF)
    choice = np.full((C + 1, K + 1, E + 1), -1, dtype=np.int64)
    f[0, 0, 0] = 0.0
    for c in range(1, C + 1):
        for j in _candidates(int(t0[c - 1]), E, K):
            dev = abs(j - int(t0[c - 1]))
            gain = j * A[c - 1, j]
            for k in range(j, K + 1):
                for e in range(dev, E + 1):
                    base = f[c - 1, k - j, e - dev]
                    if base == NEG_INF:
                        continue
                    v = base + gain
                    if v > f[c, k, e]:
                        f[c, k, e] = v
                        choice[c, k, e] = j
    e_best = int(np.argmax(f[C, K]))
    if f[C, K, e_best] == NEG_INF:
        raise InfeasibleError(C - 1, "no allocation satisfies the aggregate deviation budget")
    slots = np.zeros(C, dtype=np.int64)
    k, e = K, e_best
    for c in range(C, 0, -1):
        j = int(choice[c, k, e])
        slots[c - 1] = j
        k -= j
        e -= abs(j - int(t0[c - 1]))
    return slots, float(f[C, K, e_best])


def allocate_list(
    candidates: Sequence[int],
    scores: Sequence[float],
    category_map: CategoryMap,
    slots: Sequence[int],
    N: int,
    K: int,
) -> list[int]:
    """Build an N-item list whose category mix follows ``slots``.

    Category budgets are ``slots * N / K`` rounded by largest remainder.
    Each category contributes its best-scoring candidates; shortfalls are
    refilled with the best remaining items of any category. The result is
    ordered by descending backend score.
    """
    slots = np.asarray(slots, dtype=np.int64)
    if int(slots.sum()) != K:
        raise ValueError(f"slots {slots.tolist()} do not sum to K={K}")
    if len(candidates) < N:
        raise ValueError(f"only {len(candidates)} candidates for a list of {N}")
    candidates = np.asarray(candidates, dtype=np.int64)
    scores = np.asarray(scores, dtype=float)
    budgets = largest_remainder(slots * N / K, N)
    order = rank_by_score(candidates, scores)
    cats = category_map.categories_of(candidates)
    taken = np.zeros(len(candidates), dtype=bool)
    used = np.zeros(len(budgets), dtype=np.int64)
    for pos in order:
        c = cats[pos]
        if used[c] < budgets[c]:
            taken[pos] = True
            used[c] += 1
    deficit = N - int(taken.sum())
    for pos in order:
        if deficit == 0:
            break
        if not taken[pos]:
            taken[pos] = True
            deficit -= 1
    return [int(candidates[p]) for p in order if taken[p]]


def mtef_scores(scores: Sequence[float], cats: np.ndarray, m: MtefVector | np.ndarray, alpha: float) -> np.ndarray:
    m = m.m if isinstance(m, MtefVector) else np.asarray(m, dtype=float)
    return np.asarray(scores, dtype=float) + alpha * m[cats]


def rerank_mtef(
    candidates: Sequence[int],
    scores: Sequence[float],
    m: MtefVector | np.ndarray,
    alpha: float,
    category_map: CategoryMap,
    N: int,
) -> tuple[list[int], np.ndarray]:
    """Top-N by backend score plus ``alpha`` times the item category's MTEF.

    Returns the list and the adjusted scores aligned with it.
    """
    if N > len(candidates):
        raise ValueError(f"N={N} exceeds the {len(candidates)} available candidates")
    candidates = np.asarray(candidates, dtype=np.int64)
    adjusted = mtef_scores(scores, category_map.categories_of(candidates), m, alpha)
    order = rank_by_score(candidates, adjusted)[:N]
    return [int(candidates[p]) for p in order], adjusted[order]


def write_recommendations(path: str | Path, recs: Mapping[int, Sequence[tuple[int, float]]]) -> None:
    """``user <TAB> item <TAB> rank <TAB> score`` with ranks starting at 1."""
    with open(path, "w", encoding="utf-8") as fh:
        for user in sorted(recs):
            for rank, (item, s) in enumerate(recs[user], start=1):
                fh.write(f"{user}\t{item}\t{rank}\t{float(s)!r}\n")


def read_recommendations(path: str | Path) -> dict[int, list[tuple[int, float]]]:
    out: dict[int, list[tuple[int, int, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            u, i, r, s = line.rstrip("\n").split("\t")
            out.setdefault(int(u), []).append((int(r), int(i), float(s)))
    return {u: [(i, s) for _, i, s in sorted(rows)] for u, rows in out.items()}


def lists_only(recs: Mapping[int, Iterable[tuple[int, float]]]) -> dict[int, list[int]]:
    return {u: [i for i, _ in rows] for u, rows in recs.items()}
