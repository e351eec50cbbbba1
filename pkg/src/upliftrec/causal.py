"""Augmented samples and per-user effect estimation.

A user's logged trail is cut at ratio ``lambda``: the head is the
sample's history (its pseudo-user features), the tail is the treatment
window. The window yields a treatment (category exposure ratios) and an
outcome (per-category CTR). Estimation works on a C x (K+1) grid of
discretized ratios.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from ._apportion import largest_remainder, round_half_up
from .data import CategoryMap, InteractionRecord

_log = logging.getLogger(__name__)

SUM_TOL = 1e-9


class NoSamplesError(ValueError):
    pass


class OutcomeVector(NamedTuple):
    y: np.ndarray
    observed: np.ndarray


@dataclass(frozen=True, eq=False)
class AugmentedSample:
    sample_id: int
    source_user_id: int
    history: tuple[InteractionRecord, ...]
    treatment: np.ndarray
    outcome: OutcomeVector


@dataclass(frozen=True)
class HyperParams:
    lam: float = 0.5
    C: int = 5
    K: int = 6
    K_p: int | None = None  # None: all samples
    K_s: int | None = None
    gamma: float = 1.0
    epsilon: int = 1
    v_p: float = 0.01
    v_a: float = 0.01
    v_m: float = 0.05
    alpha: float = 0.1
    delta_t: int = 1
    N: int = 10

    # search ranges used for tuning; values outside need an explicit override
    GRID_C = (2, 3, 5, 10, 15)
    GRID_K_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)
    GRID_V_A = (0.01, 0.1)
    GRID_EPSILON = (0, 1, 2)

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lam must lie in (0, 1), got {self.lam}")
        if self.C < 1 or self.K < 1 or self.N < 1:
            raise ValueError("C, K and N must be positive")
        if self.K > self.N:
            raise ValueError(f"K={self.K} exceeds list length N={self.N}")
        if self.gamma < 0 or self.epsilon < 0 or self.delta_t < 1:
            raise ValueError("gamma >= 0, epsilon >= 0 and delta_t >= 1 required")
        if not self.v_p > 0:
            raise ValueError("propensity floor v_p must be positive")
        for name in ("K_p", "K_s"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1")

    def range_violations(self) -> list[str]:
        """Parameters outside the documented tuning grid."""
        out = []
        if self.C not in self.GRID_C:
            out.append(f"C={self.C} not in {self.GRID_C}")
        if not any(math.isclose(self.K, f * self.N) for f in self.GRID_K_FRACTIONS):
            out.append(f"K={self.K} is not one of {self.GRID_K_FRACTIONS} x N")
        if not 0.0 <= self.v_m <= 0.5 or not _on_step(self.v_m, 0.0, 0.05):
            out.append(f"v_m={self.v_m} not on the 0.05 grid over [0, 0.5]")
        if not 0.05 <= self.alpha <= 0.45 or not _on_step(self.alpha, 0.05, 0.05):
            out.append(f"alpha={self.alpha} not on the 0.05 grid over [0.05, 0.45]")
        if self.v_a not in self.GRID_V_A:
            out.append(f"v_a={self.v_a} not in {self.GRID_V_A}")
        if self.epsilon not in self.GRID_EPSILON:
            out.append(f"epsilon={self.epsilon} not in {self.GRID_EPSILON}")
        for name in ("K_p", "K_s"):
            v = getattr(self, name)
            if v is not None and not _on_tripling_grid(v):
                out.append(f"{name}={v} not in 10, 30, 90, ... or 'all'")
        return out

    def asdict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _on_step(x: float, start: float, step: float) -> bool:
    k = (x - start) / step
    return abs(k - round(k)) < 1e-9


def _on_tripling_grid(v: int) -> bool:
    while v > 10 and v % 3 == 0:
        v //= 3
    return v == 10


def split_trail(trail: Sequence[InteractionRecord], lam: float) -> tuple[list[InteractionRecord], list[InteractionRecord]] | None:
    """Cut a position-sorted trail into (history, window).

    History is the first ceil(lam * n) records. Returns None when the
    trail is too short to leave a non-empty window.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lam must lie in (0, 1), got {lam}")
    n = len(trail)
    if n < 2:
        return None
    cut = math.ceil(round(lam * n, 9))
    if cut >= n:
        return None
    return list(trail[:cut]), list(trail[cut:])


def _window_categories(window: Sequence[InteractionRecord], category_map: CategoryMap) -> np.ndarray:
    return category_map.categories_of(r.item_id for r in window)


def compute_treatment(window: Sequence[InteractionRecord], category_map: CategoryMap, C: int | None = None) -> np.ndarray:
    """Share of window exposures (positive or negative) per category."""
    if not window:
        raise ValueError("empty treatment window")
    C = category_map.C if C is None else C
    counts = np.bincount(_window_categories(window, category_map), minlength=C)
    return counts / len(window)


def compute_outcome(window: Sequence[InteractionRecord], category_map: CategoryMap, C: int | None = None) -> OutcomeVector:
    """Per-category CTR over the window; categories never exposed are unobserved."""
    C = category_map.C if C is None else C
    cats = _window_categories(window, category_map)
    labels = np.fromiter((r.label for r in window), dtype=float, count=len(window))
    exposures = np.bincount(cats, minlength=C)
    clicks = np.bincount(cats, weights=labels, minlength=C)
    observed = exposures > 0
    y = np.zeros(C)
    y[observed] = clicks[observed] / exposures[observed]
    return OutcomeVector(y, observed)


def discretize(t, K: int):
    """Map exposure ratios to slot indices in [0, K].

    A scalar ratio rounds half-up. A vector is apportioned by largest
    remainder on ``t * K`` so its slots sum to ``K``; for a vector whose
    half-up slots already sum to ``K`` the two rules agree.
    """
    if np.ndim(t) == 0:
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"ratio {t} outside [0, 1]")
        return round_half_up(t * K)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("ratios must lie in [0, 1]")
    return largest_remainder(t * K, K)


def slot_matrix(treatments: np.ndarray, K: int) -> np.ndarray:
    """Per-ratio half-up slots for a stack of treatment vectors."""
    q = np.round(np.asarray(treatments, dtype=float) * K, 9)
    return np.floor(q + 0.5).astype(np.int64)


def build_augmented_dataset(
    trails: Mapping[int, Sequence[InteractionRecord]], lam: float, category_map: CategoryMap
) -> list[AugmentedSample]:
    """One augmented sample per user whose trail leaves a non-empty window."""
    samples: list[AugmentedSample] = []
    skipped = 0
    for user in sorted(trails):
        cut = split_trail(trails[user], lam)
        if cut is None:
            skipped += 1
            continue
        history, window = cut
        samples.append(
            AugmentedSample(
                sample_id=len(samples),
                source_user_id=user,
                history=tuple(history),
                treatment=compute_treatment(window, category_map),
                outcome=compute_outcome(window, category_map),
            )
        )
    if skipped:
        _log.info("skipped %d users whose trails are too short to split", skipped)
    if not samples:
        raise NoSamplesError("no user trail is long enough to form an augmented sample")
    return samples


@dataclass(frozen=True, eq=False)
class SampleTable:
    """Column view over augmented samples for vectorized estimation."""

    source_users: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray
    observed: np.ndarray
    _slots: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_samples(cls, samples: Sequence[AugmentedSample]) -> SampleTable:
        return cls(
            np.array([s.source_user_id for s in samples], dtype=np.int64),
            np.array([s.treatment for s in samples], dtype=float),
            np.array([s.outcome.y for s in samples], dtype=float),
            np.array([s.outcome.observed for s in samples], dtype=bool),
        )

    def __len__(self) -> int:
        return len(self.source_users)

    def slots(self, K: int) -> np.ndarray:
        if K not in self._slots:
            self._slots[K] = slot_matrix(self.treatments, K)
        return self._slots[K]

    def take(self, idx) -> SampleTable:
        return SampleTable(self.source_users[idx], self.treatments[idx], self.outcomes[idx], self.observed[idx])


@dataclass(frozen=True, eq=False)
class PropensityMatrix:
    P: np.ndarray
    v_p: float
    raw: np.ndarray


@dataclass(frozen=True, eq=False)
class AdrfMatrix:
    A: np.ndarray
    filled: np.ndarray
    v_a: float
    counts: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class MtefVector:
    m: np.ndarray
    v_m: float
    delta: int


def estimate_propensity(neighbor_slots: np.ndarray, C: int, K: int, v_p: float) -> PropensityMatrix:
    """Slot frequencies among the neighbours' discretized treatments, floored at ``v_p``."""
    slots = np.asarray(neighbor_slots, dtype=np.int64).reshape(-1, C)
    n = len(slots)
    if n < 1:
        raise ValueError("propensity needs at least one neighbour")
    if np.any(slots < 0) or np.any(slots > K):
        raise ValueError(f"slots must lie in [0, {K}]")
    raw = np.stack([np.bincount(slots[:, c], minlength=K + 1) for c in range(C)]) / n
    return PropensityMatrix(np.maximum(raw, v_p), v_p, raw)


def estimate_adrf(
    neighbors: SampleTable | Sequence[AugmentedSample],
    P: PropensityMatrix,
    gamma: float,
    v_a: float,
    C: int,
    K: int,
) -> AdrfMatrix:
    """Inverse-propensity adjusted dose-response grid.

    Cell (c, k), k >= 1, is the mean observed CTR of category ``c`` over
    neighbours whose slot for ``c`` is ``k``, divided by ``P[c][k]**gamma``.
    Cells without contributors hold ``v_a``; column 0 is always 0.
    """
    table = neighbors if isinstance(neighbors, SampleTable) else SampleTable.from_samples(neighbors)
    if len(table) < 1:
        raise ValueError("ADRF needs at least one neighbour")
    slots = table.slots(K)
    sums = np.zeros((C, K + 1))
    counts = np.zeros((C, K + 1), dtype=np.int64)
    for c in range(C):
        ok = table.observed[:, c]
        sums[c] = np.bincount(slots[ok, c], weights=table.outcomes[ok, c], minlength=K + 1)
        counts[c] = np.bincount(slots[ok, c], minlength=K + 1)
    filled = counts > 0
    filled[:, 0] = True
    A = np.full((C, K + 1), float(v_a))
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = sums / counts
    weight = P.P**gamma
    cells = counts > 0
    A[cells] = mean[cells] / weight[cells]
    A[:, 0] = 0.0
    return AdrfMatrix(A, filled, float(v_a), counts)


def compute_mtef(A: AdrfMatrix, t0_slots: Sequence[int], delta_t: int, v_m: float) -> MtefVector:
    """Forward difference of each ADRF row at the backend allocation."""
    if delta_t < 1:
        raise ValueError("delta_t must be >= 1")
    C, width = A.A.shape
    K = width - 1
    m = np.full(C, float(v_m))
    for c, t in enumerate(t0_slots):
        t = int(t)
        up = t + delta_t
        if up <= K and A.filled[c, t] and A.filled[c, up]:
            m[c] = (A.A[c, up] - A.A[c, t]) / delta_t
    return MtefVector(m, float(v_m), delta_t)


def estimate_for_user(
    query: np.ndarray,
    sample_vectors: np.ndarray,
    table: SampleTable,
    hp: HyperParams,
    exclude: np.ndarray | None = None,
) -> tuple[PropensityMatrix, AdrfMatrix]:
    """Propensity and ADRF for one target from its nearest augmented samples."""
    from .backend import nearest_samples

    available = len(table) - (0 if exclude is None else int(np.sum(exclude)))
    k_p = available if hp.K_p is None else min(hp.K_p, available)
    k_s = available if hp.K_s is None else min(hp.K_s, available)
    order = nearest_samples(query, sample_vectors, max(k_p, k_s), exclude=exclude)
    slots = table.slots(hp.K)
    P = estimate_propensity(slots[order[:k_p]], hp.C, hp.K, hp.v_p)
    A = estimate_adrf(table.take(order[:k_s]), P, hp.gamma, hp.v_a, hp.C, hp.K)
    return P, A


def _fmt(v) -> str:
    return repr(float(v))


def write_augmented(path: str | Path, samples: Iterable[AugmentedSample]) -> None:
    """sample_id, source_user, ratios, y:observed pairs, history length."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            ratios = ",".join(_fmt(x) for x in s.treatment)
            outcome = ",".join(f"{_fmt(y)}:{int(o)}" for y, o in zip(s.outcome.y, s.outcome.observed))
            fh.write(f"{s.sample_id}\t{s.source_user_id}\t{ratios}\t{outcome}\t{len(s.history)}\n")


def read_augmented(path: str | Path, trails: Mapping[int, Sequence[InteractionRecord]] | None = None) -> list[AugmentedSample]:
    """Inverse of :func:`write_augmented`; histories are rebuilt from ``trails`` when given."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            sid, user, ratios, outcome, hlen = line.rstrip("\n").split("\t")
            pairs = [p.split(":") for p in outcome.split(",")]
            user = int(user)
            history = tuple(trails[user][: int(hlen)]) if trails is not None else ()
            out.append(
                AugmentedSample(
                    int(sid),
                    user,
                    history,
                    np.array([float(x) for x in ratios.split(",")]),
                    OutcomeVector(np.array([float(y) for y, _ in pairs]), np.array([o == "1" for _, o in pairs])),
                )
            )
    return out


def format_grid(M: np.ndarray, filled: np.ndarray | None = None, digits: int = 3) -> str:
    """Text rendering of a C x (K+1) grid; unfilled cells are starred."""
    rows = ["c\\k " + " ".join(f"{k:>{digits + 4}}" for k in range(M.shape[1]))]
    for c, row in enumerate(M):
        cells = []
        for k, v in enumerate(row):
            mark = "*" if filled is not None and not filled[c, k] else " "
            cells.append(f"{v:>{digits + 3}.{digits}f}{mark}")
        rows.append(f"{c:<3} " + " ".join(cells))
    return "\n".join(rows)
