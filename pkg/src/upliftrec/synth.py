"""Synthetic logged feedback with known dose-response curves.

Each user has, per category, a unimodal CTR curve over the exposure
ratio. A logging policy picks how many items of each category a window
shows; every shown item is clicked independently with the curve value at
the realized ratio, so windowed CTR estimates the curve without bias.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .data import CategoryMap, InteractionRecord

MAX_ORACLE_C = 6
MAX_ORACLE_K = 10


@dataclass(frozen=True, eq=False)
class UserTruth:
    peak: np.ndarray
    base: np.ndarray
    width: np.ndarray
    dominant: int

    def ctr(self, c: int, t: float) -> float:
        z = (t - self.peak[c]) / self.width[c]
        return float(min(1.0, max(0.0, self.base[c] * max(0.0, 1.0 - z * z))))


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    users: tuple[UserTruth, ...]
    C: int
    items_per_category: int
    seed: int = 0

    @property
    def n_items(self) -> int:
        return self.C * self.items_per_category

    def category_of(self, item_id: int) -> int:
        return item_id // self.items_per_category

    def category_map(self) -> CategoryMap:
        return CategoryMap({i: self.category_of(i) for i in range(self.n_items)}, self.C)


@dataclass(frozen=True)
class Policy:
    """Logging policy: ``uniform`` or ``confounded`` with a strength in [0, 1).

    The confounded policy is a mixture: with probability ``strength`` the
    window is skewed so the user's dominant category fills at least
    ``dominant_share`` of it, otherwise the uniform policy is used. The
    uniform component keeps every allocation reachable.
    """

    kind: str = "uniform"
    strength: float = 0.0
    dominant_share: float = 0.6

    def __post_init__(self):
        if self.kind not in ("uniform", "confounded"):
            raise ValueError(f"unknown policy {self.kind!r}")
        if not 0.0 <= self.strength < 1.0:
            raise ValueError(f"strength must lie in [0, 1), got {self.strength}")
        if self.kind == "uniform" and self.strength:
            raise ValueError("the uniform policy takes no strength")

    @classmethod
    def parse(cls, text: str) -> Policy:
        """``uniform`` or ``confounded:<strength>``."""
        if text == "uniform":
            return cls()
        kind, _, s = text.partition(":")
        if kind != "confounded" or not s:
            raise ValueError(f"bad policy spec {text!r}")
        return cls("confounded", float(s))


def make_world(
    n_users: int,
    C: int,
    items_per_category: int = 50,
    seed: int = 0,
    base_range: tuple[float, float] = (0.05, 0.6),
    width_range: tuple[float, float] = (0.3, 0.9),
) -> SyntheticWorld:
    """Random users; each user's dominant category is the one a
    click-maximizing logger would favour (highest CTR at an even split)."""
    rng = np.random.default_rng(seed)
    users = []
    even = 1.0 / C
    for _ in range(n_users):
        peak = rng.uniform(0.0, 1.0, C)
        base = rng.uniform(*base_range, C)
        width = rng.uniform(*width_range, C)
        proto = UserTruth(peak, base, width, 0)
        dominant = int(np.argmax([proto.ctr(c, even) for c in range(C)]))
        users.append(UserTruth(peak, base, width, dominant))
    return SyntheticWorld(tuple(users), C, items_per_category, seed)


def true_ctr(world: SyntheticWorld, user: int, c: int, t: float) -> float:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"ratio {t} outside [0, 1]")
    return world.users[user].ctr(c, t)


def _uniform_composition(rng: np.random.Generator, total: int, parts: int) -> np.ndarray:
    if parts == 1:
        return np.array([total])
    bars = np.sort(rng.choice(total + parts - 1, size=parts - 1, replace=False))
    edges = np.concatenate([[-1], bars, [total + parts - 1]])
    return np.diff(edges) - 1


def sample_counts(rng: np.random.Generator, policy: Policy, C: int, dominant: int, window_len: int) -> np.ndarray:
    """Category counts for one window of ``window_len`` items."""
    # strength 0 draws nothing extra so it replays the uniform stream
    if policy.kind == "confounded" and policy.strength > 0 and C > 1 and rng.random() < policy.strength:
        low = math.ceil(policy.dominant_share * window_len)
        n_dom = int(rng.integers(low, window_len + 1))
        rest = _uniform_composition(rng, window_len - n_dom, C - 1)
        return np.insert(rest, dominant, n_dom)
    return _uniform_composition(rng, window_len, C)


def composition_probabilities(policy: Policy, C: int, dominant: int, window_len: int) -> dict[tuple[int, ...], float]:
    """Exact distribution of :func:`sample_counts` by enumeration."""
    comps = list(compositions(window_len, C))
    uniform = 1.0 / len(comps)
    probs = {c: uniform for c in comps}
    if policy.kind == "confounded" and C > 1:
        s = policy.strength
        low = math.ceil(policy.dominant_share * window_len)
        probs = {c: (1 - s) * uniform for c in comps}
        span = window_len - low + 1
        for n_dom in range(low, window_len + 1):
            rest = list(compositions(window_len - n_dom, C - 1))
            for r in rest:
                full = tuple(r[:dominant]) + (n_dom,) + tuple(r[dominant:])
                probs[full] += s / span / len(rest)
    return probs


def compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """All ordered ways to write ``total`` as ``parts`` non-negative integers."""
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        edges = (-1,) + bars + (total + parts - 1,)
        yield tuple(edges[k + 1] - edges[k] - 1 for k in range(parts))


def simulate_logs(
    world: SyntheticWorld,
    policy: Policy,
    windows_per_user: int,
    window_len: int,
    seed: int = 0,
    users: Sequence[int] | None = None,
) -> dict[int, list[InteractionRecord]]:
    """Logged trails, one per user, made of consecutive windows.

    A user never sees the same item twice across their windows. Each user
    draws from a generator seeded by (seed, user) so users can be
    generated independently.
    """
    if windows_per_user < 1:
        raise ValueError("need at least one window per user")
    return _simulate(world, [policy] * windows_per_user, window_len, seed, users)


def _simulate(world, window_policies, window_len, seed, users=None):
    if window_len < 1:
        raise ValueError("windows need at least one item")
    ipc = world.items_per_category
    trails: dict[int, list[InteractionRecord]] = {}
    for u in range(len(world.users)) if users is None else users:
        truth = world.users[u]
        rng = np.random.default_rng([seed, u])
        pools = [list(rng.permutation(ipc) + c * ipc) for c in range(world.C)]
        records: list[InteractionRecord] = []
        for policy in window_policies:
            counts = sample_counts(rng, policy, world.C, truth.dominant, window_len)
            window = []
            for c, n in enumerate(counts):
                if n > len(pools[c]):
                    raise ValueError(f"category {c} has too few items for user {u}'s windows")
                p = truth.ctr(c, n / window_len)
                for _ in range(n):
                    window.append((pools[c].pop(), int(rng.random() < p)))
            for k in rng.permutation(len(window)):
                item, label = window[k]
                records.append(InteractionRecord(u, int(item), label, len(records)))
        trails[u] = records
    return trails


def oracle_best_treatment(world: SyntheticWorld, user: int, K: int, N: int) -> tuple[np.ndarray, float]:
    """Exhaustive maximizer of sum_c (k_c / K) * N * ctr_c(k_c / K) over compositions of K."""
    C = world.C
    if C > MAX_ORACLE_C or K > MAX_ORACLE_K:
        raise ValueError(f"instance too large for enumeration (C={C}, K={K})")
    truth = world.users[user]
    best, best_val = None, -math.inf
    for comp in compositions(K, C):
        val = sum((k / K) * N * truth.ctr(c, k / K) for c, k in enumerate(comp))
        if val > best_val:
            best, best_val = comp, val
    return np.array(best), best_val


def population_curve(world: SyntheticWorld, K: int) -> np.ndarray:
    """C x (K+1) mean over users of the true CTR at each slot ratio."""
    grid = np.zeros((world.C, K + 1))
    for truth in world.users:
        for c in range(world.C):
            for k in range(K + 1):
                grid[c, k] += truth.ctr(c, k / K)
    return grid / len(world.users)


def write_truth(path: str | Path, world: SyntheticWorld) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user\tcategory\tpeak\tbase\twidth\tdominant\n")
        for u, t in enumerate(world.users):
            for c in range(world.C):
                fh.write(f"{u}\t{c}\t{float(t.peak[c])!r}\t{float(t.base[c])!r}\t{float(t.width[c])!r}\t{t.dominant}\n")


def read_truth(path: str | Path, items_per_category: int, seed: int = 0) -> SyntheticWorld:
    rows: dict[int, dict[int, tuple[float, float, float, int]]] = {}
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            u, c, peak, base, width, dom = line.rstrip("\n").split("\t")
            rows.setdefault(int(u), {})[int(c)] = (float(peak), float(base), float(width), int(dom))
    C = len(next(iter(rows.values())))
    users = []
    for u in sorted(rows):
        cols = [rows[u][c] for c in range(C)]
        users.append(
            UserTruth(
                np.array([x[0] for x in cols]),
                np.array([x[1] for x in cols]),
                np.array([x[2] for x in cols]),
                cols[0][3],
            )
        )
    return SyntheticWorld(tuple(users), C, items_per_category, seed)


def recommendation_dataset(
    world: SyntheticWorld,
    policy: Policy,
    train_windows: int,
    test_windows: int,
    window_len: int,
    seed: int = 0,
) -> tuple[list[InteractionRecord], list[InteractionRecord]]:
    """(biased train log, unbiased log) for end-to-end runs.

    Training windows follow ``policy``; the later windows use the uniform
    policy over items the user has not been shown yet.
    """
    plan = [policy] * train_windows + [Policy()] * test_windows
    both = _simulate(world, plan, window_len, seed)
    train, unbiased = [], []
    cut = train_windows * window_len
    for u in sorted(both):
        trail = both[u]
        train.extend(trail[:cut])
        unbiased.extend(InteractionRecord(r.user_id, r.item_id, r.label, r.position - cut) for r in trail[cut:])
    return train, unbiased
