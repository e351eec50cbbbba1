"""Accuracy (recall, NDCG) and serendipity (RUE, RUP) metrics.

Every per-user metric returns ``None`` when the user has nothing to
recall under that metric; such users are left out of the averages.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .data import CategoryMap, PopularityTable

_log = logging.getLogger(__name__)

METRICS = ("recall", "ndcg", "rue", "rup")
TOP_CATEGORIES = 3


class DegenerateMetricWarning(UserWarning):
    pass


def _check(ranked: Sequence[int], K: int) -> None:
    if K < 1:
        raise ValueError("cutoff must be >= 1")
    if len(ranked) < K:
        raise ValueError(f"list of length {len(ranked)} is shorter than cutoff {K}")


def recall_at_k(ranked: Sequence[int], positives: Iterable[int], K: int) -> float | None:
    _check(ranked, K)
    pos = set(positives)
    if not pos:
        return None
    return len(pos.intersection(ranked[:K])) / len(pos)


def ndcg_at_k(ranked: Sequence[int], positives: Iterable[int], K: int) -> float | None:
    _check(ranked, K)
    pos = set(positives)
    if not pos:
        return None
    dcg = sum(1.0 / math.log2(r + 2) for r, item in enumerate(ranked[:K]) if item in pos)
    idcg = sum(1.0 / math.log2(r + 2) for r in range(min(K, len(pos))))
    return dcg / idcg


def top_categories(history_positives: Iterable[int], category_map: CategoryMap, n: int = TOP_CATEGORIES) -> list[int]:
    """The ``n`` categories with most positive history interactions.

    All categories are ranked, including ones the user never clicked;
    ties go to the lower category index.
    """
    counts = Counter(category_map[i] for i in history_positives)
    ranked = sorted(range(category_map.C), key=lambda c: (-counts.get(c, 0), c))
    return ranked[:n]


def rue_at_k(
    ranked: Sequence[int],
    positives: Iterable[int],
    history_positives: Iterable[int],
    category_map: CategoryMap,
    K: int,
) -> float | None:
    """Recall restricted to positives outside the user's top-3 history categories."""
    _check(ranked, K)
    if category_map.C <= TOP_CATEGORIES:
        warnings.warn(
            f"RUE is degenerate with C={category_map.C} <= {TOP_CATEGORIES}: every category is expected",
            DegenerateMetricWarning,
            stacklevel=2,
        )
        return None
    expected = set(top_categories(history_positives, category_map))
    unexpected = {i for i in positives if category_map[i] not in expected}
    if not unexpected:
        return None
    return len(unexpected.intersection(ranked[:K])) / len(unexpected)


def rup_at_k(ranked: Sequence[int], positives: Iterable[int], popularity: PopularityTable, K: int) -> float | None:
    _check(ranked, K)
    unpopular = {i for i in positives if popularity.is_unpopular(i)}
    if not unpopular:
        return None
    return len(unpopular.intersection(ranked[:K])) / len(unpopular)


@dataclass
class MetricReport:
    values: dict[str, float] = field(default_factory=dict)  # "recall@10" -> mean
    users: dict[str, int] = field(default_factory=dict)  # "recall@10" -> users averaged
    per_user: dict[int, dict[str, float]] = field(default_factory=dict)
    skipped: int = 0

    def get(self, metric: str, K: int) -> float:
        return self.values[f"{metric}@{K}"]

    def as_kv(self) -> str:
        """Flat ``metric.cutoff = value`` lines."""
        lines = []
        for key in sorted(self.values, key=_key_order):
            metric, K = key.split("@")
            lines.append(f"{metric}.{K} = {self.values[key]!r}")
            lines.append(f"{metric}.{K}.users = {self.users[key]}")
        lines.append(f"skipped_users = {self.skipped}")
        return "\n".join(lines) + "\n"

    def as_table(self) -> str:
        cutoffs = sorted({int(k.split("@")[1]) for k in self.values})
        metrics = [m for m in METRICS if any(k.startswith(m + "@") for k in self.values)]
        head = f"{'metric':<8}" + "".join(f"{'@' + str(K):>10}" for K in cutoffs) + f"{'users':>8}"
        rows = [head]
        for m in metrics:
            cells = "".join(
                f"{self.values[f'{m}@{K}']:>10.4f}" if f"{m}@{K}" in self.values else f"{'-':>10}" for K in cutoffs
            )
            n = self.users.get(f"{m}@{cutoffs[0]}", 0)
            rows.append(f"{m:<8}{cells}{n:>8}")
        return "\n".join(rows) + "\n"


def _key_order(key: str):
    metric, K = key.split("@")
    return METRICS.index(metric), int(K)


def evaluate_run(
    recommendations: Mapping[int, Sequence[int]],
    test_positives: Mapping[int, Iterable[int]],
    history_positives: Mapping[int, Iterable[int]],
    category_map: CategoryMap | None,
    popularity: PopularityTable,
    cutoffs: Sequence[int] = (10, 20),
) -> MetricReport:
    """Macro-average every metric over the users for which it is defined.

    Users with recommendations but no test positives are skipped and
    counted. RUE is omitted when ``category_map`` is None.
    """
    report = MetricReport()
    sums: dict[str, float] = {}
    skipped = 0
    rue_ok = category_map is not None and category_map.C > TOP_CATEGORIES
    if category_map is not None and not rue_ok:
        warnings.warn(
            f"RUE is degenerate with C={category_map.C}; omitted from the report",
            DegenerateMetricWarning,
            stacklevel=2,
        )
    for user in sorted(recommendations):
        pos = set(test_positives.get(user, ()))
        if not pos:
            skipped += 1
            continue
        ranked = list(recommendations[user])
        hist = list(history_positives.get(user, ()))
        row: dict[str, float] = {}
        for K in cutoffs:
            vals = {
                "recall": recall_at_k(ranked, pos, K),
                "ndcg": ndcg_at_k(ranked, pos, K),
                "rup": rup_at_k(ranked, pos, popularity, K),
            }
            if rue_ok:
                vals["rue"] = rue_at_k(ranked, pos, hist, category_map, K)
            for m, v in vals.items():
                if v is None:
                    continue
                key = f"{m}@{K}"
                row[key] = v
                sums[key] = sums.get(key, 0.0) + v
                report.users[key] = report.users.get(key, 0) + 1
        report.per_user[user] = row
    if skipped:
        _log.info("skipped %d users without test positives", skipped)
    report.skipped = skipped
    for key, total in sums.items():
        report.values[key] = total / report.users[key]
    return report
