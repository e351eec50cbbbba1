import math
import warnings

import numpy as np
import pytest

import oracles
from upliftrec import evaluation as ev
from upliftrec.data import CategoryMap, InteractionRecord, build_popularity

C5 = CategoryMap({i: i % 5 for i in range(40)}, 5)


def test_recall_examples():
    assert ev.recall_at_k([1, 2, 3], [1, 2], 3) == 1.0
    assert ev.recall_at_k([1, 2, 3], [7], 3) == 0.0
    assert ev.recall_at_k([1, 2, 3, 4], [1, 3, 8, 9], 4) == 0.5
    assert ev.recall_at_k([1, 2], [], 2) is None
    with pytest.raises(ValueError):
        ev.recall_at_k([1], [1], 2)


def test_ndcg_examples():
    assert ev.ndcg_at_k([5, 6], [5], 2) == 1.0
    assert abs(ev.ndcg_at_k([6, 5], [5], 2) - 0.6309) < 1e-4
    assert ev.ndcg_at_k([6, 5], [5], 2) == 1 / math.log2(3)
    assert ev.ndcg_at_k([6, 7], [5], 2) == 0.0


def test_rue_examples():
    # history puts categories 0, 1, 2 on top; items in 3 and 4 are unexpected
    history = [0, 5, 10, 1, 6, 2]
    assert ev.rue_at_k([0, 1, 2], [0, 1], history, C5, 3) is None
    assert ev.rue_at_k([3, 0, 1], [3, 0], history, C5, 3) == 1.0
    with pytest.warns(ev.DegenerateMetricWarning):
        assert ev.rue_at_k([0], [0], [], CategoryMap({0: 0}, 3), 1) is None


def test_top_categories_tie_break():
    assert ev.top_categories([4, 9, 3], C5) == [4, 3, 0]


def test_rup_examples():
    counts = [9, 8, 7, 6, 5, 4, 3, 2, 1, 0]
    train = [InteractionRecord(k, item, 1, 0) for item, n in enumerate(counts) for k in range(n)]
    pop = build_popularity(train, range(10))
    assert ev.rup_at_k([0, 1], [0], pop, 2) is None
    assert ev.rup_at_k([5, 0], [5, 6], pop, 2) == 0.5


def test_macro_average_and_skips():
    pop = build_popularity([], range(40))
    rep = ev.evaluate_run({0: [1, 2], 1: [3, 4], 2: [5, 6]}, {0: {1}, 1: {9}}, {}, None, pop, cutoffs=(1, 2))
    assert rep.get("recall", 1) == 0.5
    assert rep.users["recall@1"] == 2 and rep.skipped == 1
    assert "recall@2" in rep.values and "rue@1" not in rep.values
    assert "recall.1 = 0.5" in rep.as_kv()
    assert rep.as_table().splitlines()[0].split() == ["metric", "@1", "@2", "users"]


def test_evaluate_warns_when_rue_degenerate():
    pop = build_popularity([], range(3))
    with pytest.warns(ev.DegenerateMetricWarning):
        ev.evaluate_run({0: [0]}, {0: {0}}, {}, CategoryMap({0: 0, 1: 1, 2: 2}, 3), pop, (1,))


def _random_instance(rng):
    n_items = 40
    ranked = rng.permutation(n_items)[:20].tolist()
    positives = set(rng.choice(n_items, int(rng.integers(0, 8)), replace=False).tolist())
    history = rng.choice(n_items, int(rng.integers(0, 12))).tolist()
    counts = {i: int(rng.integers(0, 6)) for i in range(n_items)}
    return ranked, positives, history, counts


def test_metrics_match_brute_force():
    rng = np.random.default_rng(0)
    cat = {i: C5[i] for i in range(40)}
    for _ in range(100):
        ranked, positives, history, counts = _random_instance(rng)
        train = [InteractionRecord(k, i, 0, 0) for i, n in counts.items() for k in range(n)]
        pop = build_popularity(train, range(40))
        flags = oracles.unpopular_flags(counts)
        for K in (5, 10, 20):
            assert ev.recall_at_k(ranked, positives, K) == oracles.recall(ranked, positives, K)
            assert ev.ndcg_at_k(ranked, positives, K) == oracles.ndcg(ranked, positives, K)
            assert ev.rup_at_k(ranked, positives, pop, K) == oracles.rup(ranked, positives, flags, K)
            assert ev.rue_at_k(ranked, positives, history, C5, K) == oracles.rue(ranked, positives, history, cat, 5, K)


def test_monotone_in_cutoff_and_shuffle_invariant():
    rng = np.random.default_rng(1)
    for _ in range(50):
        ranked, positives, _, _ = _random_instance(rng)
        if not positives:
            continue
        r = [ev.recall_at_k(ranked, positives, K) for K in range(1, 21)]
        assert all(a <= b for a, b in zip(r, r[1:]))
        # the unnormalized gain is monotone; the ideal gain grows with K too
        idcg = [sum(1 / math.log2(j + 2) for j in range(min(K, len(positives)))) for K in range(1, 21)]
        gains = [ev.ndcg_at_k(ranked, positives, K) * idcg[K - 1] for K in range(1, 21)]
        assert all(a <= b + 1e-12 for a, b in zip(gains, gains[1:]))
        tail = ranked[10:]
        rng.shuffle(tail)
        shuffled = ranked[:10] + tail
        assert ev.ndcg_at_k(shuffled, positives, 10) == ev.ndcg_at_k(ranked, positives, 10)
        assert ev.recall_at_k(shuffled, positives, 10) == ev.recall_at_k(ranked, positives, 10)


def test_ndcg_can_drop_with_cutoff():
    assert ev.ndcg_at_k([1, 9], [1, 2], 1) == 1.0
    assert ev.ndcg_at_k([1, 9], [1, 2], 2) < 1.0


def test_report_values_in_unit_range():
    rng = np.random.default_rng(2)
    recs = {u: rng.permutation(40)[:20].tolist() for u in range(30)}
    test = {u: set(rng.choice(40, 5, replace=False).tolist()) for u in range(30)}
    hist = {u: rng.choice(40, 6).tolist() for u in range(30)}
    pop = build_popularity([InteractionRecord(0, i, 1, i) for i in range(10)], range(40))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        rep = ev.evaluate_run(recs, test, hist, C5, pop)
    assert set(rep.values) == {f"{m}@{k}" for m in ev.METRICS for k in (10, 20)}
    assert all(0.0 <= v <= 1.0 for v in rep.values.values())
