import numpy as np
import pytest

import oracles
from upliftrec import causal, synth
from upliftrec.synth import Policy, UserTruth


def truth(peak, base, width, dominant=0):
    return UserTruth(np.array(peak), np.array(base), np.array(width), dominant)


def test_curve_examples():
    u = truth([0.5, 0.25], [0.8, 0.3], [0.5, 0.25])
    assert u.ctr(0, 0.5) == 0.8
    assert u.ctr(0, 0.0) == 0.0
    assert u.ctr(1, 0.5) == 0.0
    assert u.ctr(1, 0.9) == 0.0
    w = synth.SyntheticWorld((u,), 2, 5)
    with pytest.raises(ValueError):
        synth.true_ctr(w, 0, 0, 1.5)


def test_policy_parsing_and_validation():
    assert Policy.parse("uniform") == Policy()
    assert Policy.parse("confounded:0.7") == Policy("confounded", 0.7)
    with pytest.raises(ValueError):
        Policy("confounded", 1.0)
    with pytest.raises(ValueError):
        Policy.parse("greedy")


def test_zero_strength_matches_uniform():
    world = synth.make_world(20, 3, 30, seed=1)
    a = synth.simulate_logs(world, Policy(), 3, 5, seed=4)
    b = synth.simulate_logs(world, Policy("confounded", 0.0), 3, 5, seed=4)
    assert a == b


def test_simulation_is_deterministic_and_well_formed():
    world = synth.make_world(15, 3, 20, seed=0)
    a = synth.simulate_logs(world, Policy("confounded", 0.7), 4, 5, seed=3)
    assert a == synth.simulate_logs(world, Policy("confounded", 0.7), 4, 5, seed=3)
    for u, tr in a.items():
        assert [r.position for r in tr] == list(range(20))
        assert len({r.item_id for r in tr}) == 20


def test_every_composition_reachable():
    for pol in (Policy(), Policy("confounded", 0.7)):
        probs = synth.composition_probabilities(pol, 3, 1, 5)
        assert len(probs) == oracles.composition_count(5, 3)
        assert all(p > 0 for p in probs.values())
        assert abs(sum(probs.values()) - 1) < 1e-12


def test_uniform_slot_frequencies():
    rng = np.random.default_rng(0)
    C, L = 3, 5
    counts = np.array([synth.sample_counts(rng, Policy(), C, 0, L) for _ in range(100_000)])
    exact = synth.composition_probabilities(Policy(), C, 0, L)
    for c in range(C):
        freq = np.bincount(counts[:, c], minlength=L + 1) / len(counts)
        marginal = np.zeros(L + 1)
        for comp, p in exact.items():
            marginal[comp[c]] += p
        assert np.max(np.abs(freq - marginal)) < 0.02


def test_confounded_frequencies_match_exact_distribution():
    rng = np.random.default_rng(1)
    pol = Policy("confounded", 0.7)
    draws = [tuple(synth.sample_counts(rng, pol, 3, 2, 5)) for _ in range(50_000)]
    exact = synth.composition_probabilities(pol, 3, 2, 5)
    for comp, p in exact.items():
        assert abs(draws.count(comp) / len(draws) - p) < 0.01


def test_click_rate_converges_to_truth():
    u = truth([0.4, 0.7, 0.1], [0.6, 0.5, 0.4], [0.6, 0.8, 0.5])
    world = synth.SyntheticWorld((u,), 3, 400_000)
    trails = synth.simulate_logs(world, Policy(), 100_000, 5, seed=2)
    cmap_of = world.category_of
    shown = {}
    for r in trails[0]:
        key = r.position // 5
        shown.setdefault(key, []).append(r)
    hits = {}
    for window in shown.values():
        cats = [cmap_of(r.item_id) for r in window]
        for c in range(3):
            n = cats.count(c)
            if n:
                agg = hits.setdefault((c, n), [0, 0])
                agg[0] += sum(r.label for r, k in zip(window, cats) if k == c)
                agg[1] += n
    for (c, n), (clicks, total) in hits.items():
        if total >= 20_000:
            assert abs(clicks / total - u.ctr(c, n / 5)) < 0.01


def test_oracle_examples():
    u = truth([1.0, 0.5, 0.5], [1.0, 0.0, 0.0], [2.0, 0.5, 0.5])
    world = synth.SyntheticWorld((u,), 3, 10)
    slots, _ = synth.oracle_best_treatment(world, 0, 5, 5)
    assert slots.tolist() == [5, 0, 0]
    with pytest.raises(ValueError):
        synth.oracle_best_treatment(synth.make_world(1, 7, 2), 0, 5, 5)


def test_oracle_dominates_random_allocations():
    world = synth.make_world(10, 4, 5, seed=3)
    rng = np.random.default_rng(3)
    for u in range(10):
        _, best = synth.oracle_best_treatment(world, u, 6, 12)
        t = world.users[u]
        for _ in range(100):
            comp = rng.multinomial(6, np.ones(4) / 4)
            val = sum((k / 6) * 12 * t.ctr(c, k / 6) for c, k in enumerate(comp))
            assert best >= val


def test_oracle_symmetric_users_compare_by_value():
    u = truth([0.5, 0.5], [0.7, 0.7], [0.6, 0.6])
    world = synth.SyntheticWorld((u,), 2, 10)
    slots, val = synth.oracle_best_treatment(world, 0, 4, 4)
    mirrored = sum((k / 4) * 4 * u.ctr(c, k / 4) for c, k in enumerate(slots[::-1]))
    assert val == mirrored


def test_truth_file_round_trip(tmp_path):
    world = synth.make_world(4, 3, 7, seed=5)
    synth.write_truth(tmp_path / "t.tsv", world)
    back = synth.read_truth(tmp_path / "t.tsv", 7, 5)
    for a, b in zip(world.users, back.users):
        assert np.array_equal(a.peak, b.peak) and np.array_equal(a.width, b.width) and a.dominant == b.dominant


def test_recommendation_dataset_split():
    world = synth.make_world(10, 3, 30, seed=0)
    train, unbiased = synth.recommendation_dataset(world, Policy("confounded", 0.5), 2, 1, 5)
    assert len(train) == 100 and len(unbiased) == 50
    for u in range(10):
        seen = {r.item_id for r in train if r.user_id == u}
        assert not seen & {r.item_id for r in unbiased if r.user_id == u}


def test_uniform_logging_recovers_population_curve():
    world = synth.make_world(10_000, 3, 50, seed=0)
    trails = synth.simulate_logs(world, Policy(), 2, 5, seed=0)
    samples = causal.build_augmented_dataset(trails, 0.5, world.category_map())
    table = causal.SampleTable.from_samples(samples)
    P = causal.estimate_propensity(table.slots(5), 3, 5, 0.01)
    A = causal.estimate_adrf(table, P, 0.0, 0.01, 3, 5)
    cells = A.filled.copy()
    cells[:, 0] = False
    err = np.abs(A.A - synth.population_curve(world, 5))[cells].mean()
    assert err < 0.03
