import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from upliftrec import causal, synth
from upliftrec.causal import AdrfMatrix, HyperParams, SampleTable
from upliftrec.data import CategoryMap, InteractionRecord

CMAP = CategoryMap({0: 0, 1: 0, 2: 1, 3: 2, 4: 2, 5: 0, 6: 1, 7: 2}, 3)


def trail(items, labels=None, user=0):
    labels = labels or [0] * len(items)
    return [InteractionRecord(user, i, y, p) for p, (i, y) in enumerate(zip(items, labels))]


def test_split_trail_rules():
    h, w = causal.split_trail(trail(range(8)), 0.5)
    assert (len(h), len(w)) == (4, 4)
    h, w = causal.split_trail(trail(range(5)), 0.5)
    assert (len(h), len(w)) == (3, 2)
    assert causal.split_trail(trail([1]), 0.5) is None
    assert h[-1].position < w[0].position


def test_treatment_ratios():
    t = causal.compute_treatment(trail([0, 1, 2, 3, 4]), CMAP)
    assert np.allclose(t, [0.4, 0.2, 0.4])
    assert causal.compute_treatment(trail([0, 1, 5]), CMAP).tolist() == [1.0, 0.0, 0.0]
    with pytest.raises(ValueError):
        causal.compute_treatment([], CMAP)


@given(st.lists(st.integers(0, 7), min_size=1, max_size=30), st.lists(st.integers(0, 1), min_size=30, max_size=30))
@settings(max_examples=200)
def test_treatment_sums_to_one_and_outcome_in_unit_range(items, labels):
    window = trail(items, labels[: len(items)])
    assert abs(causal.compute_treatment(window, CMAP).sum() - 1.0) <= causal.SUM_TOL
    out = causal.compute_outcome(window, CMAP)
    assert np.all((out.y[out.observed] >= 0) & (out.y[out.observed] <= 1))


def test_outcome_per_category_ctr():
    # category 0: 4 exposures, 2 clicks; category 1: 1 exposure, 0 clicks; category 2: none
    out = causal.compute_outcome(trail([0, 1, 5, 0, 2], [1, 0, 1, 0, 0]), CMAP)
    assert out.y[0] == 0.5 and out.y[1] == 0.0
    assert out.observed.tolist() == [True, True, False]
    allpos = causal.compute_outcome(trail([0, 2, 3], [1, 1, 1]), CMAP)
    assert allpos.y.tolist() == [1.0, 1.0, 1.0]


def test_discretize_examples():
    assert causal.discretize(0.0, 5) == 0
    assert causal.discretize(1.0, 5) == 5
    assert causal.discretize(0.5, 5) == 3  # 2.5 rounds up
    assert causal.discretize(np.array([0.4, 0.2, 0.4]), 5).tolist() == [2, 1, 2]
    assert causal.discretize(np.array([0.4, 0.0, 0.6]), 5).tolist() == [2, 0, 3]


@given(st.lists(st.integers(0, 9), min_size=1, max_size=12), st.integers(1, 10))
def test_discretized_vector_sums_to_K(counts, K):
    if sum(counts) == 0:
        return
    t = np.array(counts) / sum(counts)
    slots = causal.discretize(t, K)
    assert slots.sum() == K
    assert np.all(np.abs(slots - t * K) < 1 + 1e-9)


def test_augmented_dataset_skips_short_trails(caplog):
    trails = {0: trail([0, 1, 2, 3]), 1: trail([4], user=1), 2: trail([5, 6, 7], user=2)}
    samples = causal.build_augmented_dataset(trails, 0.5, CMAP)
    assert [s.source_user_id for s in samples] == [0, 2]
    assert [s.sample_id for s in samples] == [0, 1]
    assert len(samples) <= len(trails)
    with pytest.raises(causal.NoSamplesError):
        causal.build_augmented_dataset({1: trail([4], user=1)}, 0.5, CMAP)


def test_augmented_round_trip(tmp_path):
    trails = {0: trail([0, 1, 2, 3], [1, 0, 1, 0]), 2: trail([5, 6, 7], [0, 1, 1], user=2)}
    samples = causal.build_augmented_dataset(trails, 0.5, CMAP)
    causal.write_augmented(tmp_path / "aug.tsv", samples)
    back = causal.read_augmented(tmp_path / "aug.tsv", trails)
    for a, b in zip(samples, back):
        assert a.history == b.history
        assert np.array_equal(a.treatment, b.treatment)
        assert np.array_equal(a.outcome.y, b.outcome.y)
        assert np.array_equal(a.outcome.observed, b.outcome.observed)


def test_propensity_examples():
    P = causal.estimate_propensity(np.array([[2, 1, 2]] * 4), 3, 5, 0.01)
    assert P.P[0, 2] == 1.0 and P.P[0, 0] == 0.01
    uni = causal.estimate_propensity(np.array([[k, 0, 5 - k] for k in range(6)]), 3, 5, 0.01)
    assert np.allclose(uni.raw[0], 1 / 6)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=40), st.floats(0.001, 0.5))
def test_propensity_rows_sum_to_one_before_clamp(rows, v_p):
    P = causal.estimate_propensity(np.array(rows), 2, 5, v_p)
    assert np.allclose(P.raw.sum(axis=1), 1.0)
    assert np.all(P.P >= v_p)


def _table(slots_c, ys, C=1, K=5):
    # single-category samples whose slot for category 0 is given
    t = np.zeros((len(slots_c), C))
    t[:, 0] = np.asarray(slots_c) / K
    y = np.zeros((len(ys), C))
    y[:, 0] = ys
    obs = np.zeros((len(ys), C), dtype=bool)
    obs[:, 0] = True
    return SampleTable(np.arange(len(ys)), t, y, obs)


def test_adrf_hand_example():
    table = _table([2, 2, 2], [0.2, 0.4, 0.6])
    P = causal.PropensityMatrix(np.full((1, 6), 0.5), 0.01, np.full((1, 6), 0.5))
    A = causal.estimate_adrf(table, P, 1.0, 0.01, 1, 5)
    # independent scalar computation
    expected = ((0.2 + 0.4 + 0.6) / 3) / 0.5**1.0
    assert A.A[0, 2] == expected
    assert abs(A.A[0, 2] - 0.8) < 1e-12
    assert A.A[0, 1] == 0.01 and not A.filled[0, 1]
    assert A.A[0, 0] == 0.0 and A.filled[0, 0]


def test_adrf_gamma_zero_is_slot_mean_and_excludes_unobserved():
    t = np.array([[0.4, 0.6], [0.4, 0.6], [0.4, 0.6]])
    y = np.array([[0.5, 0.2], [0.25, 0.9], [0.0, 0.1]])
    obs = np.array([[True, True], [True, True], [False, True]])
    table = SampleTable(np.arange(3), t, y, obs)
    P = causal.estimate_propensity(table.slots(5), 2, 5, 0.01)
    A = causal.estimate_adrf(table, P, 0.0, 0.1, 2, 5)
    assert A.A[0, 2] == (0.5 + 0.25) / 2
    assert A.A[1, 3] == np.mean([0.2, 0.9, 0.1])
    assert A.A[:, 0].tolist() == [0.0, 0.0]


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=40)
def test_adrf_invariants_on_random_samples(seed):
    rng = np.random.default_rng(seed)
    n, C, K = int(rng.integers(1, 40)), 3, 5
    counts = rng.multinomial(5, np.ones(C) / C, size=n)
    t = counts / 5
    obs = counts > 0
    y = np.where(obs, rng.random((n, C)), 0.0)
    table = SampleTable(np.arange(n), t, y, obs)
    P = causal.estimate_propensity(table.slots(K), C, K, 0.01)
    A0 = causal.estimate_adrf(table, P, 0.0, 0.01, C, K)
    A1 = causal.estimate_adrf(table, P, 1.0, 0.01, C, K)
    assert np.all(A0.A[:, 0] == 0) and np.all(A1.A[:, 0] == 0)
    f = A0.filled
    assert np.all((A0.A[f] >= 0) & (A0.A[f] <= 1))
    assert np.all(A1.A[f] >= A0.A[f])
    assert np.all(A0.A[~f] == 0.01)


def test_mtef_case_study():
    A = np.full((3, 6), 0.01)
    filled = np.zeros((3, 6), dtype=bool)
    A[:, 0] = 0.0
    filled[:, 0] = True
    A[0, 1], filled[0, 1] = 0.36, True
    A[1, 1], A[1, 2] = 0.15, 0.25
    filled[1, 1] = filled[1, 2] = True
    A[2, 4], filled[2, 4] = 0.3, True
    m = causal.compute_mtef(AdrfMatrix(A, filled, 0.01), [0, 1, 4], 1, 0.05)
    assert m.m.tolist() == [0.36, 0.1, 0.05]


def test_mtef_flat_row_and_boundary():
    A = np.array([[0.0, 0.2, 0.2, 0.2]])
    filled = np.ones_like(A, dtype=bool)
    assert causal.compute_mtef(AdrfMatrix(A, filled, 0.01), [1], 1, 0.05).m[0] == 0.0
    assert causal.compute_mtef(AdrfMatrix(A, filled, 0.01), [3], 1, 0.05).m[0] == 0.05
    A2 = np.array([[0.0, 0.1, 0.3, 0.7]])
    m = causal.compute_mtef(AdrfMatrix(A2, filled, 0.01), [1], 2, 0.05).m[0]
    assert m == (0.7 - 0.1) / 2


def test_hyperparams_validation_and_grid():
    assert HyperParams(C=5, K=6, N=10, K_s=90).range_violations() == []
    assert HyperParams(C=4).range_violations()
    assert HyperParams(alpha=0.0).range_violations()
    assert HyperParams(K_p=30).range_violations() == []
    assert HyperParams(K_p=20).range_violations()
    with pytest.raises(ValueError):
        HyperParams(K=11, N=10)
    with pytest.raises(ValueError):
        HyperParams(lam=1.0)


def test_estimate_for_user_excludes_self():
    C, K = 2, 4
    t = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
    y = np.array([[0.9, 0.0], [0.0, 0.1], [0.3, 0.3]])
    obs = t > 0
    table = SampleTable(np.array([7, 8, 9]), t, y, obs)
    vecs = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    hp = HyperParams(C=C, K=K, N=4, K_p=None, K_s=1, gamma=0.0)
    _, A = causal.estimate_for_user(np.array([1.0, 0.0]), vecs, table, hp, exclude=table.source_users == 7)
    # nearest remaining sample is the (0.5, 0.5) one
    assert A.A[0, 2] == 0.3 and not A.filled[0, 4]


def _fixed_policy_samples(world, counts, window_len, seed):
    """Every window shows the same category counts: propensity 1 on the logged slots."""
    rng = np.random.default_rng(seed)
    n = len(world.users)
    t = np.tile(np.asarray(counts) / window_len, (n, 1))
    y = np.zeros((n, world.C))
    obs = np.tile(np.asarray(counts) > 0, (n, 1))
    for u, truth in enumerate(world.users):
        for c, k in enumerate(counts):
            if k:
                y[u, c] = rng.binomial(k, truth.ctr(c, k / window_len)) / k
    return SampleTable(np.arange(n), t, y, obs)


def test_known_propensity_consistency():
    world = synth.make_world(6000, 3, 10, seed=2)
    K = 5
    counts = (2, 1, 2)
    table = _fixed_policy_samples(world, counts, K, seed=2)
    P = causal.estimate_propensity(table.slots(K), 3, K, 0.01)
    A = causal.estimate_adrf(table, P, 1.0, 0.01, 3, K)
    truth = synth.population_curve(world, K)
    errs = [abs(A.A[c, k] - truth[c, k]) for c, k in enumerate(counts)]
    assert all(P.P[c, k] == 1.0 for c, k in enumerate(counts))
    assert np.mean(errs) < 0.02


def test_format_grid_marks_unfilled():
    A = np.array([[0.0, 0.5, 0.01]])
    text = causal.format_grid(A, np.array([[True, True, False]]))
    assert "0.010*" in text and "0.500 " in text
