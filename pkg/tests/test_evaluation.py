import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kahc.ahc import Dendrogram, FlatClustering
from kahc.evaluation import (EvaluationReport, Violation, check_separation_condition,
                             dendrogram_purity, dendrogram_purity_exact, dendrogram_purity_mc,
                             entanglements, evaluate, f1_flat)

from conftest import f1_oracle, leaf_sets, purity_oracle, random_dendrogram, random_labels

# 4 leaves A,A,B,B merged (1,3), (2,4), root; 0-based ids below
IMPURE = Dendrogram(np.array([0, 1, 4]), np.array([2, 3, 5]), np.array([0.9, 0.8, 0.1]))
AABB = np.array([1, 1, 2, 2])


# --- purity -------------------------------------------------------------------

def test_purity_hand_example():
    assert dendrogram_purity_exact(IMPURE, AABB) == 0.5
    assert dendrogram_purity_mc(IMPURE, AABB, samples=10_000, seed=1) == pytest.approx(0.5, abs=0.02)


def test_purity_pure_and_single_cluster(rng):
    T = Dendrogram(np.array([0, 2, 4]), np.array([1, 3, 5]), np.array([0.9, 0.8, 0.1]))
    assert dendrogram_purity_exact(T, AABB) == 1.0
    assert dendrogram_purity_mc(T, AABB, samples=50, seed=0) == 1.0
    R = random_dendrogram(9, rng)
    assert dendrogram_purity_exact(R, np.ones(9)) == 1.0


def test_purity_all_singleton_classes():
    assert dendrogram_purity_exact(IMPURE, [1, 2, 3, 4]) == 1.0


def test_purity_rejects_bad_labels():
    with pytest.raises(ValueError):
        dendrogram_purity_exact(IMPURE, [1, 2, 3])
    with pytest.raises(ValueError):
        dendrogram_purity_exact(IMPURE, np.array([1.0, np.nan, 2.0, 2.0]))
    with pytest.raises(ValueError):
        dendrogram_purity_mc(IMPURE, AABB, samples=0)


def test_purity_matches_oracle(rng):
    for _ in range(60):
        n = int(rng.integers(2, 13))
        T = random_dendrogram(n, rng)
        labels = random_labels(n, int(rng.integers(1, min(n, 4) + 1)), rng)
        assert dendrogram_purity_exact(T, labels) == pytest.approx(purity_oracle(T, labels), abs=1e-12)


def test_purity_mc_converges(rng):
    T = random_dendrogram(40, rng)
    labels = random_labels(40, 3, rng)
    exact = dendrogram_purity_exact(T, labels)
    err = {s: np.mean([abs(dendrogram_purity_mc(T, labels, s, seed) - exact) for seed in range(10)])
           for s in (100, 100_000)}
    assert err[100_000] < err[100]
    # unbiased: the seed average is close to the exact value
    assert np.mean([dendrogram_purity_mc(T, labels, 2000, seed) for seed in range(40)]) == \
        pytest.approx(exact, abs=0.01)


def test_purity_switches_to_mc_above_threshold(rng):
    T = random_dendrogram(30, rng)
    labels = random_labels(30, 3, rng)
    assert dendrogram_purity(T, labels) == dendrogram_purity_exact(T, labels)
    assert dendrogram_purity(T, labels, samples=500, seed=3, exact_max_n=10) == \
        dendrogram_purity_mc(T, labels, 500, 3)


# --- entanglements ---------------------------------------------------------------

def test_entanglement_hand_example():
    rep = entanglements(IMPURE, AABB)
    assert (rep.count, rep.total_level, rep.avg_level) == (3, 6, 2.0)
    assert rep.per_merge_flags == (True, True, True)


def test_entanglement_pure_two_clusters():
    T = Dendrogram(np.array([0, 2, 4]), np.array([1, 3, 5]), np.array([0.9, 0.8, 0.1]))
    rep = entanglements(T, AABB)
    assert (rep.count, rep.avg_level) == (1, 3.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 20), st.integers(1, 4), st.integers(0, 2 ** 31))
def test_entanglement_invariant_under_child_swap(n, kappa, seed):
    rng = np.random.default_rng(seed)
    T = random_dendrogram(n, rng)
    labels = random_labels(n, min(kappa, n), rng)
    flip = rng.random(n - 1) < 0.5
    S = Dendrogram(np.where(flip, T.right, T.left), np.where(flip, T.left, T.right), T.heights)
    a, b = entanglements(T, labels), entanglements(S, labels)
    assert (a.count, a.total_level) == (b.count, b.total_level)
    if a.count:
        assert 1 <= a.avg_level <= n - 1
    assert dendrogram_purity_exact(T, labels) == pytest.approx(dendrogram_purity_exact(S, labels))


# --- separation condition ------------------------------------------------------------

def test_separation_hand_example():
    v = check_separation_condition(IMPURE, AABB, (1, 2))
    assert v[0] == Violation(1, 1, 1, (0, 2))
    T = Dendrogram(np.array([0, 2, 4]), np.array([1, 3, 5]), np.array([0.9, 0.8, 0.1]))
    assert check_separation_condition(T, AABB, (1, 2)) == []


def test_separation_errors():
    with pytest.raises(ValueError):
        check_separation_condition(IMPURE, AABB, (1, 1))
    with pytest.raises(ValueError):
        check_separation_condition(IMPURE, AABB, (1, 7))


def restricted_subtrees(T, members):
    """Leaf sets of the dendrogram induced on ``members``."""
    return {s & members for s in leaf_sets(T).values() if s & members}


def test_separation_exhaustive_small(rng):
    # empty violation list <=> both classes are subtrees of the tree restricted to their union
    for _ in range(300):
        n = int(rng.integers(2, 11))
        T = random_dendrogram(n, rng)
        labels = random_labels(n, int(rng.integers(2, min(n, 4) + 1)), rng)
        for ci, cj in itertools.combinations(np.unique(labels).tolist(), 2):
            a = frozenset(np.flatnonzero(labels == ci).tolist())
            b = frozenset(np.flatnonzero(labels == cj).tolist())
            family = restricted_subtrees(T, a | b)
            expected = a in family and b in family
            assert (check_separation_condition(T, labels, (ci, cj)) == []) == expected


# --- F1 -------------------------------------------------------------------------

def test_f1_examples():
    f1, p, r = f1_flat(FlatClustering.from_assignment([1, 1, 2, 2]), AABB)
    assert (f1, p, r) == (1.0, [1.0, 1.0], [1.0, 1.0])
    f1, p, r = f1_flat(FlatClustering.from_assignment([1, 1, 1, 1]), AABB)
    assert f1 == pytest.approx(1 / 3)
    assert sorted(p) == [0.0, 0.5] and sorted(r) == [0.0, 1.0]


def test_f1_all_noise_and_noise_hurts_recall():
    f1, _, _ = f1_flat(FlatClustering.from_assignment([0, 0, 0, 0], noise=0), AABB)
    assert f1 == 0.0
    f1, p, r = f1_flat(FlatClustering.from_assignment([1, 0, 2, 2], noise=0), AABB)
    assert r[0] == 0.5 and p[0] == 1.0
    assert f1 == pytest.approx((2 * 0.5 / 1.5 + 1.0) / 2)


def test_f1_shape_mismatch():
    with pytest.raises(ValueError):
        f1_flat(FlatClustering.from_assignment([1, 2]), AABB)


def test_f1_returns_python_floats():
    f1, p, r = f1_flat(FlatClustering.from_assignment([1, 2, 2, 2]), AABB)
    assert all(type(v) is float for v in [f1, *p, *r])


def test_f1_matches_factorial_oracle(rng):
    for _ in range(60):
        n = int(rng.integers(4, 30))
        kappa = int(rng.integers(1, min(6, n) + 1))
        k = int(rng.integers(1, min(6, n) + 1))
        truth = random_labels(n, kappa, rng)
        pred = FlatClustering.from_assignment(rng.integers(0, k + 1, size=n), noise=0)
        assert f1_flat(pred, truth)[0] == pytest.approx(f1_oracle(pred.labels, truth), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=3, max_size=25), st.integers(0, 2 ** 31))
def test_f1_invariant_to_label_renaming(raw, seed):
    rng = np.random.default_rng(seed)
    truth = rng.integers(1, 4, size=len(raw))
    rename = dict(zip(range(1, 5), rng.permutation(np.arange(10, 14)).tolist()))
    rename[0] = 0
    a = FlatClustering.from_assignment(raw, noise=0)
    b = FlatClustering.from_assignment([rename[v] for v in raw], noise=0)
    assert f1_flat(a, truth)[0] == pytest.approx(f1_flat(b, truth)[0], abs=1e-12)
    assert 0.0 <= f1_flat(a, truth)[0] <= 1.0


# --- consistency triad -------------------------------------------------------------

def test_consistency_triad(rng):
    for trial in range(200):
        n = int(rng.integers(2, 16))
        kappa = int(rng.integers(1, min(n, 4) + 1))
        labels = random_labels(n, kappa, rng)
        T = random_dendrogram(n, rng)
        pure = dendrogram_purity_exact(T, labels) == 1.0
        minimal = entanglements(T, labels).count == kappa - 1
        clean = all(check_separation_condition(T, labels, pair) == []
                    for pair in itertools.combinations(range(1, kappa + 1), 2))
        assert pure == minimal == clean


# --- reports ---------------------------------------------------------------------

def test_evaluate_and_serialise():
    flat = FlatClustering.from_assignment([1, 1, 2, 2])
    rep = evaluate(IMPURE, flat, AABB, "gk(sigma=1)", {"kappa": 2, "m": 0})
    d = json.loads(rep.to_json())
    assert list(d) == list(EvaluationReport.FIELDS)
    assert list(d["params"]) == ["kappa", "m"]
    assert d["dendrogram_purity"] == 0.5 and d["f1"] == 1.0 and d["entanglement_count"] == 3
    row = rep.csv_row()
    assert row[:3] == ["gk(sigma=1)", "kappa=2;m=0", 0.5]
    none = evaluate(None, None, AABB)
    assert none.flat()["dendrogram_purity"] is None and none.csv_row()[2] == ""
