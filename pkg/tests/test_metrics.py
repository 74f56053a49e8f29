import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cocodesk.errors import InsufficientData, MissingMate
from cocodesk.metrics import identify, pair_stats, sweep_thresholds, verify


def test_pair_stats_constructed_geometry():
    feats = np.array([[1.0, 0.0]] * 3 + [[0.0, 2.0]] * 3)
    st_ = pair_stats(feats, [1, 1, 1, 2, 2, 2])
    assert st_.mean_pos == pytest.approx(1.0)
    assert st_.mean_neg == pytest.approx(0.0)
    assert st_.separation == st_.mean_pos - st_.mean_neg
    assert st_.positive_counts.sum() == 6 and st_.negative_counts.sum() == 9
    assert len(st_.bin_edges) == 51


def test_pair_stats_errors():
    with pytest.raises(InsufficientData):
        pair_stats(np.eye(3), [1, 1, 1])
    with pytest.raises(InsufficientData):
        pair_stats(np.eye(3), [1, 2, 3])


def test_pair_stats_sampling_is_seeded():
    rng = np.random.default_rng(0)
    feats, labels = rng.normal(size=(60, 4)), rng.integers(1, 4, 60)
    a = pair_stats(feats, labels, max_pairs=50, seed=3)
    b = pair_stats(feats, labels, max_pairs=50, seed=3)
    np.testing.assert_array_equal(a.positive_cosines, b.positive_cosines)
    assert a.positive_cosines.size == 50 and a.negative_cosines.size == 50
    assert np.all(np.abs(a.negative_cosines) <= 1.0)


def test_verify_examples():
    r = verify([0.9, 0.8, 0.1, 0.2], [True, True, False, False])
    assert r.accuracy == 1.0 and r.auc == 1.0
    assert 0.2 < r.best_threshold < 0.8
    r = verify([0.5] * 5, [True, True, True, False, False])
    assert r.accuracy == pytest.approx(0.6)
    with pytest.raises(InsufficientData):
        verify([0.1, 0.2], [True, True])


def _brute_force_accuracy(scores, same):
    best = 0.0
    for t in sweep_thresholds(scores):
        best = max(best, np.mean((scores > t) == same))
    return best


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_verify_matches_brute_force_and_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 40))
    scores = np.round(rng.uniform(-1, 1, n), 1)
    same = rng.random(n) < 0.5
    same[0], same[1] = True, False
    r = verify(scores, same)
    assert r.accuracy == pytest.approx(_brute_force_accuracy(scores, same), abs=1e-15)
    assert 0.0 <= r.auc <= 1.0
    assert np.all(np.diff(r.fpr) >= 0) and np.all(np.diff(r.tpr) >= 0)
    assert verify(np.exp(3 * scores) + 2, same).accuracy == r.accuracy


def test_identify_trivial_cases():
    rng = np.random.default_rng(0)
    gallery = rng.normal(size=(5, 6))
    ids = np.arange(1, 6)
    res = identify(gallery, ids, gallery, ids, np.zeros((0, 6)), (0,), trials=2)
    assert res.top1_accuracy == [1.0]
    distractors = rng.normal(size=(50, 6))
    res = identify(gallery, ids, gallery, ids, distractors, (10, 50), trials=3)
    assert res.top1_accuracy == [1.0, 1.0]
    with pytest.raises(MissingMate):
        identify(gallery, ids + 10, gallery, ids, distractors, (10,))
    with pytest.raises(InsufficientData):
        identify(gallery, ids, gallery, ids, distractors, (100,))


def test_identify_against_exhaustive_ranking():
    rng = np.random.default_rng(8)
    probes = rng.normal(size=(3, 4))
    gallery = rng.normal(size=(3, 4))
    ids = np.array([1, 2, 3])
    pool = rng.normal(size=(6, 4))
    res = identify(probes, ids, gallery, ids, pool, (6,), trials=1, seed=0)

    def cos(a, b):
        return a @ b / (np.linalg.norm(a) * np.linalg.norm(b))

    hits = []
    for p, pid in zip(probes, ids):
        cand = [(cos(p, g), gid) for g, gid in zip(gallery, ids)]
        cand += [(cos(p, d), None) for d in pool]
        hits.append(max(cand, key=lambda c: c[0])[1] == pid)
    assert res.top1_accuracy[0] == pytest.approx(np.mean(hits))


def test_identify_nested_and_seeded():
    rng = np.random.default_rng(2)
    probes, gallery = rng.normal(size=(2, 10, 5))
    ids = np.arange(10)
    pool = rng.normal(size=(200, 5))
    a = identify(probes, ids, gallery, ids, pool, (5, 50, 200), trials=4, seed=1)
    b = identify(probes, ids, gallery, ids, pool, (5, 50, 200), trials=4, seed=1)
    np.testing.assert_array_equal(a.per_trial, b.per_trial)
    assert np.all(np.diff(a.per_trial, axis=1) <= 0)
