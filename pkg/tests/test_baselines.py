import math

import numpy as np
import pytest

from cocodesk.baselines import (CenterBank, LinearClassifier, TripletConfig, batch_triplet_loss,
                                center_loss, center_update, mine_triplets, softmax_loss,
                                triplet_loss)
from cocodesk.coco import Batch
from cocodesk.errors import DimMismatch, ValidationError
from cocodesk.gradcheck import finite_difference, relative_error


def test_softmax_loss_uniform():
    batch = Batch([[1.0, 2.0], [-1.0, 0.5]], [1, 3], 3)
    clf = LinearClassifier(np.zeros((3, 2)), np.zeros(3))
    loss, d_f, d_w, d_b, probs = softmax_loss(batch, clf)
    assert loss == pytest.approx(2 * math.log(3), abs=1e-15)
    np.testing.assert_allclose(probs, 1 / 3, atol=1e-15)
    np.testing.assert_allclose(d_b, [2 / 3 - 1, 2 / 3, 2 / 3 - 1], atol=1e-15)


def test_softmax_gradients():
    rng = np.random.default_rng(1)
    batch = Batch(rng.normal(size=(6, 4)), rng.integers(1, 6, 6), 5)
    clf = LinearClassifier.init(5, 4, rng, std=1.0)
    loss, d_f, d_w, d_b, _ = softmax_loss(batch, clf)
    num_f = finite_difference(lambda f: softmax_loss(Batch(f, batch.labels, 5), clf)[0],
                              batch.features)
    num_w = finite_difference(lambda w: softmax_loss(batch, LinearClassifier(w, clf.biases))[0],
                              clf.weights)
    num_b = finite_difference(lambda b: softmax_loss(batch, LinearClassifier(clf.weights, b))[0],
                              clf.biases)
    assert relative_error(d_f, num_f) < 1e-7
    assert relative_error(d_w, num_w) < 1e-7
    assert relative_error(d_b, num_b) < 1e-7


def test_softmax_shape_check():
    batch = Batch([[1.0, 2.0]], [1], 3)
    with pytest.raises(DimMismatch):
        softmax_loss(batch, LinearClassifier(np.zeros((3, 3)), np.zeros(3)))


def test_center_loss_and_update():
    batch = Batch([[1.0, 0.0], [3.0, 0.0], [0.0, 2.0]], [1, 1, 2], 2)
    bank = CenterBank(np.zeros((2, 2)), update_rate=0.5)
    loss, diff = center_loss(batch, bank)
    assert loss == pytest.approx(0.5 * (1 + 9 + 4))
    np.testing.assert_array_equal(diff, batch.features)
    new = center_update(batch, bank)
    # class 1: sum(c - f) = (-4, 0), /(1+2) then * 0.5
    np.testing.assert_allclose(new.centers[0], [4 / 6, 0.0], atol=1e-15)
    np.testing.assert_allclose(new.centers[1], [0.0, 0.5], atol=1e-15)
    assert bank.centers[0, 0] == 0.0


def test_center_update_leaves_absent_classes():
    batch = Batch([[1.0, 1.0]], [1], 3)
    bank = CenterBank(np.arange(6.0).reshape(3, 2))
    new = center_update(batch, bank)
    np.testing.assert_array_equal(new.centers[1:], bank.centers[1:])


def test_center_rate_validated():
    with pytest.raises(ValidationError):
        CenterBank(np.zeros((2, 2)), update_rate=0.0)


def test_triplet_loss_hand_example():
    a = np.array([[1.0, 0.0]])
    p = np.array([[0.0, 1.0]])
    n = np.array([[1.0, 0.0]])
    loss, d_a, d_p, d_n, margin = triplet_loss(a, p, n, TripletConfig(0.2))
    assert margin[0] == pytest.approx(2.2)
    assert loss == pytest.approx(2.2)
    loss, *_ = triplet_loss(a, n, p, TripletConfig(0.2))
    assert loss == 0.0


def test_triplet_gradients_off_hinge():
    rng = np.random.default_rng(4)
    a, p, n = rng.normal(size=(3, 5, 3))
    cfg = TripletConfig(0.5)
    loss, d_a, d_p, d_n, margin = triplet_loss(a, p, n, cfg)
    assert np.all(np.abs(margin) > 1e-3)
    for arr, grad, slot in ((a, d_a, 0), (p, d_p, 1), (n, d_n, 2)):
        def f(x, slot=slot):
            args = [a, p, n]
            args[slot] = x
            return triplet_loss(*args, cfg)[0]
        assert relative_error(grad, finite_difference(f, arr)) < 1e-6


def test_mining_picks_hardest_negative():
    unit = np.array([[1.0, 0.0], [0.8, 0.6], [0.6, 0.8], [-1.0, 0.0]])
    a, p, n = mine_triplets(unit, [1, 1, 2, 2], np.random.default_rng(0))
    assert list(a) == [0, 1, 2, 3]
    assert n[0] == 2 and n[1] == 2
    assert p[0] == 1 and p[2] == 3


def test_batch_triplet_no_valid_anchor():
    loss, d, count = batch_triplet_loss(np.eye(3), [1, 2, 3], TripletConfig(),
                                        np.random.default_rng(0))
    assert loss == 0.0 and count == 0
    assert not d.any()
