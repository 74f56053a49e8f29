"""Comparison losses: softmax cross-entropy, center loss, triplet loss.

All reductions are sums over the batch, matching the COCO loss.
"""
from dataclasses import dataclass

import numpy as np

from .core_math import log_softmax, normalization_backward, normalize_rows
from .errors import DimMismatch, ValidationError

DEFAULT_TRIPLET_MARGIN = 0.2
DEFAULT_CENTER_RATE = 0.5


@dataclass
class LinearClassifier:
    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=np.float64))
        self.biases = np.asarray(self.biases, dtype=np.float64).reshape(-1)
        if self.biases.shape[0] != self.weights.shape[0]:
            raise DimMismatch("one bias per class required")

    @classmethod
    def init(cls, num_classes, dim, rng, std=0.05):
        return cls(rng.normal(0.0, std, size=(num_classes, dim)), np.zeros(num_classes))

    def logits(self, features):
        return features @ self.weights.T + self.biases


@dataclass
class CenterBank:
    centers: np.ndarray
    update_rate: float = DEFAULT_CENTER_RATE

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        if not 0 < self.update_rate <= 1:
            raise ValidationError(f"update_rate must lie in (0, 1], got {self.update_rate}")


@dataclass
class TripletConfig:
    margin: float = DEFAULT_TRIPLET_MARGIN

    def __post_init__(self):
        if not self.margin > 0:
            raise ValidationError(f"margin must be positive, got {self.margin}")


def classifier_log_probs(features, weights, biases):
    """Log-softmax of ``W f + b``; accepts stacked ``(..., M, D)`` / ``(..., K, D)``."""
    return log_softmax(features @ np.swapaxes(weights, -1, -2) + biases[..., None, :])


def softmax_loss(batch, clf):
    """Cross-entropy over ``W f + b``.

    Returns ``(loss, d_features, d_weights, d_biases, probs)``.
    """
    if clf.weights.shape != (batch.num_classes, batch.dim):
        raise DimMismatch(
            f"classifier shape {clf.weights.shape} != ({batch.num_classes}, {batch.dim})")
    logp = classifier_log_probs(batch.features, clf.weights, clf.biases)
    rows = np.arange(batch.size)
    loss = -float(np.sum(logp[rows, batch.index]))
    probs = np.exp(logp)
    delta = probs - batch.one_hot()
    return loss, delta @ clf.weights, delta.T @ batch.features, delta.sum(axis=0), probs


def center_loss(batch, bank):
    """``0.5 * sum ||f_i - c_{l_i}||^2`` and its gradient w.r.t. the features."""
    if bank.centers.shape != (batch.num_classes, batch.dim):
        raise DimMismatch(
            f"center table {bank.centers.shape} != ({batch.num_classes}, {batch.dim})")
    diff = batch.features - bank.centers[batch.index]
    return 0.5 * float(np.sum(diff * diff)), diff


def center_update(batch, bank):
    """Statistical center update; no gradient flows into the centers.

    For each class j present in the batch,
    ``c_j -= rate * sum_{i in j} (c_j - f_i) / (1 + N_j)``.
    """
    k = batch.num_classes
    diff = bank.centers[batch.index] - batch.features
    acc = np.zeros_like(bank.centers)
    np.add.at(acc, batch.index, diff)
    counts = np.bincount(batch.index, minlength=k)
    step = acc / (1.0 + counts)[:, None]
    return CenterBank(bank.centers - bank.update_rate * step, bank.update_rate)


def triplet_loss(anchor, positive, negative, cfg):
    """Hinge on squared distances for a stack of triplets (rows).

    Inputs are expected to be unit-norm already. Returns
    ``(loss, d_anchor, d_positive, d_negative, active_margin)`` where
    ``active_margin`` is the pre-hinge value per triplet. The subgradient at
    the hinge corner is taken as zero.
    """
    a = np.atleast_2d(np.asarray(anchor, dtype=np.float64))
    p = np.atleast_2d(np.asarray(positive, dtype=np.float64))
    n = np.atleast_2d(np.asarray(negative, dtype=np.float64))
    if not a.shape == p.shape == n.shape:
        raise DimMismatch("anchor, positive and negative must share a shape")
    ap = a - p
    an = a - n
    margin = np.sum(ap * ap, axis=1) - np.sum(an * an, axis=1) + cfg.margin
    active = (margin > 0).astype(np.float64)[:, None]
    loss = float(np.sum(np.maximum(margin, 0.0)))
    d_a = 2.0 * active * (n - p)
    d_p = -2.0 * active * ap
    d_n = 2.0 * active * an
    return loss, d_a, d_p, d_n, margin


def mine_triplets(unit, labels, rng):
    """Pick (anchor, positive, negative) index triples inside a batch.

    Each anchor with at least one same-class partner and one other-class
    sample gets a uniformly random positive and its hardest (closest)
    negative. Anchors for which even the hardest negative leaves the hinge
    inactive still appear; they simply contribute zero loss.
    """
    labels = np.asarray(labels)
    sq = 2.0 - 2.0 * (unit @ unit.T)
    same = labels[:, None] == labels[None, :]
    anchors, positives, negatives = [], [], []
    for i in range(len(labels)):
        pos = np.flatnonzero(same[i])
        pos = pos[pos != i]
        neg = np.flatnonzero(~same[i])
        if pos.size == 0 or neg.size == 0:
            continue
        anchors.append(i)
        positives.append(int(rng.choice(pos)))
        negatives.append(int(neg[np.argmin(sq[i, neg])]))
    return np.array(anchors, dtype=np.int64), np.array(positives, dtype=np.int64), \
        np.array(negatives, dtype=np.int64)


def batch_triplet_loss(features, labels, cfg, rng):
    """Triplet loss on l2-normalized features with in-batch mining.

    Returns ``(loss, d_features, n_triplets)``; the gradient is taken w.r.t.
    the raw (unnormalized) features.
    """
    unit, norms = normalize_rows(features, what="feature")
    a, p, n = mine_triplets(unit, labels, rng)
    d_unit = np.zeros_like(unit)
    if a.size == 0:
        return 0.0, d_unit, 0
    loss, d_a, d_p, d_n, _ = triplet_loss(unit[a], unit[p], unit[n], cfg)
    np.add.at(d_unit, a, d_a)
    np.add.at(d_unit, p, d_p)
    np.add.at(d_unit, n, d_n)
    return loss, normalization_backward(d_unit, unit, norms), a.size
