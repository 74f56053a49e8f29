"""Feature-quality measurements: pair histograms, verification, identification."""
from dataclasses import dataclass, field

import numpy as np

from .core_math import cosine_matrix, normalize_rows
from .errors import InsufficientData, MissingMate, ValidationError

HIST_BINS = 50


@dataclass
class PairStats:
    positive_cosines: np.ndarray
    negative_cosines: np.ndarray
    bin_edges: np.ndarray
    positive_counts: np.ndarray
    negative_counts: np.ndarray

    @property
    def mean_pos(self):
        return float(np.mean(self.positive_cosines))

    @property
    def mean_neg(self):
        return float(np.mean(self.negative_cosines))

    @property
    def separation(self):
        return self.mean_pos - self.mean_neg


@dataclass
class VerificationResult:
    best_threshold: float
    accuracy: float
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


@dataclass
class IdentificationResult:
    distractor_counts: list
    top1_accuracy: list
    per_trial: np.ndarray = field(repr=False)


def _sample_pairs(mask_iu, i_idx, j_idx, max_pairs, rng):
    sel = np.flatnonzero(mask_iu)
    if max_pairs is not None and sel.size > max_pairs:
        sel = np.sort(rng.choice(sel, size=max_pairs, replace=False))
    return i_idx[sel], j_idx[sel]


def pair_stats(features, labels, max_pairs=20000, seed=0, bins=HIST_BINS):
    """Cosines of positive (same label) and negative pairs plus histograms.

    When more than ``max_pairs`` pairs of a kind exist, that many are drawn
    uniformly without replacement.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels)
    if features.shape[0] < 2 or np.unique(labels).size < 2:
        raise InsufficientData("need at least two samples from at least two classes")
    unit, _ = normalize_rows(features, what="feature")
    i_idx, j_idx = np.triu_indices(len(labels), 1)
    same = labels[i_idx] == labels[j_idx]
    if not np.any(same):
        raise InsufficientData("no positive pairs: every class has a single sample")
    rng = np.random.default_rng(seed)
    pi, pj = _sample_pairs(same, i_idx, j_idx, max_pairs, rng)
    ni, nj = _sample_pairs(~same, i_idx, j_idx, max_pairs, rng)
    pos = np.clip(np.einsum("ij,ij->i", unit[pi], unit[pj]), -1.0, 1.0)
    neg = np.clip(np.einsum("ij,ij->i", unit[ni], unit[nj]), -1.0, 1.0)
    pos_counts, edges = np.histogram(pos, bins=bins, range=(-1.0, 1.0))
    neg_counts, _ = np.histogram(neg, bins=bins, range=(-1.0, 1.0))
    return PairStats(pos, neg, edges, pos_counts, neg_counts)


def sweep_thresholds(scores):
    """Midpoints between consecutive distinct scores, bracketed by -inf and +inf."""
    u = np.unique(scores)
    return np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2.0, [np.inf]])


def verify(scores, same):
    """Threshold sweep over pair scores; a pair is called "same" when score > t.

    Returns the best accuracy (the lowest threshold wins ties), the ROC
    traced by the sweep, and its trapezoidal AUC.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    same = np.asarray(same, dtype=bool).reshape(-1)
    if scores.shape != same.shape:
        raise ValidationError("one same/different flag per score required")
    n_pos = int(same.sum())
    n_neg = same.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InsufficientData("need at least one positive and one negative pair")
    thresholds = sweep_thresholds(scores)
    # descending thresholds -> ROC runs from (0, 0) to (1, 1)
    thresholds = thresholds[::-1]
    pos_sorted = np.sort(scores[same])
    neg_sorted = np.sort(scores[~same])
    tp = n_pos - np.searchsorted(pos_sorted, thresholds, side="right")
    fp = n_neg - np.searchsorted(neg_sorted, thresholds, side="right")
    tn = n_neg - fp
    acc = (tp + tn) / same.size
    tpr = tp / n_pos
    fpr = fp / n_neg
    best = int(np.flatnonzero(acc == acc.max())[-1])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return VerificationResult(float(thresholds[best]), float(acc[best]), fpr, tpr,
                              thresholds, auc)


def pairs_from_features(features, labels, max_pairs=20000, seed=0):
    """Sample positive and negative pairs and return ``(scores, same)``."""
    st = pair_stats(features, labels, max_pairs, seed)
    scores = np.concatenate([st.positive_cosines, st.negative_cosines])
    same = np.concatenate([np.ones(st.positive_cosines.size, bool),
                           np.zeros(st.negative_cosines.size, bool)])
    return scores, same


def top1_hits(scores, mate_mask):
    """Per-probe hit flags; ties go to the lowest gallery index (``argmax``)."""
    best = np.argmax(scores, axis=1)
    return mate_mask[np.arange(scores.shape[0]), best]


def identify(probes, probe_ids, gallery, gallery_ids, distractors,
             distractor_counts=(10, 100, 1000), trials=20, seed=0):
    """Top-1 identification against mates plus sampled distractors.

    In each trial the distractor pool is shuffled once and the first N of
    it are used for every N, so larger sets contain the smaller ones. The
    gallery is ordered mates first, then distractors.
    """
    probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    gallery = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    distractors = np.asarray(distractors, dtype=np.float64).reshape(-1, gallery.shape[1])
    probe_ids = np.asarray(probe_ids)
    gallery_ids = np.asarray(gallery_ids)
    missing = sorted(set(probe_ids.tolist()) - set(gallery_ids.tolist()))
    if missing:
        raise MissingMate(f"probe identities {missing[:5]} have no gallery mate")
    counts = [int(c) for c in distractor_counts]
    if counts and max(counts) > distractors.shape[0]:
        raise InsufficientData(
            f"asked for {max(counts)} distractors but the pool has {distractors.shape[0]}")
    mate_scores = cosine_matrix(probes, gallery)
    mate_mask = probe_ids[:, None] == gallery_ids[None, :]
    dist_scores = cosine_matrix(probes, distractors) if distractors.shape[0] else \
        np.zeros((probes.shape[0], 0))
    rng = np.random.default_rng(seed)
    per_trial = np.zeros((trials, len(counts)))
    for t in range(trials):
        perm = rng.permutation(distractors.shape[0])
        for c_i, c in enumerate(counts):
            s = np.hstack([mate_scores, dist_scores[:, perm[:c]]])
            mask = np.hstack([mate_mask, np.zeros((probes.shape[0], c), bool)])
            per_trial[t, c_i] = np.mean(top1_hits(s, mask))
    return IdentificationResult(counts, per_trial.mean(axis=0).tolist(), per_trial)
