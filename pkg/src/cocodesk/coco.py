"""Congenerous cosine (COCO) loss with hand-derived gradients.

Features are l2-normalized and scaled by ``alpha``; centroids are
l2-normalized only. Logits are the scaled cosines between each feature and
every class centroid, and the loss is the summed cross-entropy over the
batch with the sample's own class included in the softmax denominator.

Labels are 1-based (``1..K``) everywhere in this package.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from .core_math import ZERO_NORM, log_softmax, normalization_backward, normalize_rows
from .errors import DimMismatch, InvalidK, UnusableCentroid, ValidationError, ZeroNorm

PARAMETRIC = "parametric"
BATCH = "batch"

EXACT_BOUND = "exact_bound"
CLOSED_FORM = "closed_form"

DEFAULT_TARGET_LOSS = 1e-4
DEFAULT_PAIR_EPSILON = 1e-2


@dataclass
class Batch:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.features.shape[0] < 1:
            raise ValidationError("batch must hold at least one sample")
        if self.labels.shape[0] != self.features.shape[0]:
            raise DimMismatch(
                f"{self.features.shape[0]} features but {self.labels.shape[0]} labels")
        if self.num_classes < 1:
            raise InvalidK(f"num_classes must be positive, got {self.num_classes}")
        if self.labels.min() < 1 or self.labels.max() > self.num_classes:
            raise ValidationError(f"labels must lie in 1..{self.num_classes}")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain NaN or Inf")

    @property
    def size(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def index(self):
        """Zero-based class indices."""
        return self.labels - 1

    def one_hot(self):
        t = np.zeros((self.size, self.num_classes))
        t[np.arange(self.size), self.index] = 1.0
        return t


@dataclass
class CentroidBank:
    centroids: np.ndarray
    mode: str = PARAMETRIC
    counts: np.ndarray | None = None

    def __post_init__(self):
        self.centroids = np.atleast_2d(np.asarray(self.centroids, dtype=np.float64))
        if self.mode not in (PARAMETRIC, BATCH):
            raise ValidationError(f"unknown centroid mode {self.mode!r}")
        if self.mode == BATCH and self.counts is None:
            raise ValidationError("batch-mode centroids need per-class counts")
        if self.counts is not None:
            self.counts = np.asarray(self.counts, dtype=np.int64)

    @property
    def num_classes(self):
        return self.centroids.shape[0]

    @property
    def usable(self):
        if self.mode == BATCH:
            return self.counts > 0
        return np.ones(self.num_classes, dtype=bool)


@dataclass
class ScaleConfig:
    alpha: float
    target_loss: float = DEFAULT_TARGET_LOSS
    pair_epsilon: float = DEFAULT_PAIR_EPSILON

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValidationError(f"alpha must be positive, got {self.alpha}")
        if not self.target_loss > 0 or not self.pair_epsilon > 0:
            raise ValidationError("target_loss and pair_epsilon must be positive")

    @classmethod
    def auto(cls, num_classes, form=CLOSED_FORM, target_loss=DEFAULT_TARGET_LOSS, **kw):
        return cls(optimal_alpha(num_classes, target_loss, form), target_loss, **kw)


@dataclass
class LossOutput:
    loss: float
    probs: np.ndarray
    targets: np.ndarray
    sample_losses: np.ndarray = field(repr=False)
    logits: np.ndarray = field(repr=False)


@dataclass
class GradientBundle:
    d_features: np.ndarray
    d_centroids: np.ndarray


def batch_centroids(batch):
    """Per-class feature means over the batch; absent classes get count 0."""
    k, d = batch.num_classes, batch.dim
    sums = np.zeros((k, d))
    np.add.at(sums, batch.index, batch.features)
    counts = np.bincount(batch.index, minlength=k)
    centroids = np.zeros((k, d))
    present = counts > 0
    centroids[present] = sums[present] / counts[present, None]
    return CentroidBank(centroids, mode=BATCH, counts=counts)


def optimal_alpha(num_classes, target_loss=DEFAULT_TARGET_LOSS, form=EXACT_BOUND):
    """Smallest feature scale that lets the loss fall below ``target_loss``.

    ``exact_bound`` is ``0.5 * ln((K - 1) / (exp(eps) - 1))``;
    ``closed_form`` is the fixed-epsilon shortcut ``0.5 * ln(K - 1) + 3``,
    which ignores ``target_loss``.
    """
    if num_classes < 2:
        raise InvalidK(f"need at least two classes, got {num_classes}")
    if form == CLOSED_FORM:
        return 0.5 * math.log(num_classes - 1) + 3.0
    if form != EXACT_BOUND:
        raise ValidationError(f"unknown alpha form {form!r}")
    if not target_loss > 0:
        raise ValidationError(f"target_loss must be positive, got {target_loss}")
    return 0.5 * (math.log(num_classes - 1) - math.log(math.expm1(target_loss)))


def loss_infimum(alpha, num_classes):
    """Per-sample loss when the own-class cosine is 1 and all others are -1.

    Equals ``ln(e^a + (K-1) e^-a) - a``, evaluated without cancellation.
    """
    return math.log1p((num_classes - 1) * math.exp(-2.0 * alpha))


def _check_bank(batch, bank):
    if bank.num_classes != batch.num_classes:
        raise DimMismatch(
            f"bank has {bank.num_classes} centroids for {batch.num_classes} classes")
    if bank.centroids.shape[1] != batch.dim:
        raise DimMismatch(
            f"centroid dim {bank.centroids.shape[1]} != feature dim {batch.dim}")
    usable = bank.usable
    if not np.all(usable[batch.index]):
        missing = sorted(set((batch.labels[~usable[batch.index]]).tolist()))
        raise UnusableCentroid(f"classes {missing} have no batch members")
    return usable


def _normalized_centroids(bank, usable):
    norms = np.ones(bank.num_classes)
    unit = np.zeros_like(bank.centroids)
    n = np.linalg.norm(bank.centroids[usable], axis=1)
    if np.any(n < ZERO_NORM):
        raise ZeroNorm("a centroid has zero norm")
    norms[usable] = n
    unit[usable] = bank.centroids[usable] / n[:, None]
    return unit, norms


def scaled_cosine_log_probs(features, centroids, alpha, usable=None):
    """Log class probabilities from scaled cosine logits.

    Works on stacks: ``features`` is ``(..., M, D)`` and ``centroids``
    ``(..., K, D)``. When a ``usable`` mask is given the centroid rows must
    already be unit length; masked-out classes get probability zero.
    """
    f_norm = np.linalg.norm(features, axis=-1, keepdims=True)
    if np.any(f_norm < ZERO_NORM):
        raise ZeroNorm("a feature has zero norm")
    if usable is None:
        c_norm = np.linalg.norm(centroids, axis=-1, keepdims=True)
        if np.any(c_norm < ZERO_NORM):
            raise ZeroNorm("a centroid has zero norm")
        unit_c = centroids / c_norm
    else:
        unit_c = centroids
    logits = (alpha * features / f_norm) @ np.swapaxes(unit_c, -1, -2)
    if usable is not None:
        logits[..., ~usable] = -np.inf
    return logits, log_softmax(logits)


def coco_forward(batch, bank, cfg):
    usable = _check_bank(batch, bank)
    if bank.mode == BATCH:
        unit_c, _ = _normalized_centroids(bank, usable)
        logits, logp = scaled_cosine_log_probs(batch.features, unit_c, cfg.alpha, usable)
    else:
        logits, logp = scaled_cosine_log_probs(batch.features, bank.centroids, cfg.alpha)
    rows = np.arange(batch.size)
    sample_losses = -logp[rows, batch.index]
    return LossOutput(
        loss=float(np.sum(sample_losses)),
        probs=np.exp(logp),
        targets=batch.one_hot(),
        sample_losses=sample_losses,
        logits=logits,
    )


def coco_backward(batch, bank, cfg, out):
    """Analytic gradients of the summed loss.

    In parametric mode ``d_features`` is the partial derivative with centroids
    held fixed. In batch mode the centroids are themselves means of the
    batch, so ``d_features`` also carries the path through each class mean;
    ``d_centroids`` is always the partial derivative.
    """
    usable = _check_bank(batch, bank)
    unit_c, c_norms = _normalized_centroids(bank, usable)
    unit_f, f_norms = normalize_rows(batch.features, what="feature")

    delta = out.probs - out.targets
    top = delta @ unit_c
    d_features = normalization_backward(top, unit_f, f_norms, cfg.alpha)

    d_unit_c = delta.T @ (cfg.alpha * unit_f)
    d_centroids = normalization_backward(d_unit_c, unit_c, c_norms)
    d_centroids[~usable] = 0.0

    if bank.mode == BATCH:
        counts = np.maximum(bank.counts, 1)
        d_features = d_features + (d_centroids / counts[:, None])[batch.index]
    return GradientBundle(d_features, d_centroids)


def coco_loss_and_grad(batch, bank, cfg):
    out = coco_forward(batch, bank, cfg)
    return out, coco_backward(batch, bank, cfg, out)


def naive_pair_loss(batch, cfg):
    """Pairwise same-class cosine objective (to be maximized), forward only.

    Sums over ordered pairs ``i != j``. Kept as the quadratic-cost reference
    that the centroid formulation replaces.
    """
    if batch.size < 2:
        raise ValidationError("pairwise loss needs at least two samples")
    unit, _ = normalize_rows(batch.features, what="feature")
    cos = unit @ unit.T
    same = (batch.labels[:, None] == batch.labels[None, :]).astype(np.float64)
    terms = same * cos / ((1.0 - same) * cos + cfg.pair_epsilon)
    np.fill_diagonal(terms, 0.0)
    return float(np.sum(terms))
