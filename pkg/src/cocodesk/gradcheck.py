"""Central finite differences as an independent check on analytic gradients."""
from dataclasses import dataclass, field

import numpy as np

from .baselines import (CenterBank, LinearClassifier, TripletConfig, center_loss,
                        classifier_log_probs, softmax_loss, triplet_loss)
from .coco import (Batch, CentroidBank, ScaleConfig, batch_centroids, coco_backward,
                   coco_forward, scaled_cosine_log_probs)
from .errors import NonFinite, ValidationError

LOSS_KINDS = ("coco", "coco_batch", "softmax", "center", "triplet")
DEFAULT_H = 1e-6
REL_FLOOR = 1e-12
HINGE_GAP = 1e-4


def _steps(flat, h_scale):
    return h_scale * np.maximum(1.0, np.abs(flat))


def finite_difference(fn, point, h_scale=DEFAULT_H, batched=False, chunk=512):
    """Numeric gradient of scalar ``fn`` at ``point`` by central differences.

    The step for coordinate ``x`` is ``h_scale * max(1, |x|)``. With
    ``batched=True``, ``fn`` receives a stack ``(n, *point.shape)`` of
    perturbed points and must return ``n`` values; this only changes speed.
    """
    x = np.array(point, dtype=np.float64, copy=True)
    flat = x.reshape(-1)
    h = _steps(flat, h_scale)
    # the representable step, not the nominal one
    width = (flat + h) - (flat - h)
    if not batched:
        up = np.empty_like(flat)
        down = np.empty_like(flat)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h[idx]
            up[idx] = fn(x)
            flat[idx] = orig - h[idx]
            down[idx] = fn(x)
            flat[idx] = orig
    else:
        up = np.empty_like(flat)
        down = np.empty_like(flat)
        for lo in range(0, flat.size, chunk):
            idx = np.arange(lo, min(lo + chunk, flat.size))
            stack = np.repeat(flat[None, :], idx.size, axis=0)
            rows = np.arange(idx.size)
            stack[rows, idx] += h[idx]
            up[idx] = fn(stack.reshape((idx.size,) + x.shape))
            stack[rows, idx] = flat[idx] - h[idx]
            down[idx] = fn(stack.reshape((idx.size,) + x.shape))
    if not (np.all(np.isfinite(up)) and np.all(np.isfinite(down))):
        bad = int(np.flatnonzero(~(np.isfinite(up) & np.isfinite(down)))[0])
        raise NonFinite(f"function is not finite near coordinate {bad}")
    return ((up - down) / width).reshape(x.shape)


def relative_error(analytic, numeric):
    diff = np.max(np.abs(np.asarray(analytic) - np.asarray(numeric)), initial=0.0)
    scale = np.max(np.abs(numeric), initial=0.0)
    return float(diff / max(REL_FLOOR, scale))


@dataclass
class GradCheckReport:
    loss_kind: str
    max_relative_error: float = 0.0
    worst_coordinate: tuple = ()
    per_tensor_errors: list = field(default_factory=list)
    checked: int = 0
    skipped: int = 0

    def record(self, seed, tensor, analytic, numeric):
        err = relative_error(analytic, numeric)
        self.per_tensor_errors.append({"seed": seed, "tensor": tensor, "error": err})
        self.checked += 1
        if err >= self.max_relative_error:
            self.max_relative_error = err
            where = np.unravel_index(
                int(np.argmax(np.abs(np.asarray(analytic) - numeric))), np.shape(numeric))
            self.worst_coordinate = (seed, tensor) + tuple(int(i) for i in where)

    def passed(self, tol=1e-5):
        return self.max_relative_error < tol


def random_batch(rng, dim, num_classes, size):
    feats = rng.normal(size=(size, dim))
    labels = rng.integers(1, num_classes + 1, size=size)
    return Batch(feats, labels, num_classes)


def _check_coco(report, seed, rng, dim, num_classes, size, h):
    batch = random_batch(rng, dim, num_classes, size)
    bank = CentroidBank(rng.normal(size=(num_classes, dim)))
    cfg = ScaleConfig.auto(num_classes)
    grads = coco_backward(batch, bank, cfg, coco_forward(batch, bank, cfg))

    rows = np.arange(size)

    def total(f, c):
        _, logp = scaled_cosine_log_probs(f, c, cfg.alpha)
        return -logp[..., rows, batch.index].sum(axis=-1)

    report.record(seed, "features", grads.d_features, finite_difference(
        lambda f: total(f, bank.centroids), batch.features, h, batched=True))
    report.record(seed, "centroids", grads.d_centroids, finite_difference(
        lambda c: total(batch.features, c), bank.centroids, h, batched=True))


def _check_coco_batch(report, seed, rng, dim, num_classes, size, h):
    batch = random_batch(rng, dim, num_classes, size)
    cfg = ScaleConfig.auto(num_classes)
    bank = batch_centroids(batch)
    grads = coco_backward(batch, bank, cfg, coco_forward(batch, bank, cfg))

    def of_features(f):
        b = Batch(f, batch.labels, num_classes)
        return coco_forward(b, batch_centroids(b), cfg).loss

    report.record(seed, "features", grads.d_features,
                  finite_difference(of_features, batch.features, h))


def _check_softmax(report, seed, rng, dim, num_classes, size, h):
    batch = random_batch(rng, dim, num_classes, size)
    clf = LinearClassifier(rng.normal(size=(num_classes, dim)), rng.normal(size=num_classes))
    _, d_f, d_w, d_b, _ = softmax_loss(batch, clf)
    rows = np.arange(size)

    def total(f, w, b):
        return -classifier_log_probs(f, w, b)[..., rows, batch.index].sum(axis=-1)

    report.record(seed, "features", d_f, finite_difference(
        lambda f: total(f, clf.weights, clf.biases), batch.features, h, batched=True))
    report.record(seed, "weights", d_w, finite_difference(
        lambda w: total(batch.features, w, clf.biases), clf.weights, h, batched=True))
    report.record(seed, "biases", d_b, finite_difference(
        lambda b: total(batch.features, clf.weights, b), clf.biases, h, batched=True))


def _check_center(report, seed, rng, dim, num_classes, size, h):
    batch = random_batch(rng, dim, num_classes, size)
    bank = CenterBank(rng.normal(size=(num_classes, dim)))
    _, d_f = center_loss(batch, bank)
    report.record(seed, "features", d_f, finite_difference(
        lambda f: center_loss(Batch(f, batch.labels, num_classes), bank)[0], batch.features, h))


def _check_triplet(report, seed, rng, dim, num_classes, size, h):
    cfg = TripletConfig()

    def unit(n):
        x = rng.normal(size=(n, dim))
        return x / np.linalg.norm(x, axis=1, keepdims=True)

    a, p, n = unit(size), unit(size), unit(size)
    _, _, _, _, margin = triplet_loss(a, p, n, cfg)
    keep = np.abs(margin) >= HINGE_GAP
    report.skipped += int(np.sum(~keep))
    if not np.any(keep):
        return
    a, p, n = a[keep], p[keep], n[keep]
    _, d_a, d_p, d_n, _ = triplet_loss(a, p, n, cfg)
    report.record(seed, "anchor", d_a,
                  finite_difference(lambda x: triplet_loss(x, p, n, cfg)[0], a, h))
    report.record(seed, "positive", d_p,
                  finite_difference(lambda x: triplet_loss(a, x, n, cfg)[0], p, h))
    report.record(seed, "negative", d_n,
                  finite_difference(lambda x: triplet_loss(a, p, x, cfg)[0], n, h))


_CHECKS = {
    "coco": _check_coco,
    "coco_batch": _check_coco_batch,
    "softmax": _check_softmax,
    "center": _check_center,
    "triplet": _check_triplet,
}


def check_gradients(loss_kind, config, seeds, h_scale=DEFAULT_H):
    """Compare analytic and numeric gradients over seeded random configurations.

    ``config`` maps ``dim``, ``num_classes`` and ``batch_size``; each value may
    be a single int or a sequence, in which case every combination is run
    for every seed.
    """
    if loss_kind not in _CHECKS:
        raise ValidationError(f"unknown loss kind {loss_kind!r}; choose from {LOSS_KINDS}")

    def values(key, default):
        v = config.get(key, default)
        return list(v) if isinstance(v, (list, tuple)) else [v]

    report = GradCheckReport(loss_kind)
    for dim in values("dim", 8):
        for k in values("num_classes", 10):
            for m in values("batch_size", 8):
                for seed in seeds:
                    rng = np.random.default_rng([seed, dim, k, m])
                    _CHECKS[loss_kind](report, seed, rng, dim, k, m, h_scale)
    return report
