"""Toy training harness: MLP features plus one of the loss heads.

Per-step gradients are those of the batch-mean objective (the summed loss
divided by the batch size), so the learning rate does not depend on M.
"""
from dataclasses import asdict, dataclass, field
import hashlib
import json
import logging

import numpy as np

from .baselines import (CenterBank, LinearClassifier, TripletConfig, batch_triplet_loss,
                        center_loss, center_update, softmax_loss)
from .coco import (BATCH, PARAMETRIC, Batch, CentroidBank, ScaleConfig, batch_centroids,
                   coco_backward, coco_forward, optimal_alpha, CLOSED_FORM)
from .core_math import cosine_matrix
from .errors import Diverged, ValidationError
from .model import Mlp, OptimizerConfig, Sgd, save_checkpoint

log = logging.getLogger(__name__)

LOSS_KINDS = ("coco", "softmax", "center+softmax", "triplet", "triplet+softmax")


@dataclass
class TrainConfig:
    loss_kind: str = "coco"
    epochs: int = 30
    batch_size: int = 32
    hidden: tuple = (64,)
    feature_dim: int = 8
    init_std: float = 0.05
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.005
    drop_at: tuple = (0.6, 0.8)
    drop_factor: float = 0.1
    alpha: float | None = None
    centroid_mode: str = PARAMETRIC
    center_weight: float = 1.0
    center_rate: float = 0.5
    triplet_margin: float = 0.2
    triplet_weight: float = 1.0
    softmax_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValidationError(f"unknown loss {self.loss_kind!r}; choose from {LOSS_KINDS}")
        if self.epochs < 1 or self.batch_size < 1 or self.feature_dim < 1:
            raise ValidationError("epochs, batch_size and feature_dim must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)
        self.drop_at = tuple(float(d) for d in self.drop_at)

    def optimizer(self):
        return OptimizerConfig(self.learning_rate, self.momentum, self.weight_decay,
                               self.drop_at, self.drop_factor)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["drop_at"] = list(self.drop_at)
        return d


def _nearest_mean_predict(feats, labels, num_classes):
    means = np.zeros((num_classes, feats.shape[1]))
    for k in range(num_classes):
        members = feats[labels == k + 1]
        if len(members):
            means[k] = members.mean(axis=0)
    ok = np.linalg.norm(means, axis=1) > 0
    means[~ok] = 1.0
    scores = cosine_matrix(feats, means)
    scores[:, ~ok] = -np.inf
    return np.argmax(scores, axis=1) + 1


class CocoHead:
    def __init__(self, num_classes, dim, cfg):
        alpha = cfg.alpha if cfg.alpha is not None else optimal_alpha(
            num_classes, form=CLOSED_FORM)
        self.scale = ScaleConfig(alpha)
        self.mode = cfg.centroid_mode
        self.num_classes = num_classes
        self.centroids = np.zeros((num_classes, dim))

    def prime(self, feats, labels):
        """Initialize parametric centroids from class means of an initial pass."""
        self.centroids[:] = batch_centroids(Batch(feats, labels, self.num_classes)).centroids

    def params(self):
        return {"coco.centroids": self.centroids} if self.mode == PARAMETRIC else {}

    def loss_and_grad(self, feats, labels, rng):
        batch = Batch(feats, labels, self.num_classes)
        if self.mode == BATCH:
            bank = batch_centroids(batch)
        else:
            bank = CentroidBank(self.centroids)
        out = coco_forward(batch, bank, self.scale)
        g = coco_backward(batch, bank, self.scale, out)
        grads = {"coco.centroids": g.d_centroids} if self.mode == PARAMETRIC else {}
        return out.loss, g.d_features, grads

    def after_step(self, feats, labels):
        pass

    def predict(self, feats, labels):
        if self.mode == BATCH:
            return _nearest_mean_predict(feats, labels, self.num_classes)
        return np.argmax(cosine_matrix(feats, self.centroids), axis=1) + 1


class SoftmaxHead:
    def __init__(self, num_classes, dim, cfg, rng, center=False, triplet=False):
        self.num_classes = num_classes
        self.clf = LinearClassifier.init(num_classes, dim, rng, cfg.init_std)
        self.softmax_weight = cfg.softmax_weight
        self.center = CenterBank(np.zeros((num_classes, dim)), cfg.center_rate) if center else None
        self.center_weight = cfg.center_weight
        self.triplet = TripletConfig(cfg.triplet_margin) if triplet else None
        self.triplet_weight = cfg.triplet_weight

    def prime(self, feats, labels):
        pass

    def params(self):
        return {"classifier.weight": self.clf.weights, "classifier.bias": self.clf.biases}

    def loss_and_grad(self, feats, labels, rng):
        batch = Batch(feats, labels, self.num_classes)
        loss, d_f, d_w, d_b, _ = softmax_loss(batch, self.clf)
        w = self.softmax_weight
        loss, d_f = w * loss, w * d_f
        grads = {"classifier.weight": w * d_w, "classifier.bias": w * d_b}
        if self.center is not None:
            c_loss, c_grad = center_loss(batch, self.center)
            loss += self.center_weight * c_loss
            d_f = d_f + self.center_weight * c_grad
        if self.triplet is not None:
            t_loss, t_grad, _ = batch_triplet_loss(feats, labels, self.triplet, rng)
            loss += self.triplet_weight * t_loss
            d_f = d_f + self.triplet_weight * t_grad
        return loss, d_f, grads

    def after_step(self, feats, labels):
        if self.center is not None:
            self.center = center_update(Batch(feats, labels, self.num_classes), self.center)

    def predict(self, feats, labels):
        return np.argmax(self.clf.logits(feats), axis=1) + 1


class TripletHead:
    def __init__(self, num_classes, cfg):
        self.num_classes = num_classes
        self.triplet = TripletConfig(cfg.triplet_margin)

    def prime(self, feats, labels):
        pass

    def params(self):
        return {}

    def loss_and_grad(self, feats, labels, rng):
        loss, d_f, _ = batch_triplet_loss(feats, labels, self.triplet, rng)
        return loss, d_f, {}

    def after_step(self, feats, labels):
        pass

    def predict(self, feats, labels):
        return _nearest_mean_predict(feats, labels, self.num_classes)


def make_head(cfg, num_classes, rng):
    kind = cfg.loss_kind
    if kind == "coco":
        return CocoHead(num_classes, cfg.feature_dim, cfg)
    if kind == "triplet":
        return TripletHead(num_classes, cfg)
    return SoftmaxHead(num_classes, cfg.feature_dim, cfg, rng,
                       center=kind == "center+softmax", triplet=kind == "triplet+softmax")


@dataclass
class TrainRun:
    config: dict
    per_epoch: list = field(default_factory=list)
    model: Mlp | None = None
    head: object = None
    checkpoint_path: str | None = None

    @property
    def run_id(self):
        blob = json.dumps(self.config, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def metrics(self):
        return {"run_id": self.run_id, "config": self.config, "per_epoch": self.per_epoch}

    @property
    def losses(self):
        return [r["mean_loss"] for r in self.per_epoch]


def extract_features(model, inputs):
    """Forward pass to the feature layer; no loss applied."""
    feats, _ = model.forward(np.atleast_2d(np.asarray(inputs, dtype=np.float64)))
    return feats


def train(dataset, cfg, checkpoint_path=None, extra_config=None):
    """Train an MLP on ``dataset`` with the loss selected by ``cfg.loss_kind``.

    Records the mean per-sample objective and the end-of-epoch training
    accuracy for every epoch. Identical (dataset, cfg) gives bit-identical
    records.
    """
    init_seq, shuffle_seq, mine_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    init_rng = np.random.default_rng(init_seq)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    mine_rng = np.random.default_rng(mine_seq)

    sizes = [dataset.input_dim, *cfg.hidden, cfg.feature_dim]
    model = Mlp.init(sizes, init_rng, cfg.init_std)
    head = make_head(cfg, dataset.num_classes, init_rng)
    head.prime(extract_features(model, dataset.inputs), dataset.labels)

    params = {**model.params(), **head.params()}
    opt = Sgd(cfg.optimizer())
    config = {**cfg.to_dict(), **(extra_config or {})}
    if isinstance(head, CocoHead):
        config["alpha_resolved"] = head.scale.alpha
    run = TrainRun(config=config, model=model, head=head)

    n = len(dataset)
    for epoch in range(cfg.epochs):
        lr = opt.cfg.rate_at(epoch, cfg.epochs)
        order = shuffle_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            x, y = dataset.inputs[idx], dataset.labels[idx]
            with np.errstate(over="ignore", invalid="ignore"):
                feats, acts = model.forward(x)
            if not np.all(np.isfinite(feats)):
                raise Diverged(f"non-finite features at epoch {epoch + 1}")
            loss, d_feats, head_grads = head.loss_and_grad(feats, y, mine_rng)
            if not np.isfinite(loss):
                raise Diverged(f"non-finite loss at epoch {epoch + 1}")
            total += loss
            m = len(idx)
            d_w, d_b, _ = model.backward(acts, d_feats / m)
            grads = {name: g / m for name, g in head_grads.items()}
            for i in range(len(d_w)):
                grads[f"layer{i}.weight"] = d_w[i]
                grads[f"layer{i}.bias"] = d_b[i]
            opt.step(params, grads, lr)
            head.after_step(feats, y)
        with np.errstate(over="ignore", invalid="ignore"):
            feats = extract_features(model, dataset.inputs)
        if not np.all(np.isfinite(feats)):
            raise Diverged(f"non-finite features after epoch {epoch + 1}")
        acc = float(np.mean(head.predict(feats, dataset.labels) == dataset.labels))
        run.per_epoch.append({"epoch": epoch + 1, "mean_loss": total / n, "train_accuracy": acc})
        log.debug("epoch %d loss %.6g acc %.4f lr %g", epoch + 1, total / n, acc, lr)

    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, {**model.params(), **head.params()},
                        {"run_id": run.run_id, "config": config})
        run.checkpoint_path = str(checkpoint_path)
    return run
