"""Fully-connected feature extractor, SGD with momentum, binary checkpoints."""
from dataclasses import dataclass, field
import json
import struct

import numpy as np

from .errors import ValidationError

CHECKPOINT_MAGIC = b"COCOCKPT"
CHECKPOINT_VERSION = 1


class Mlp:
    """ReLU MLP whose last layer is linear and emits the feature vector."""

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ValidationError("need one bias vector per weight matrix")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise ValidationError(f"layer shapes {prev.shape} -> {nxt.shape} do not chain")

    @classmethod
    def init(cls, layer_sizes, rng, std=0.05):
        if len(layer_sizes) < 2:
            raise ValidationError("layer_sizes needs an input and an output size")
        weights = [rng.normal(0.0, std, size=(n_out, n_in))
                   for n_in, n_out in zip(layer_sizes, layer_sizes[1:])]
        biases = [np.zeros(n_out) for n_out in layer_sizes[1:]]
        return cls(weights, biases)

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def feature_dim(self):
        return self.weights[-1].shape[0]

    def forward(self, x):
        acts = [np.asarray(x, dtype=np.float64)]
        h = acts[0]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, d_out):
        """Gradients ``(d_weights, d_biases, d_input)`` for upstream ``d_out``."""
        d_w = [None] * len(self.weights)
        d_b = [None] * len(self.weights)
        g = d_out
        for i in range(len(self.weights) - 1, -1, -1):
            d_w[i] = g.T @ acts[i]
            d_b[i] = g.sum(axis=0)
            g = g @ self.weights[i]
            if i > 0:
                g = g * (acts[i] > 0)
        return d_w, d_b, g

    def params(self):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"layer{i}.weight"] = w
            out[f"layer{i}.bias"] = b
        return out


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.005
    drop_at: tuple = (0.6, 0.8)
    drop_factor: float = 0.1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValidationError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be non-negative")

    def rate_at(self, epoch, epochs):
        """Piecewise-constant schedule; ``epoch`` counts from 0."""
        lr = self.learning_rate
        for frac in self.drop_at:
            if epoch >= int(round(frac * epochs)):
                lr *= self.drop_factor
        return lr


@dataclass
class Sgd:
    """Heavy-ball SGD: ``v = mu v - lr (g + wd w)``, ``w += v``.

    Weight decay applies only to parameters whose name ends in ``.weight``.
    """
    cfg: OptimizerConfig
    velocity: dict = field(default_factory=dict)

    def step(self, params, grads, lr):
        for name, g in grads.items():
            p = params[name]
            if self.cfg.weight_decay and name.endswith(".weight"):
                g = g + self.cfg.weight_decay * p
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(p)
            v *= self.cfg.momentum
            v -= lr * g
            self.velocity[name] = v
            p += v


def save_checkpoint(path, tensors, meta):
    """Write named float64 tensors.

    Layout (little-endian): magic ``COCOCKPT``, u32 version, u32 length plus
    UTF-8 JSON metadata, u32 tensor count, then per tensor: u16 name length,
    name, u32 ndim, u32 dims, float64 data in C order.
    """
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path):
    """Inverse of ``save_checkpoint``; returns ``(tensors, meta)``."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:8] != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path}: not a checkpoint (bad magic)")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise ValidationError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, meta_len = take("<II")
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(buf[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        if pos + 8 * n > len(buf):
            raise ValidationError(f"{path}: truncated tensor {name!r}")
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += 8 * n
    return tensors, meta


def mlp_from_tensors(tensors):
    n = sum(1 for k in tensors if k.startswith("layer") and k.endswith(".weight"))
    return Mlp([tensors[f"layer{i}.weight"] for i in range(n)],
               [tensors[f"layer{i}.bias"] for i in range(n)])
