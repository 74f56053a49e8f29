"""Dense vector primitives shared by every loss and metric.

All arithmetic is float64. A norm below ``ZERO_NORM`` is treated as a bug
upstream and raises instead of being smoothed.
"""
import numpy as np

from .errors import DimMismatch, ZeroNorm

ZERO_NORM = 1e-30


def as_vector(v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise DimMismatch(f"expected a non-empty 1-d vector, got shape {v.shape}")
    return v


def l2_norm(v):
    return float(np.linalg.norm(np.asarray(v, dtype=np.float64)))


def row_norms(x):
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def normalize_scale(v, alpha=1.0):
    """Return ``alpha * v / ||v||``."""
    v = as_vector(v)
    n = l2_norm(v)
    if n < ZERO_NORM:
        raise ZeroNorm("cannot normalize a zero-norm vector")
    return (alpha / n) * v


def normalize_rows(x, alpha=1.0, what="row"):
    x = np.asarray(x, dtype=np.float64)
    n = row_norms(x)
    if np.any(n < ZERO_NORM):
        bad = int(np.argmin(n))
        raise ZeroNorm(f"{what} {bad} has zero norm")
    return x * (alpha / n)[:, None], n


def cosine_similarity(u, v):
    u = as_vector(u)
    v = as_vector(v)
    if u.shape != v.shape:
        raise DimMismatch(f"dimension mismatch: {u.size} vs {v.size}")
    nu, nv = l2_norm(u), l2_norm(v)
    if nu < ZERO_NORM or nv < ZERO_NORM:
        raise ZeroNorm("cosine similarity of a zero-norm vector is undefined")
    c = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, c))


def cosine_matrix(a, b):
    """Pairwise cosines between the rows of ``a`` and ``b``, clipped to [-1, 1]."""
    an, _ = normalize_rows(a)
    bn, _ = normalize_rows(b)
    if an.shape[1] != bn.shape[1]:
        raise DimMismatch(f"dimension mismatch: {an.shape[1]} vs {bn.shape[1]}")
    return np.clip(an @ bn.T, -1.0, 1.0)


def stable_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def normalization_backward(upstream, unit, norm, alpha=1.0):
    """Backprop through ``x -> alpha * x / ||x||`` row-wise.

    ``unit`` holds the unit directions, ``norm`` the original row norms.
    The result is orthogonal to each input row.
    """
    radial = np.einsum("ij,ij->i", upstream, unit)
    return alpha * (upstream - radial[:, None] * unit) / norm[:, None]
