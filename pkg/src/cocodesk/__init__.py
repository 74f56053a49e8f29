"""COCO loss laboratory: cosine-centroid loss, baselines, metrics and fusion."""
from .coco import (Batch, CentroidBank, GradientBundle, LossOutput, ScaleConfig,
                   batch_centroids, coco_backward, coco_forward, coco_loss_and_grad,
                   naive_pair_loss, optimal_alpha)
from .core_math import cosine_similarity, l2_norm, normalize_scale, stable_softmax

__all__ = [
    "Batch", "CentroidBank", "GradientBundle", "LossOutput", "ScaleConfig",
    "batch_centroids", "coco_backward", "coco_forward", "coco_loss_and_grad", "naive_pair_loss",
    "optimal_alpha",
    "cosine_similarity", "l2_norm", "normalize_scale", "stable_softmax",
]
__version__ = "0.1.0"
