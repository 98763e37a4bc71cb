"""Multi-scale BCE + soft-IoU training loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import Tensor, as_tensor, clip, log, mean, tsum

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Per-head weights (all equal) and the IoU smoothing term."""

    lambdas: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    eps: float = 1.0

    def __post_init__(self):
        if len(self.lambdas) != 4 or any(lam < 0 for lam in self.lambdas):
            raise ValueError(f"need four nonnegative head weights, got {self.lambdas}")
        if len(set(self.lambdas)) != 1:
            raise ValueError(f"head weights must be equal, got {self.lambdas}")
        if self.eps <= 0:
            raise ValueError(f"IoU smoothing term must be positive, got {self.eps}")


def _check(p: Tensor, g: Tensor) -> None:
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")


def bce_loss(p: Tensor, g) -> Tensor:
    """Mean binary cross-entropy over every pixel; ``p`` is clamped to [1e-7, 1 - 1e-7]."""
    g = as_tensor(g, like=p)
    _check(p, g)
    pc = clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -mean(g * log(pc) + (1.0 - g) * log(1.0 - pc))


def iou_loss(p: Tensor, g, eps: float = 1.0) -> Tensor:
    """``1 - (sum(p*g) + eps) / (sum(p + g - p*g) + eps)``.

    For batched maps (N, ...) the ratio is taken per sample and averaged.
    """
    g = as_tensor(g, like=p)
    _check(p, g)
    pg = p * g
    if p.ndim >= 3:
        axes = tuple(range(1, p.ndim))
        inter = tsum(pg, axis=axes)
        union = tsum(p + g - pg, axis=axes)
        return 1.0 - mean((inter + eps) / (union + eps))
    return 1.0 - (tsum(pg) + eps) / (tsum(p + g - pg) + eps)


def mask_at(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Binary mask ``g`` (..., H, W) reduced to ``shape`` by block averaging, then thresholded at 0.5.

    The target side must divide the source side exactly.
    """
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    h, w = g.shape[-2:]
    th, tw = shape[-2:]
    if g.shape[:-2] != tuple(shape[:-2]) or h % th or w % tw:
        raise ValueError(f"cannot reduce ground truth {g.shape} to {tuple(shape)}")
    blocks = g.reshape(g.shape[:-2] + (th, h // th, tw, w // tw)).mean(axis=(-3, -1))
    return (blocks >= 0.5).astype(g.dtype)


def total_loss(preds: Sequence[Tensor], g, weights: LossWeights = LossWeights()) -> Tensor:
    """Weighted sum over the four heads of BCE + IoU.

    Each prediction is scored against the mask at its own resolution: a
    full-size map sees ``g`` unchanged, a coarser one sees ``mask_at(g, ...)``.
    """
    if len(preds) != 4:
        raise ValueError(f"expected four saliency maps, got {len(preds)}")
    g = g.data if isinstance(g, Tensor) else np.asarray(g)
    out = None
    for lam, p in zip(weights.lambdas, preds):
        gi = mask_at(g, p.shape)
        term = (bce_loss(p, gi) + iou_loss(p, gi, weights.eps)) * lam
        out = term if out is None else out + term
    return out


def loss_terms(preds: Sequence[Tensor], g, weights: LossWeights = LossWeights()) -> np.ndarray:
    """(4, 2) array of [bce, iou] values per head, for logging."""
    g = g.data if isinstance(g, Tensor) else np.asarray(g)
    return np.array([[bce_loss(p, mask_at(g, p.shape)).item(), iou_loss(p, mask_at(g, p.shape), weights.eps).item()]
                     for p in preds])
