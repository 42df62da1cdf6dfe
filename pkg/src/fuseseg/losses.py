"""Multi-task loss: class-balanced BCE for boundaries, plain BCE for segmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functional import bce_with_logits_sum
from .tensor import Tensor, add, scalar_mul

IGNORE = 255

# Floor applied to balancing weights so a degenerate target (a class plane
# that is all boundary or all background) cannot zero out the loss term.
WEIGHT_FLOOR = 1e-6


class LossError(ValueError):
    """The loss inputs are degenerate (e.g. every pixel ignored)."""


@dataclass
class LossWeights:
    lambda1: float = 1.0       # boundary term
    lambda2: float = 1.0       # segmentation term
    beta_mode: str = "per_image"

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda1 + self.lambda2 <= 0:
            raise LossError(f"lambda1/lambda2 must be >= 0 and not both zero, "
                            f"got {self.lambda1}/{self.lambda2}")
        if self.beta_mode not in ("per_image", "per_batch"):
            raise LossError(f"beta_mode must be per_image|per_batch, got {self.beta_mode!r}")


def one_hot(labels, num_classes):
    """(N, H, W) int labels -> ((N, L, H, W) one-hot, (N, 1, H, W) valid mask).

    Ignore pixels produce an all-zero one-hot column and a zero valid mask.
    """
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    n, h, w = labels.shape
    valid = labels != IGNORE
    bad = valid & (labels >= num_classes)
    if bad.any():
        raise LossError(f"label {labels[bad].max()} out of range for {num_classes} classes")
    onehot = np.zeros((n, num_classes, h, w), dtype=np.float32)
    nn, yy, xx = np.nonzero(valid)
    onehot[nn, labels[nn, yy, xx], yy, xx] = 1.0
    return onehot, valid[:, None].astype(np.float32)


def bce_loss(logits, target_onehot, ignore_mask=None):
    """Mean stable BCE over non-ignored elements.

    ``ignore_mask`` is (N, 1, H, W) with 1 marking pixels to drop; dropped
    pixels contribute nothing and are excluded from the denominator.
    """
    n, l, h, w = logits.data.shape
    if ignore_mask is None:
        valid = np.ones((n, 1, h, w), dtype=np.float32)
    else:
        valid = 1.0 - np.asarray(ignore_mask, dtype=np.float32)
    n_valid = valid.sum()
    if n_valid == 0:
        raise LossError("bce_loss: every pixel is ignored")
    total = bce_with_logits_sum(logits, target_onehot, valid)
    return scalar_mul(total, 1.0 / (l * n_valid))


def boundary_balance_weights(target, beta_mode="per_image"):
    """Per-element weights: beta_c on boundary pixels, 1-beta_c elsewhere.

    beta_c is the non-boundary fraction of class c's plane, computed per
    image or over the whole batch, floored so degenerate planes keep an
    epsilon of signal.
    """
    target = np.asarray(target, dtype=np.float32)
    n, l, h, w = target.shape
    if beta_mode == "per_image":
        pos = target.sum(axis=(2, 3), keepdims=True)
        beta = 1.0 - pos / (h * w)
    elif beta_mode == "per_batch":
        pos = target.sum(axis=(0, 2, 3), keepdims=True)
        beta = 1.0 - pos / (n * h * w)
    else:
        raise LossError(f"unknown beta_mode {beta_mode!r}")
    weights = np.where(target > 0.5, beta, 1.0 - beta)
    return np.maximum(weights, WEIGHT_FLOOR).astype(np.float32)


def wbce_loss(logits, boundary_target, weights: LossWeights):
    """Class-balanced BCE over per-class boundary planes."""
    target = np.asarray(boundary_target, dtype=np.float32)
    if target.shape != logits.data.shape:
        raise LossError(f"wbce_loss: target shape {target.shape} does not match "
                        f"logits {logits.data.shape}")
    w = boundary_balance_weights(target, weights.beta_mode)
    total = bce_with_logits_sum(logits, target, w)
    return scalar_mul(total, 1.0 / target.size)


def multi_task_loss(final_logits, boundary_logits, seg_labels, boundary_target,
                    weights: LossWeights):
    """lambda1 * boundary WBCE + lambda2 * segmentation BCE."""
    num_classes = final_logits.data.shape[1]
    onehot, valid = one_hot(seg_labels, num_classes)
    seg = bce_loss(final_logits, onehot, 1.0 - valid)
    bnd = wbce_loss(boundary_logits, boundary_target, weights)
    return add(scalar_mul(bnd, weights.lambda1), scalar_mul(seg, weights.lambda2))
