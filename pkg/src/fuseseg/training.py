"""Training loop, batch assembly and dataset-level evaluation.

Every random draw in an iteration comes from a child stream keyed by
(root seed, purpose, iteration, sample), so a run resumed from a
checkpoint at iteration k replays iterations k.. with bit-identical
batches and reproduces the uninterrupted loss trajectory exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data as D
from . import metrics as M
from .checkpoint import (load_checkpoint, restore_model, restore_optimizer,
                         save_checkpoint)
from .config import RunConfig, child_rng, child_seed
from .losses import LossWeights, bce_loss, one_hot, scalar_mul, wbce_loss
from .model import SegmentationNet, build_model
from .optim import SGD, poly_lr
from .tensor import Tensor, add, dtype_for, first_nonfinite


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss or bad run setup)."""


@dataclass
class IterationLog:
    iteration: int
    lr: float
    total: float
    boundary: float
    segmentation: float
    aux: float

    def tsv(self):
        return (f"{self.iteration}\t{self.lr:.6g}\t{self.total:.6g}"
                f"\t{self.boundary:.6g}\t{self.segmentation:.6g}\t{self.aux:.6g}")


LOG_HEADER = "#iter\tlr\ttotal\twbce\tbce\taux"


def make_batch(cfg: RunConfig, dataset, freq, iteration):
    """Assemble one augmented batch; fully determined by (seed, iteration)."""
    pick = child_rng(cfg.seed, "batch", iteration)
    indices = pick.integers(0, len(dataset), cfg.batch_size)
    images = []
    labels = []
    for j, idx in enumerate(indices):
        image, lab = dataset[int(idx)]
        image, lab = D.augment(
            image, lab, cfg.crop_mode, cfg.crop_size, cfg.crop_size,
            child_seed(cfg.seed, "augment", iteration, j), freq=freq,
            flip=cfg.aug_flip, scale_range=(cfg.scale_min, cfg.scale_max))
        images.append(image)
        labels.append(lab)
    return np.stack(images), np.stack(labels)


def batch_boundary_targets(labels, thickness, num_classes):
    return np.stack([D.boundary_targets(lab, thickness, num_classes) for lab in labels])


def compute_losses(cfg: RunConfig, output, labels):
    """Per-mode loss composition; returns (total, boundary, segmentation, aux)."""
    weights = LossWeights(cfg.lambda1, cfg.lambda2, cfg.beta_mode)
    onehot, valid = one_hot(labels, cfg.num_classes)
    seg = bce_loss(output.final, onehot, 1.0 - valid)
    if output.boundary is None:
        zero = Tensor(np.zeros((), dtype=seg.data.dtype))
        total = scalar_mul(seg, weights.lambda2)
        parts = (zero, seg, zero)
    else:
        btargets = batch_boundary_targets(labels, cfg.boundary_thickness, cfg.num_classes)
        bnd = wbce_loss(output.boundary, btargets, weights)
        total = add(scalar_mul(bnd, weights.lambda1), scalar_mul(seg, weights.lambda2))
        aux = None
        if cfg.aux_loss:
            aux = bce_loss(output.coarse, onehot, 1.0 - valid)
            total = add(total, scalar_mul(aux, cfg.aux_weight))
        zero = Tensor(np.zeros((), dtype=seg.data.dtype))
        parts = (bnd, seg, aux if aux is not None else zero)
    return total, parts


def train(cfg: RunConfig, dataset, checkpoint_path=None, resume=None, log=None):
    """Run the configured number of iterations over an in-memory dataset.

    Returns ``(model, optimizer, history)``.  ``resume`` is a checkpoint
    path; training continues from its iteration counter with the same
    stream of batches the uninterrupted run would have seen.
    """
    cfg.validate()
    dtype = dtype_for(cfg.precision)
    model = build_model(cfg, dtype)
    optimizer = SGD(list(model.named_parameters()),
                    momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    start = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config.model_mode != cfg.model_mode or ckpt.config.num_classes != cfg.num_classes:
            raise TrainingError("resume checkpoint was trained with an incompatible config")
        restore_model(model, ckpt)
        restore_optimizer(optimizer, ckpt)
        start = ckpt.iteration
    freq = D.class_frequencies((lab for _, lab in dataset), cfg.num_classes)
    model.train()
    history = []
    for iteration in range(start, cfg.total_iters):
        lr = poly_lr(cfg.base_lr, iteration, cfg.total_iters, cfg.power)
        images, labels = make_batch(cfg, dataset, freq, iteration)
        batch = Tensor(images, dtype=dtype)
        output = model(batch)
        total, (bnd, seg, aux) = compute_losses(cfg, output, labels)
        if not np.isfinite(total.data):
            culprit = first_nonfinite(total)
            where = f"{culprit[0]}" + (f" ({culprit[1]})" if culprit and culprit[1] else "") \
                if culprit else "loss"
            raise TrainingError(f"non-finite loss at iteration {iteration}: "
                                f"first NaN/Inf tensor is {where}")
        optimizer.zero_grad()
        total.backward()
        optimizer.step(lr)
        entry = IterationLog(iteration, lr, float(total.data),
                             float(bnd.data), float(seg.data), float(aux.data))
        history.append(entry)
        if log is not None:
            log(entry)
        done = iteration + 1
        if checkpoint_path and cfg.checkpoint_every and done % cfg.checkpoint_every == 0 \
                and done < cfg.total_iters:
            save_checkpoint(checkpoint_path, model, optimizer, done, cfg)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, optimizer, cfg.total_iters, cfg)
    return model, optimizer, history


def predict(model: SegmentationNet, image, dtype=None):
    """Single-image inference in eval mode; returns the model output."""
    if dtype is None:
        dtype = model.backbone.stages[0][0].conv.weight.dtype
    was_training = model.training
    model.eval()
    batch = image[None] if image.ndim == 3 else image
    out = model(Tensor(batch, dtype=dtype))
    model.train(was_training)
    return out


@dataclass
class EvalResult:
    confusion: "np.ndarray"
    per_class_iou: np.ndarray
    mean_iou: float
    boundary: list  # BoundaryScore per requested thickness


def evaluate(model: SegmentationNet, dataset, num_classes, thicknesses=(),
             include_background=True) -> EvalResult:
    """Single-scale inference over a dataset; global mIoU and boundary F1.

    Boundary precision/recall aggregate matched-contour counts over the
    whole dataset before forming ratios.
    """
    total = M.ConfusionMatrix(np.zeros((num_classes, num_classes), dtype=np.int64))
    match_counts = {t: np.zeros((num_classes, 4), dtype=np.int64) for t in thicknesses}
    present = {t: np.zeros(num_classes, dtype=bool) for t in thicknesses}
    for image, labels in dataset:
        out = predict(model, image)
        pred = out.final.data.argmax(axis=1)[0].astype(np.uint8)
        total = total + M.confusion(pred, labels, num_classes)
        for t in thicknesses:
            rows = M.boundary_match_counts(pred, labels, num_classes, t)
            usable = rows[:, 2] >= 0
            match_counts[t][usable] += rows[usable]
            present[t] |= usable
    per_class, mean = M.miou(total, include_background=include_background)
    boundary = []
    for t in thicknesses:
        rows = match_counts[t].copy()
        rows[~present[t]] = -1
        boundary.append(M.score_from_counts(rows, t))
    return EvalResult(confusion=total.counts, per_class_iou=per_class,
                      mean_iou=mean, boundary=boundary)
