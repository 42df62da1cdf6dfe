"""Evaluation: confusion matrix, per-class/mean IoU, boundary F1 at a tolerance.

Boundary matching is distance-threshold based: a contour pixel counts as
matched when it lies within Euclidean distance <= thickness of any contour
pixel on the other side.  This is exactly reproducible against a
brute-force all-pairs oracle (no bipartite one-to-one matching), so scores
are comparable only within this artifact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .data import IGNORE, contour_mask


class MetricError(ValueError):
    """Metric inputs are malformed."""


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (L, L) int64, rows = ground truth, cols = prediction

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts)


def confusion(pred, gt, num_classes) -> ConfusionMatrix:
    """Accumulate counts[gt, pred] over non-ignore ground-truth pixels."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricError(f"confusion: shapes {pred.shape} vs {gt.shape} differ")
    valid = gt != IGNORE
    p = pred[valid].astype(np.int64)
    g = gt[valid].astype(np.int64)
    if p.size and (p.max() >= num_classes or g.max() >= num_classes):
        raise MetricError(f"confusion: label >= {num_classes} present "
                          f"(pred max {p.max() if p.size else '-'}, gt max {g.max() if g.size else '-'})")
    counts = np.bincount(g * num_classes + p, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes).astype(np.int64))


def miou(matrix: ConfusionMatrix, include_background=True):
    """Per-class IoU (NaN where the union is empty) and their mean.

    Classes with an empty union never enter the mean; ``include_background``
    toggles whether class 0 participates.
    """
    counts = matrix.counts.astype(np.float64)
    diag = np.diag(counts)
    union = counts.sum(axis=0) + counts.sum(axis=1) - diag
    per_class = np.full(len(diag), np.nan)
    nonzero = union > 0
    per_class[nonzero] = diag[nonzero] / union[nonzero]
    usable = nonzero.copy()
    if not include_background:
        usable[0] = False
    mean = float(per_class[usable].mean()) if usable.any() else float("nan")
    return per_class, mean


@dataclass
class BoundaryScore:
    precision: np.ndarray  # per class, NaN where the class is absent from gt
    recall: np.ndarray
    f1: np.ndarray
    thickness: int

    @property
    def mean_f1(self):
        present = ~np.isnan(self.f1)
        return float(self.f1[present].mean()) if present.any() else float("nan")


def _within(mask_from, mask_to, thickness):
    """Of the pixels in mask_from, which lie within ``thickness`` of mask_to."""
    if not mask_to.any():
        return np.zeros(int(mask_from.sum()), dtype=bool)
    dist = ndimage.distance_transform_edt(~mask_to)
    return dist[mask_from] <= thickness


def boundary_match_counts(pred, gt, num_classes, thickness):
    """Per-class (pred pixels, matched pred, gt pixels, matched gt) contour counts.

    Classes with no ground-truth presence return -1 in the gt-pixel slot so
    aggregation can skip them.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricError(f"boundary metric: shapes {pred.shape} vs {gt.shape} differ")
    pred_contours = contour_mask(pred)
    gt_contours = contour_mask(gt)
    gt_valid = gt != IGNORE
    rows = np.zeros((num_classes, 4), dtype=np.int64)
    for c in range(num_classes):
        if not (gt_valid & (gt == c)).any():
            rows[c] = (-1, -1, -1, -1)
            continue
        pc = pred_contours & (pred == c)
        gc = gt_contours & (gt == c)
        rows[c, 0] = pc.sum()
        rows[c, 1] = _within(pc, gc, thickness).sum()
        rows[c, 2] = gc.sum()
        rows[c, 3] = _within(gc, pc, thickness).sum()
    return rows


def score_from_counts(rows, thickness) -> BoundaryScore:
    """Turn matched-contour counts into precision/recall/F1 per class.

    An empty contour set counts as perfectly matched on its own side, so
    two boundary-free maps agree (F1 = 1) and a one-sided boundary fails
    (F1 = 0).
    """
    num_classes = rows.shape[0]
    precision = np.full(num_classes, np.nan)
    recall = np.full(num_classes, np.nan)
    f1 = np.full(num_classes, np.nan)
    for c in range(num_classes):
        npred, nmatched, ngt, ngt_matched = rows[c]
        if ngt < 0:
            continue
        p = 1.0 if npred == 0 else nmatched / npred
        r = 1.0 if ngt == 0 else ngt_matched / ngt
        precision[c] = p
        recall[c] = r
        f1[c] = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return BoundaryScore(precision, recall, f1, thickness)


def f1_boundary(pred, gt, num_classes, thickness) -> BoundaryScore:
    """Contour-matching F-score of a single prediction at one thickness."""
    if thickness < 1:
        raise MetricError(f"thickness must be >= 1, got {thickness}")
    return score_from_counts(boundary_match_counts(pred, gt, num_classes, thickness),
                             thickness)


def format_report(class_names, per_class_iou, scores):
    """Tab-separated report: one row per class plus a mean row.

    With a single BoundaryScore the columns are (name, iou, boundary_p,
    boundary_r, boundary_f1); more scores append a p/r/f1 column triple per
    thickness.  The leading '#' line is a column header, not a data row.
    """
    header = ["class", "iou"]
    for s in scores:
        header += [f"p{s.thickness}", f"r{s.thickness}", f"f1{s.thickness}"]
    lines = ["#" + "\t".join(header)]

    def fmt(v):
        return "nan" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.4f}"

    for c, name in enumerate(class_names):
        row = [name, fmt(per_class_iou[c])]
        for s in scores:
            row += [fmt(s.precision[c]), fmt(s.recall[c]), fmt(s.f1[c])]
        lines.append("\t".join(row))
    iou_present = ~np.isnan(np.asarray(per_class_iou))
    mean_iou = float(np.asarray(per_class_iou)[iou_present].mean()) if iou_present.any() else float("nan")
    mean_row = ["mean", fmt(mean_iou)]
    for s in scores:
        for arr in (s.precision, s.recall, s.f1):
            present = ~np.isnan(arr)
            mean_row.append(fmt(float(arr[present].mean()) if present.any() else float("nan")))
    lines.append("\t".join(mean_row))
    return "\n".join(lines) + "\n"
