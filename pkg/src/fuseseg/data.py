"""Synthetic imbalanced dataset, boundary ground truth and crop selection.

Boundary ground truth: a contour pixel is any non-ignore pixel with a
4-neighbour of a different non-ignore label.  The per-class plane marks
every pixel within Euclidean distance < thickness of a contour pixel
*whose own label is that class* (each side of a shared border belongs to
its own class); thickness 1 therefore marks exactly the contour pixels.

Crop selection: per-pixel weights inversely proportional to dataset class
frequency, normalized so a perfectly balanced dataset gives weight 1.0
everywhere; a summed-area table turns any rectangle sum into four lookups
and the best crop maximizes that sum, breaking ties uniformly at random.
"""

from __future__ import annotations

import os
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .netpbm import read_pgm, read_ppm, write_pgm, write_ppm

IGNORE = 255


class DataError(ValueError):
    """Dataset or label-map contents violate a precondition."""


class CropRegion(NamedTuple):
    y: int
    x: int
    h: int
    w: int


def _palette(num_classes):
    # Golden-ratio hue stepping: stable, well-spread base colors per class.
    colors = np.zeros((num_classes, 3))
    for c in range(num_classes):
        hue = (0.11 + c * 0.61803398875) % 1.0
        i = int(hue * 6)
        f = hue * 6 - i
        v, p, q, t = 0.85, 0.25, 0.85 - 0.6 * f, 0.25 + 0.6 * f
        colors[c] = [(v, q, p), (t, v, p), (p, v, q), (p, t, v), (q, p, v), (v, p, t)][i % 6]
    colors[0] = (0.18, 0.18, 0.18)  # background stays dark
    return colors


def _disk_mask(size, cy, cx, r):
    yy, xx = np.mgrid[:size, :size]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _triangle_mask(size, pts):
    yy, xx = np.mgrid[:size, :size]
    inside = np.ones((size, size), dtype=bool)
    signs = []
    for i in range(3):
        y0, x0 = pts[i]
        y1, x1 = pts[(i + 1) % 3]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        signs.append(cross)
    pos = (signs[0] >= 0) & (signs[1] >= 0) & (signs[2] >= 0)
    neg = (signs[0] <= 0) & (signs[1] <= 0) & (signs[2] <= 0)
    return pos | neg


def _sample_class(rng, num_classes, decay):
    # P(class c) proportional to decay**(c-1) over the non-background classes,
    # so high indices are geometrically rarer.
    weights = decay ** np.arange(num_classes - 1)
    return 1 + int(rng.choice(num_classes - 1, p=weights / weights.sum()))


def gen_shapes(seed, size=64, num_classes=5, shapes_per_image=5, rarity_decay=0.5,
               noise_sigma=0.05):
    """Seeded synthetic scene: colored shapes over a dark background.

    Returns ``(image, labels)`` with the image as float32 (3, H, W) in
    [0, 1] and labels as uint8 (H, W).  Later shapes occlude earlier ones;
    class indices above 1 appear geometrically less often.
    """
    if num_classes < 3:
        raise DataError(f"gen_shapes needs num_classes >= 3, got {num_classes}")
    rng = np.random.default_rng(seed)
    palette = _palette(num_classes)
    labels = np.zeros((size, size), dtype=np.uint8)
    image = np.empty((size, size, 3), dtype=np.float64)
    image[:] = palette[0]
    for _ in range(shapes_per_image):
        cls = _sample_class(rng, num_classes, rarity_decay)
        kind = rng.integers(3)
        cy, cx = rng.uniform(0, size, 2)
        extent = rng.uniform(0.12, 0.3) * size
        if kind == 0:
            hh, ww = rng.uniform(0.6, 1.4, 2) * extent
            y0, y1 = int(max(cy - hh, 0)), int(min(cy + hh, size))
            x0, x1 = int(max(cx - ww, 0)), int(min(cx + ww, size))
            mask = np.zeros((size, size), dtype=bool)
            mask[y0:y1, x0:x1] = True
        elif kind == 1:
            mask = _disk_mask(size, cy, cx, extent)
        else:
            pts = [(cy + rng.uniform(-1.2, 1.2) * extent,
                    cx + rng.uniform(-1.2, 1.2) * extent) for _ in range(3)]
            mask = _triangle_mask(size, pts)
        labels[mask] = cls
        image[mask] = palette[cls]
    image = image + rng.normal(0.0, noise_sigma, image.shape)
    np.clip(image, 0.0, 1.0, out=image)
    return image.transpose(2, 0, 1).astype(np.float32), labels


def contour_mask(labels):
    """Pixels with a 4-neighbour of a different non-ignore label."""
    labels = np.asarray(labels)
    valid = labels != IGNORE
    out = np.zeros(labels.shape, dtype=bool)
    for axis, shift in ((0, 1), (1, 1)):
        a = [slice(None)] * 2
        b = [slice(None)] * 2
        a[axis] = slice(None, -shift)
        b[axis] = slice(shift, None)
        a, b = tuple(a), tuple(b)
        diff = (labels[a] != labels[b]) & valid[a] & valid[b]
        out[a] |= diff
        out[b] |= diff
    out &= valid
    return out


def boundary_targets(labels, thickness, num_classes):
    """Per-class binary boundary planes (L, H, W), band of the given thickness."""
    if thickness < 1:
        raise DataError(f"thickness must be >= 1, got {thickness}")
    labels = np.asarray(labels)
    contours = contour_mask(labels)
    planes = np.zeros((num_classes,) + labels.shape, dtype=np.uint8)
    for c in range(num_classes):
        seeds = contours & (labels == c)
        if not seeds.any():
            continue
        dist = ndimage.distance_transform_edt(~seeds)
        planes[c] = dist <= thickness
    return planes


def class_frequencies(label_maps, num_classes):
    """Exact per-class pixel counts over an iterable of label maps."""
    counts = np.zeros(num_classes, dtype=np.int64)
    seen = False
    for labels in label_maps:
        labels = np.asarray(labels)
        seen = True
        valid = labels[labels != IGNORE]
        if valid.size and valid.max() >= num_classes:
            raise DataError(f"label {valid.max()} out of range for {num_classes} classes")
        counts += np.bincount(valid.ravel(), minlength=num_classes)[:num_classes]
    if not seen or counts.sum() == 0:
        raise DataError("class_frequencies: no non-ignore pixels in the dataset")
    return counts


def pixel_weights(labels, freq):
    """Inverse-frequency weights, mean 1.0 on a balanced dataset; ignore -> 0."""
    labels = np.asarray(labels)
    freq = np.asarray(freq, dtype=np.float64)
    valid = labels != IGNORE
    present = np.unique(labels[valid])
    if present.size and (freq[present] == 0).any():
        missing = present[freq[present] == 0]
        raise DataError(f"pixel_weights: classes {missing.tolist()} present but have zero frequency")
    total = freq.sum()
    n_present = int((freq > 0).sum())
    weights = np.zeros(labels.shape, dtype=np.float64)
    if valid.any():
        weights[valid] = total / (n_present * freq[labels[valid]])
    return weights


def integral_table(weights):
    """Summed-area table: table[y, x] = sum of weights over [0, y) x [0, x)."""
    weights = np.asarray(weights, dtype=np.float64)
    h, w = weights.shape
    table = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(weights, axis=0), axis=1, out=table[1:, 1:])
    return table


def rect_sum(table, region: CropRegion):
    """O(1) rectangle sum from the summed-area table."""
    y, x, h, w = region
    th, tw = table.shape[0] - 1, table.shape[1] - 1
    if y < 0 or x < 0 or h < 1 or w < 1 or y + h > th or x + w > tw:
        raise DataError(f"rect_sum: region {region} outside {th}x{tw} table")
    return table[y + h, x + w] - table[y, x + w] - table[y + h, x] + table[y, x]


def best_crop(table, crop_h, crop_w, rng_seed):
    """Crop position maximizing the weight sum; ties broken uniformly at random."""
    th, tw = table.shape[0] - 1, table.shape[1] - 1
    if crop_h > th or crop_w > tw:
        raise DataError(f"best_crop: crop {crop_h}x{crop_w} larger than image {th}x{tw}")
    ny, nx = th - crop_h + 1, tw - crop_w + 1
    # All positions at once: the four-corner formula vectorized over (y, x).
    sums = (table[crop_h:, crop_w:] - table[:ny, crop_w:]
            - table[crop_h:, :nx] + table[:ny, :nx])
    best = sums.max()
    threshold = best - 1e-9 * max(abs(best), 1.0)
    ys, xs = np.nonzero(sums >= threshold)
    rng = np.random.default_rng(rng_seed)
    pick = int(rng.integers(len(ys)))
    return CropRegion(int(ys[pick]), int(xs[pick]), crop_h, crop_w)


def _resize_image_bilinear(image, out_h, out_w):
    """Array-level bilinear resize of a (C, H, W) image (align-corners-false)."""
    c, h, w = image.shape
    pos_y = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    pos_x = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    yl = np.floor(pos_y).astype(np.int64)
    xl = np.floor(pos_x).astype(np.int64)
    yh = np.minimum(yl + 1, h - 1)
    xh = np.minimum(xl + 1, w - 1)
    fy = (pos_y - yl)[:, None]
    fx = (pos_x - xl)[None, :]
    top = (1 - fx) * image[:, yl[:, None], xl[None, :]] + fx * image[:, yl[:, None], xh[None, :]]
    bot = (1 - fx) * image[:, yh[:, None], xl[None, :]] + fx * image[:, yh[:, None], xh[None, :]]
    return ((1 - fy) * top + fy * bot).astype(image.dtype)


def _resize_labels_nearest(labels, out_h, out_w):
    h, w = labels.shape
    ys = np.minimum(((np.arange(out_h) + 0.5) * (h / out_h)).astype(np.int64), h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * (w / out_w)).astype(np.int64), w - 1)
    return labels[ys[:, None], xs[None, :]]


def _rarest_present(labels, freq, rng):
    valid = labels[labels != IGNORE]
    present = np.unique(valid)
    if present.size == 0:
        return None
    f = np.asarray(freq, dtype=np.float64)[present]
    rare = present[f == f.min()]
    return int(rare[rng.integers(rare.size)])


def augment(image, labels, mode, crop_h, crop_w, seed, freq=None,
            flip=True, scale_range=(0.5, 2.0)):
    """Horizontal flip (p=0.5), uniform rescale, then a crop per ``mode``.

    ``random`` crops uniformly; ``uniform`` anchors on a pixel of the
    rarest class present; ``integral`` maximizes inverse-frequency weight
    mass through the summed-area table.  When the rescaled image is
    smaller than the crop it is padded (image with zeros, labels with the
    ignore value).  ``freq`` supplies dataset-level class frequencies for
    the weight map; without it the current labels are counted instead.
    """
    if mode not in ("random", "uniform", "integral"):
        raise DataError(f"unknown crop mode {mode!r}")
    rng = np.random.default_rng(seed)
    image = np.asarray(image)
    labels = np.asarray(labels)
    if flip and rng.random() < 0.5:
        image = image[:, :, ::-1]
        labels = labels[:, ::-1]
    lo, hi = scale_range
    scale = rng.uniform(lo, hi)
    new_h = max(int(round(labels.shape[0] * scale)), 1)
    new_w = max(int(round(labels.shape[1] * scale)), 1)
    if (new_h, new_w) != labels.shape:
        image = _resize_image_bilinear(image, new_h, new_w)
        labels = _resize_labels_nearest(labels, new_h, new_w)
    if new_h < crop_h or new_w < crop_w:
        pad_h = max(crop_h - new_h, 0)
        pad_w = max(crop_w - new_w, 0)
        image = np.pad(image, ((0, 0), (0, pad_h), (0, pad_w)))
        labels = np.pad(labels, ((0, pad_h), (0, pad_w)), constant_values=IGNORE)
        new_h, new_w = labels.shape

    if mode == "random":
        y = int(rng.integers(new_h - crop_h + 1))
        x = int(rng.integers(new_w - crop_w + 1))
    elif mode == "uniform":
        counts = freq if freq is not None else np.bincount(
            labels[labels != IGNORE].ravel(), minlength=256)
        cls = _rarest_present(labels, counts, rng)
        if cls is None:
            y = int(rng.integers(new_h - crop_h + 1))
            x = int(rng.integers(new_w - crop_w + 1))
        else:
            ys, xs = np.nonzero(labels == cls)
            pick = int(rng.integers(ys.size))
            y = int(np.clip(ys[pick] - crop_h // 2, 0, new_h - crop_h))
            x = int(np.clip(xs[pick] - crop_w // 2, 0, new_w - crop_w))
    else:
        if freq is None:
            counts = np.bincount(labels[labels != IGNORE].ravel(), minlength=1).astype(np.int64)
        else:
            counts = freq
        weights = pixel_weights(labels, counts)
        table = integral_table(weights)
        region = best_crop(table, crop_h, crop_w, int(rng.integers(2 ** 63)))
        y, x = region.y, region.x

    image = np.ascontiguousarray(image[:, y:y + crop_h, x:x + crop_w])
    labels = np.ascontiguousarray(labels[y:y + crop_h, x:x + crop_w])
    return image, labels


def write_dataset(out_dir, samples, frequencies=None):
    """Write (image, labels) pairs as PPM/PGM plus ``index.txt`` manifest.

    The manifest holds one ``image_path<TAB>label_path`` pair per line,
    relative to ``out_dir``.  When given, per-class counts go into
    ``frequencies.txt`` (``class<TAB>count`` lines).
    """
    images_dir = os.path.join(out_dir, "images")
    labels_dir = os.path.join(out_dir, "labels")
    os.makedirs(images_dir, exist_ok=True)
    os.makedirs(labels_dir, exist_ok=True)
    lines = []
    for i, (image, labels) in enumerate(samples):
        img_rel = os.path.join("images", f"img_{i:05d}.ppm")
        lab_rel = os.path.join("labels", f"lab_{i:05d}.pgm")
        raster = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
        write_ppm(os.path.join(out_dir, img_rel), raster.transpose(1, 2, 0))
        write_pgm(os.path.join(out_dir, lab_rel), np.asarray(labels, dtype=np.uint8))
        lines.append(f"{img_rel}\t{lab_rel}")
    with open(os.path.join(out_dir, "index.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    if frequencies is not None:
        with open(os.path.join(out_dir, "frequencies.txt"), "w", encoding="utf-8") as fh:
            for c, count in enumerate(frequencies):
                fh.write(f"{c}\t{int(count)}\n")


def load_dataset(data_dir):
    """Read a dataset written by :func:`write_dataset` back into memory.

    Returns a list of ``(image, labels)`` with images as float32 (3, H, W)
    in [0, 1].
    """
    index_path = os.path.join(data_dir, "index.txt")
    if not os.path.exists(index_path):
        raise DataError(f"no manifest at {index_path}")
    samples = []
    with open(index_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{index_path}:{lineno}: expected image<TAB>label, got {line!r}")
            image = read_ppm(os.path.join(data_dir, parts[0]))
            labels = read_pgm(os.path.join(data_dir, parts[1]))
            samples.append((image.transpose(2, 0, 1).astype(np.float32) / 255.0, labels))
    if not samples:
        raise DataError(f"{index_path}: empty manifest")
    return samples
