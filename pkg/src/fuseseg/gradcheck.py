"""Central finite-difference gradient checking (verification mode only).

Analytic gradients from the tape are compared against
``(f(x+h) - f(x-h)) / 2h`` elementwise with h = 1e-5.  The relative error
uses a floored denominator so that near-zero gradients are compared on an
absolute scale:

    err = |analytic - numeric| / max(|analytic|, |numeric|, 1e-3)

Checks run in float64; float32 rounding would drown the comparison.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

STEP = 1e-5
ERR_FLOOR = 1e-3


def numerical_grad(fn, tensor, step=STEP):
    """Central-difference gradient of scalar-valued ``fn`` w.r.t. ``tensor``."""
    flat = tensor.data.ravel()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = float(fn().data)
        flat[i] = keep - step
        lo = float(fn().data)
        flat[i] = keep
        grad[i] = (hi - lo) / (2.0 * step)
    return grad.reshape(tensor.data.shape)


def max_rel_error(fn, tensors, step=STEP):
    """Worst relative error over all elements of all checked tensors.

    ``fn`` rebuilds the scalar loss from scratch on every call; ``tensors``
    are the leaves to perturb and compare.
    """
    for t in tensors:
        t.zero_grad()
    loss = fn()
    loss.backward()
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        numeric = numerical_grad(fn, t, step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ERR_FLOOR)
        worst = max(worst, float((np.abs(analytic - numeric) / denom).max()))
    return worst


def projection_loss(out, proj):
    """Scalar loss mixing every output element: sum(out * proj)."""
    return (out * Tensor(proj, dtype=out.dtype)).sum()


# Elementwise ops get a tighter bar: their finite differences carry no
# reduction noise worth speaking of.
TOL_DEFAULT = 1e-4
TOL_ELEMENTWISE = 1e-6


def _leaf(rng, shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True,
                  dtype=np.float64)


def run_suite(seed=7):
    """Finite-difference checks for every differentiable op plus the composite.

    Returns a list of (name, max_rel_err, tolerance) rows, float64 only.
    """
    from . import functional as F
    from . import tensor as T
    from .config import RunConfig
    from .data import boundary_targets, gen_shapes
    from .losses import LossWeights, multi_task_loss
    from .model import build_model

    rng = np.random.default_rng(seed)
    rows = []

    def check(name, fn, leaves, tol=TOL_DEFAULT):
        rows.append((name, max_rel_error(fn, leaves), tol))

    x = _leaf(rng, (2, 3, 8, 8))
    w = _leaf(rng, (4, 3, 3, 3), 0.5)
    b = _leaf(rng, (4,), 0.1)
    proj = rng.standard_normal((2, 4, 4, 4))
    check("conv2d", lambda: projection_loss(
        F.conv2d(x, w, b, stride=2, padding=1), proj), [x, w, b])

    xd = _leaf(rng, (1, 2, 9, 9))
    wd = _leaf(rng, (3, 2, 3, 3), 0.5)
    projd = rng.standard_normal((1, 3, 5, 5))
    check("conv2d_dilated", lambda: projection_loss(
        F.conv2d(xd, wd, dilation=2, padding=2, stride=2), projd), [xd, wd])

    xt = _leaf(rng, (1, 3, 4, 4))
    wt = _leaf(rng, (3, 2, 4, 4), 0.4)
    projt = rng.standard_normal((1, 2, 8, 8))
    check("conv_transpose2d", lambda: projection_loss(
        F.conv_transpose2d(xt, wt, stride=2, padding=1), projt), [xt, wt])

    xp = _leaf(rng, (2, 3, 6, 6))
    projp = rng.standard_normal((2, 3, 6, 6))
    check("maxpool2d", lambda: projection_loss(
        F.maxpool2d(xp, 3, 1, 1), projp), [xp])

    for kind in ("sigmoid", "relu", "softmax_channel"):
        xa = _leaf(rng, (2, 4, 3, 3))
        proja = rng.standard_normal((2, 4, 3, 3))
        check(kind, lambda xa=xa, kind=kind, proja=proja: projection_loss(
            F.activation(xa, kind), proja), [xa], tol=TOL_ELEMENTWISE)

    from .layers import BatchNorm2d
    for training in (True, False):
        bn = BatchNorm2d(3, np.float64)
        bn._buffers["running_mean"][:] = rng.standard_normal(3) * 0.3
        bn._buffers["running_var"][:] = 1.0 + rng.random(3)
        bn.train(training)
        xb = _leaf(rng, (4, 3, 5, 5))
        projb = rng.standard_normal((4, 3, 5, 5))
        check(f"batchnorm2d_{'train' if training else 'eval'}",
              lambda bn=bn, xb=xb, projb=projb: projection_loss(bn(xb), projb),
              [xb, bn.gamma, bn.beta])

    xr = _leaf(rng, (2, 3, 4, 5))
    projr = rng.standard_normal((2, 3, 9, 7))
    check("resize_bilinear", lambda: projection_loss(
        F.resize_bilinear(xr, 9, 7), projr), [xr])

    xg = _leaf(rng, (2, 5, 4, 4))
    projg = rng.standard_normal((2, 5, 1, 1))
    check("global_avg_pool", lambda: projection_loss(
        F.global_avg_pool(xg), projg), [xg])

    ea = _leaf(rng, (2, 3, 4, 4))
    eb = _leaf(rng, (2, 3, 4, 4))
    proje = rng.standard_normal((2, 3, 4, 4))
    check("add", lambda: projection_loss(T.add(ea, eb), proje), [ea, eb],
          tol=TOL_ELEMENTWISE)
    check("sub", lambda: projection_loss(T.sub(ea, eb), proje), [ea, eb],
          tol=TOL_ELEMENTWISE)
    check("mul", lambda: projection_loss(T.mul(ea, eb), proje), [ea, eb],
          tol=TOL_ELEMENTWISE)
    gate = _leaf(rng, (2, 1, 4, 4))
    check("mul_broadcast", lambda: projection_loss(T.mul(gate, ea), proje),
          [gate, ea], tol=TOL_ELEMENTWISE)
    check("scalar_add", lambda: projection_loss(T.scalar_add(ea, 0.7), proje),
          [ea], tol=TOL_ELEMENTWISE)

    ca = _leaf(rng, (2, 2, 4, 4))
    cb = _leaf(rng, (2, 3, 4, 4))
    projc = rng.standard_normal((2, 5, 4, 4))
    check("concat_channels", lambda: projection_loss(
        T.concat_channels(ca, cb), projc), [ca, cb], tol=TOL_ELEMENTWISE)
    projs = rng.standard_normal((2, 2, 4, 4))
    check("slice_channels", lambda: projection_loss(
        T.slice_channels(cb, 1, 3), projs), [cb], tol=TOL_ELEMENTWISE)
    projrep = rng.standard_normal((2, 8, 4, 4))
    check("repeat_channels", lambda: projection_loss(
        T.repeat_channels(ca, 4), projrep), [ca], tol=TOL_ELEMENTWISE)

    zl = _leaf(rng, (2, 3, 4, 4), 2.0)
    targets = (rng.random((2, 3, 4, 4)) < 0.3).astype(np.float64)
    wmask = rng.random((2, 3, 4, 4))
    check("bce_with_logits_sum", lambda: F.bce_with_logits_sum(zl, targets, wmask),
          [zl], tol=TOL_ELEMENTWISE)

    # Composite: the whole two-stream model through the multi-task loss.
    cfg = RunConfig(num_classes=3, image_size=16, stage_channels=(2, 3, 4, 4, 4),
                    gate_channels=4, aspp_channels=6, aspp_rates=(1, 2),
                    edge_mid_channels=3, precision="verification", seed=seed,
                    boundary_thickness=2).validate()
    model = build_model(cfg)
    image, labels = gen_shapes(seed, size=16, num_classes=3, shapes_per_image=3)
    btargets = boundary_targets(labels, 2, 3)[None]
    batch = Tensor(image[None], dtype=np.float64)
    weights = LossWeights(1.0, 1.0, "per_image")
    params = list(model.named_parameters())

    def composite():
        out = model(batch)
        return multi_task_loss(out.final, out.boundary, labels[None], btargets, weights)

    rows.append(("composite_model", max_rel_error(composite, [p for _, p in params]),
                 TOL_DEFAULT))
    return rows
