"""Differentiable neural-network operations for rank-4 tensors.

Convolutions run as im2col + one matmul; their backward passes reuse the
same column buffers.  Conventions (used everywhere, never per-call):
zero padding for convolutions, -inf padding for max-pooling, and
align-corners-false sampling for bilinear resize (source coordinate of
output pixel i is ``(i + 0.5) * in/out - 0.5``, clamped to the valid
range).
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _accumulate, _result


def _require_rank4(t, what):
    if t.data.ndim != 4:
        raise ShapeError(f"{what} expects a rank-4 tensor, got shape {t.data.shape}")


def _out_size(size, kernel, stride, dilation, padding):
    eff = dilation * (kernel - 1) + 1
    return (size + 2 * padding - eff) // stride + 1


def _im2col(x, kh, kw, stride, dilation, padding, fill=0.0):
    """(N, C, H, W) -> (N, C*Kh*Kw, out_h*out_w) patch matrix."""
    n, c, h, w = x.shape
    out_h = _out_size(h, kh, stride, dilation, padding)
    out_w = _out_size(w, kw, stride, dilation, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                   constant_values=fill)
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            y0 = i * dilation
            x0 = j * dilation
            cols[:, :, i, j] = x[:, :, y0:y0 + stride * out_h:stride,
                                 x0:x0 + stride * out_w:stride]
    return cols.reshape(n, c * kh * kw, out_h * out_w), out_h, out_w


def _col2im(cols, n, c, h, w, kh, kw, stride, dilation, padding, out_h, out_w):
    """Adjoint of :func:`_im2col`: scatter-add patches back to an image."""
    buf = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    cols6 = cols.reshape(n, c, kh, kw, out_h, out_w)
    for i in range(kh):
        for j in range(kw):
            y0 = i * dilation
            x0 = j * dilation
            buf[:, :, y0:y0 + stride * out_h:stride,
                x0:x0 + stride * out_w:stride] += cols6[:, :, i, j]
    if padding:
        return buf[:, :, padding:padding + h, padding:padding + w]
    return buf


def conv2d(x, weight, bias=None, stride=1, dilation=1, padding=0):
    """2-D convolution (cross-correlation), weight layout (Cout, Cin, Kh, Kw)."""
    _require_rank4(x, "conv2d input")
    _require_rank4(weight, "conv2d weight")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride/dilation/padding ({stride}, {dilation}, {padding})")
    n, cin, h, w = x.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input {x.data.shape}, weight {weight.data.shape}")
    out_h = _out_size(h, kh, stride, dilation, padding)
    out_w = _out_size(w, kw, stride, dilation, padding)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d: empty output for input {x.data.shape}, kernel {kh}x{kw}, "
                         f"stride {stride}, dilation {dilation}, padding {padding}")
    cols, out_h, out_w = _im2col(x.data, kh, kw, stride, dilation, padding)
    wmat = weight.data.reshape(cout, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(n, cout, out_h, out_w)

    def backward(g):
        g2 = g.reshape(n, cout, out_h * out_w)
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
            _accumulate(weight, gw.reshape(weight.data.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g2.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2)
            _accumulate(x, _col2im(gcols, n, cin, h, w, kh, kw,
                                   stride, dilation, padding, out_h, out_w))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward, "conv2d")


def conv_transpose2d(x, weight, stride=1, padding=0):
    """Adjoint of conv2d: with a shared weight, <conv2d(a), b> == <a, conv_transpose2d(b)>.

    Weight layout is (C_in, C_out, Kh, Kw), i.e. a conv2d kernel applied in
    the reverse direction.
    """
    _require_rank4(x, "conv_transpose2d input")
    _require_rank4(weight, "conv_transpose2d weight")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv_transpose2d: bad stride/padding ({stride}, {padding})")
    n, cin, h, w = x.data.shape
    cin_w, cout, kh, kw = weight.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv_transpose2d channel mismatch: input {x.data.shape}, "
                         f"weight {weight.data.shape}")
    out_h = (h - 1) * stride - 2 * padding + kh
    out_w = (w - 1) * stride - 2 * padding + kw
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv_transpose2d: empty output for input {x.data.shape}, "
                         f"kernel {kh}x{kw}, stride {stride}, padding {padding}")
    wmat = weight.data.reshape(cin, cout * kh * kw)
    x2 = x.data.reshape(n, cin, h * w)
    cols = np.matmul(wmat.T, x2)
    out = _col2im(cols, n, cout, out_h, out_w, kh, kw, stride, 1, padding, h, w)

    def backward(g):
        gcols, _, _ = _im2col(g, kh, kw, stride, 1, padding)
        if x.requires_grad:
            _accumulate(x, np.matmul(wmat, gcols).reshape(n, cin, h, w))
        if weight.requires_grad:
            gw = np.matmul(x2, gcols.transpose(0, 2, 1)).sum(axis=0)
            _accumulate(weight, gw.reshape(weight.data.shape))

    return _result(out, (x, weight), backward, "conv_transpose2d")


def maxpool2d(x, kernel, stride, padding=0):
    """Max pooling; ties route the gradient to the first (row-major) maximum."""
    _require_rank4(x, "maxpool2d input")
    if kernel < 1 or stride < 1 or padding < 0:
        raise ValueError(f"maxpool2d: bad kernel/stride/padding ({kernel}, {stride}, {padding})")
    n, c, h, w = x.data.shape
    out_h = _out_size(h, kernel, stride, 1, padding)
    out_w = _out_size(w, kernel, stride, 1, padding)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"maxpool2d: empty output for input {x.data.shape}, kernel {kernel}, "
                         f"stride {stride}, padding {padding}")
    cols, out_h, out_w = _im2col(x.data, kernel, kernel, stride, 1, padding, fill=-np.inf)
    colsk = cols.reshape(n, c, kernel * kernel, out_h * out_w)
    idx = colsk.argmax(axis=2)
    out = np.take_along_axis(colsk, idx[:, :, None, :], axis=2)[:, :, 0, :]
    if np.isneginf(out).any():
        raise ShapeError("maxpool2d: a pooling window covers no real elements "
                         f"(input {x.data.shape}, kernel {kernel}, padding {padding})")
    out = out.reshape(n, c, out_h, out_w)

    def backward(g):
        gcols = np.zeros_like(colsk)
        np.put_along_axis(gcols, idx[:, :, None, :],
                          g.reshape(n, c, 1, out_h * out_w), axis=2)
        _accumulate(x, _col2im(gcols.reshape(n, c * kernel * kernel, out_h * out_w),
                               n, c, h, w, kernel, kernel, stride, 1, padding,
                               out_h, out_w))

    return _result(out, (x,), backward, "maxpool2d")


def sigmoid(x):
    z = x.data
    ez = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))

    def backward(g):
        _accumulate(x, g * out * (1.0 - out))

    return _result(out, (x,), backward, "sigmoid")


def relu(x):
    out = np.maximum(x.data, 0)

    def backward(g):
        _accumulate(x, g * (x.data > 0))

    return _result(out, (x,), backward, "relu")


def softmax_channel(x):
    """Softmax across the channel axis, per pixel."""
    _require_rank4(x, "softmax_channel input")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        _accumulate(x, out * (g - dot))

    return _result(out, (x,), backward, "softmax_channel")


def activation(x, kind):
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return relu(x)
    if kind == "softmax_channel":
        return softmax_channel(x)
    raise ValueError(f"unknown activation kind {kind!r}")


def batchnorm2d(x, gamma, beta, running_mean, running_var, training,
                momentum=0.1, eps=1e-5):
    """Per-channel batch normalization.

    Train mode normalizes by (biased) batch statistics and folds them into
    the running buffers in place; eval mode normalizes by the buffers.
    """
    _require_rank4(x, "batchnorm2d input")
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"batchnorm2d: gamma/beta shapes {gamma.data.shape}/{beta.data.shape} "
                         f"do not match {c} channels")
    z = x.data
    if training:
        mu = z.mean(axis=(0, 2, 3))
        var = z.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (z - mu[None, :, None, None]) * ivar[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    m = n * h * w

    def backward(g):
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None, None]
            iv = ivar[None, :, None, None]
            if training:
                s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
                _accumulate(x, iv / m * (m * dxhat - s1 - xhat * s2))
            else:
                _accumulate(x, dxhat * iv)

    return _result(out, (x, gamma, beta), backward, "batchnorm2d")


def _linear_coeffs(in_size, out_size, dtype):
    pos = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    np.clip(pos, 0.0, in_size - 1, out=pos)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = (pos - lo).astype(dtype)
    return lo, hi, frac


def resize_bilinear(x, out_h, out_w):
    """Bilinear resize (align-corners-false), differentiable."""
    _require_rank4(x, "resize_bilinear input")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize_bilinear: bad output size {out_h}x{out_w}")
    n, c, h, w = x.data.shape
    yl, yh, fy = _linear_coeffs(h, out_h, x.data.dtype)
    xl, xh, fx = _linear_coeffs(w, out_w, x.data.dtype)
    fy2 = fy[:, None]
    fx2 = fx[None, :]
    z = x.data
    top = (1 - fx2) * z[:, :, yl[:, None], xl[None, :]] + fx2 * z[:, :, yl[:, None], xh[None, :]]
    bot = (1 - fx2) * z[:, :, yh[:, None], xl[None, :]] + fx2 * z[:, :, yh[:, None], xh[None, :]]
    out = (1 - fy2) * top + fy2 * bot

    def backward(g):
        if not x.requires_grad:
            return
        flat = np.zeros((h * w, n * c), dtype=g.dtype)
        g2 = g.reshape(n * c, out_h * out_w).T
        for yidx, xidx, wgt in (
            (yl, xl, (1 - fy2) * (1 - fx2)),
            (yl, xh, (1 - fy2) * fx2),
            (yh, xl, fy2 * (1 - fx2)),
            (yh, xh, fy2 * fx2),
        ):
            target = (yidx[:, None] * w + xidx[None, :]).ravel()
            np.add.at(flat, target, g2 * wgt.ravel()[:, None])
        _accumulate(x, flat.T.reshape(n, c, h, w))

    return _result(out, (x,), backward, "resize_bilinear")


def global_avg_pool(x):
    """Spatial mean, keeping a 1x1 map per channel."""
    _require_rank4(x, "global_avg_pool input")
    n, c, h, w = x.data.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(g):
        _accumulate(x, np.broadcast_to(g / (h * w), x.data.shape))

    return _result(out, (x,), backward, "global_avg_pool")


def bce_with_logits_sum(logits, targets, weights):
    """Sum of per-element weighted binary cross-entropy, in stable logits form.

    ``targets`` and ``weights`` are constant arrays (broadcastable against
    the logits); only the logits receive gradient.
    """
    z = logits.data
    t = np.asarray(targets, dtype=z.dtype)
    w = np.asarray(weights, dtype=z.dtype)
    core = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = (w * core).sum()

    def backward(g):
        ez = np.exp(-np.abs(z))
        sig = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
        _accumulate(logits, g * (w * (sig - t)))

    return _result(out, (logits,), backward, "bce_with_logits_sum")
