"""Reverse-mode autodiff on plain numpy arrays.

Activations and convolution kernels are rank-4 arrays (N, C, H, W) and
(C_out, C_in, Kh, Kw); losses are 0-d scalars.  Each operation wraps its
output in a new :class:`Tensor` carrying a backward closure, and
``Tensor.backward()`` replays the closures in reverse topological order.

Two precision modes exist: "standard" (float32, training default) and
"verification" (float64, used by the finite-difference suites, where
float32 noise would swamp the comparison).
"""

from __future__ import annotations

import numpy as np

_DTYPES = {"standard": np.float32, "verification": np.float64}

PRECISION_MODES = tuple(_DTYPES)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(ArithmeticError):
    """A tensor contains NaN or Inf values."""


def dtype_for(mode: str):
    """numpy dtype for a precision mode name."""
    try:
        return _DTYPES[mode]
    except KeyError:
        raise ValueError(f"unknown precision mode {mode!r}, expected one of {PRECISION_MODES}") from None


class Tensor:
    """A numpy array plus an optional gradient buffer and tape entry.

    ``grad`` stays ``None`` until a backward pass deposits into it, and is
    only ever allocated for tensors with ``requires_grad``.  Repeated
    backward passes accumulate; call :meth:`zero_grad` between steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None, op="leaf", name=None,
                 parents=(), backward=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype != np.float32 and arr.dtype != np.float64:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = op
        self.name = name
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def detach(self):
        """Same data, cut off from the tape."""
        return Tensor(self.data, requires_grad=False, op="detach")

    def zero_grad(self):
        self.grad = None

    def assert_finite(self, label=None):
        """Raise :class:`NonFiniteError` if any value is NaN or Inf."""
        if not np.isfinite(self.data).all():
            what = label or self.name or self.op
            raise NonFiniteError(f"non-finite values in tensor {what!r}")
        return self

    def sum(self):
        """Sum of all elements as a 0-d scalar tensor."""
        src = self
        out_data = src.data.sum()

        def backward(g):
            _accumulate(src, g)

        return _result(out_data, (src,), backward, "sum")

    def backward(self):
        """Populate gradients of every reachable requires_grad tensor.

        The loss must be scalar.  The graph is walked iteratively so deep
        training graphs do not hit the recursion limit.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.data.shape}")
        order = _toposort(self)
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Arithmetic sugar; Tensor op Tensor routes to the elementwise ops below,
    # Tensor op number to the scalar variants.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return scalar_add(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return scalar_add(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _result(data, parents, backward, op):
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, op=op,
                  parents=tuple(parents) if needs else (),
                  backward=backward if needs else None)


def first_nonfinite(root):
    """Earliest tensor (in forward order) on root's tape holding NaN/Inf.

    Returns ``(op, name)`` or ``None``.  Used for training diagnostics when
    a loss goes non-finite.
    """
    for node in _toposort(root):
        if not np.isfinite(node.data).all():
            return node.op, node.name
    if not np.isfinite(root.data).all():
        return root.op, root.name
    return None


def _check_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a, b):
    _check_same_shape(a, b, "add")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    _check_same_shape(a, b, "sub")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _result(a.data - b.data, (a, b), backward, "sub")


def _mul_broadcast_ok(sa, sb):
    if sa == sb:
        return True
    # The only broadcast the model needs: a single-channel attention map
    # scaling a multi-channel feature map.
    if len(sa) == 4 and len(sb) == 4 and sa[0] == sb[0] and sa[2:] == sb[2:]:
        return sa[1] == 1 or sb[1] == 1
    return False


def mul(a, b):
    if not _mul_broadcast_ok(a.data.shape, b.data.shape):
        raise ShapeError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape} "
                         "(only singleton-channel broadcast is supported)")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            ga = g * b.data
            if a.data.shape != out_data.shape:
                ga = ga.sum(axis=1, keepdims=True)
            _accumulate(a, ga)
        if b.requires_grad:
            gb = g * a.data
            if b.data.shape != out_data.shape:
                gb = gb.sum(axis=1, keepdims=True)
            _accumulate(b, gb)

    return _result(out_data, (a, b), backward, "mul")


def scalar_add(a, value):
    def backward(g):
        _accumulate(a, g)

    return _result(a.data + a.data.dtype.type(value), (a,), backward, "scalar_add")


def scalar_mul(a, value):
    c = a.data.dtype.type(value)

    def backward(g):
        _accumulate(a, g * c)

    return _result(a.data * c, (a,), backward, "scalar_mul")


def elementwise(kind, a, b):
    """Dispatcher matching the elementwise operation contract."""
    if kind == "add":
        return add(a, b)
    if kind == "sub":
        return sub(a, b)
    if kind == "mul":
        return mul(a, b)
    if kind == "scalar_add":
        return scalar_add(a, float(b))
    raise ValueError(f"unknown elementwise kind {kind!r}")


def concat_channels(a, b):
    """Concatenate two rank-4 tensors along the channel axis."""
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError(f"concat_channels expects rank-4 tensors, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ShapeError(f"concat_channels: shape mismatch {a.data.shape} vs {b.data.shape}")
    ca = a.data.shape[1]

    def backward(g):
        _accumulate(a, g[:, :ca])
        _accumulate(b, g[:, ca:])

    return _result(np.concatenate([a.data, b.data], axis=1), (a, b), backward, "concat_channels")


def slice_channels(x, start, stop):
    """Copy of channels ``[start, stop)`` of a rank-4 tensor."""
    if x.data.ndim != 4:
        raise ShapeError(f"slice_channels expects a rank-4 tensor, got {x.data.shape}")
    c = x.data.shape[1]
    if not (0 <= start < stop <= c):
        raise ShapeError(f"slice_channels: range [{start}, {stop}) invalid for {c} channels")

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[:, start:stop] = g
            _accumulate(x, gx)

    return _result(x.data[:, start:stop].copy(), (x,), backward, "slice_channels")


def repeat_channels(x, repeats):
    """Repeat each channel ``repeats`` times consecutively (class-major)."""
    if x.data.ndim != 4:
        raise ShapeError(f"repeat_channels expects a rank-4 tensor, got {x.data.shape}")
    n, c, h, w = x.data.shape

    def backward(g):
        _accumulate(x, g.reshape(n, c, repeats, h, w).sum(axis=2))

    return _result(np.repeat(x.data, repeats, axis=1), (x,), backward, "repeat_channels")
