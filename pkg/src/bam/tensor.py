"""Dense float64 tensors with reverse-mode automatic differentiation.

Values are numpy arrays; every operation records its parents and a backward
closure, and ``Tensor.backward()`` runs a topological sweep that accumulates
gradients into every tensor that requires them. Graphs are built per forward
pass (define-by-run) and are confined to a single thread.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "matmul",
    "tanh",
    "sigmoid",
    "selu",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "bce_with_logits",
    "tsum",
    "tmean",
    "tmax",
    "reshape",
    "transpose",
    "concat",
    "take",
    "stop_gradient",
    "binarize",
]

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805

_node_counter = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.node_id = next(_node_counter)
        self._parents = tuple(parents)
        self._backward = backward

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"

    # -- autograd ------------------------------------------------------

    def backward(self):
        """Reverse-mode sweep from a scalar; populates ``grad`` on every
        reachable tensor that requires gradients."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.data.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self, None)


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape``, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None


_grad_enabled = True


class no_grad:
    """Context manager: ops built inside record no graph (forward-only)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _make(data, parents, backward):
    if not _grad_enabled:
        return Tensor(data)
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=[p for p in parents if p.requires_grad], backward=backward)


# -- elementwise binary ops ---------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "div")
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out_data, (a, b), backward)


def neg(a):
    a = _as_tensor(a)

    def backward(g):
        a.accumulate_grad(-g)

    return _make(-a.data, (a,), backward)


def power(a, p):
    """Elementwise a**p for a constant exponent p."""
    a = _as_tensor(a)
    p = float(p)
    out_data = a.data ** p

    def backward(g):
        a.accumulate_grad(g * p * a.data ** (p - 1.0))

    return _make(out_data, (a,), backward)


# -- matmul ---------------------------------------------------------------


def matmul(a, b):
    """Matrix product with numpy ``@`` semantics (batch dims broadcast)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError("matmul requires at least 1-d operands")
    if a.data.shape[-1] != b.data.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.data.shape} x {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.expand_dims(g, -1) * b.data
            a.accumulate_grad(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            if a.ndim > 1:
                gb = np.swapaxes(a.data, -1, -2) @ g
            else:
                gb = np.expand_dims(a.data, -1) * np.expand_dims(g, -2)
            b.accumulate_grad(_unbroadcast(gb, b.data.shape))

    return _make(out_data, (a, b), backward)


# -- activations -----------------------------------------------------------


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        a.accumulate_grad(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward)


def sigmoid(a):
    a = _as_tensor(a)
    out_data = np.empty_like(a.data)
    pos = a.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out_data[~pos] = ez / (1.0 + ez)

    def backward(g):
        a.accumulate_grad(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def selu(a):
    a = _as_tensor(a)
    neg_part = SELU_SCALE * SELU_ALPHA * np.expm1(np.minimum(a.data, 0.0))
    out_data = np.where(a.data > 0, SELU_SCALE * a.data, neg_part)

    def backward(g):
        d = np.where(a.data > 0, SELU_SCALE, neg_part + SELU_SCALE * SELU_ALPHA)
        a.accumulate_grad(g * d)

    return _make(out_data, (a,), backward)


def exp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        a.accumulate_grad(g * out_data)

    return _make(out_data, (a,), backward)


def log(a):
    a = _as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        a.accumulate_grad(g / a.data)

    return _make(out_data, (a,), backward)


def _check_axis(a, axis, op):
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for shape {a.data.shape}")
    return axis % a.ndim


def softmax(a, axis, mask=None, mask_mode="exclude"):
    """Softmax along ``axis``.

    With ``mask`` (a 0/1 array broadcastable to ``a``), masked entries get
    exactly zero weight. ``mask_mode='exclude'`` drops them from the softmax
    support; ``'renorm'`` computes the unmasked softmax, zeroes masked
    entries, and renormalizes. The mask receives no gradient.
    """
    a = _as_tensor(a)
    axis = _check_axis(a, axis, "softmax")
    if mask is None:
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            a.accumulate_grad(out_data * (g - inner))

        return _make(out_data, (a,), backward)

    mask = np.broadcast_to(np.asarray(mask, dtype=np.float64), a.data.shape)
    keep = mask > 0
    if not keep.any(axis=axis).all():
        raise ShapeError("softmax: mask removes every entry along the softmax axis for some slice")
    if mask_mode == "exclude":
        scored = np.where(keep, a.data, -np.inf)
        shifted = scored - scored.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            a.accumulate_grad(out_data * (g - inner))

        return _make(out_data, (a,), backward)
    if mask_mode == "renorm":
        base = softmax(a, axis)
        kept = mul(base, Tensor(keep.astype(np.float64)))
        total = tsum(kept, axis=axis, keepdims=True)
        return div(kept, total)
    raise ValueError(f"unknown mask_mode {mask_mode!r}")


def log_softmax(a, axis):
    a = _as_tensor(a)
    axis = _check_axis(a, axis, "log_softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    soft = np.exp(out_data)

    def backward(g):
        a.accumulate_grad(g - soft * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), backward)


def bce_with_logits(logits, targets):
    """Elementwise binary cross-entropy from logits; targets are constant."""
    logits = _as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.data.shape:
        raise ShapeError(f"bce_with_logits: target shape {t.shape} != logit shape {logits.data.shape}")
    z = logits.data
    out_data = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def backward(g):
        p = np.empty_like(z)
        pos = z >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        p[~pos] = ez / (1.0 + ez)
        logits.accumulate_grad(g * (p - t))

    return _make(out_data, (logits,), backward)


# -- reductions -------------------------------------------------------------


def _norm_axes(a, axis):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(_check_axis(a, ax, "reduce") for ax in axis)


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    axes = _norm_axes(a, axis)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        gg = g
        if axes is not None and not keepdims:
            gg = np.expand_dims(g, axes)
        elif axes is None and not keepdims:
            gg = np.asarray(g)
        a.accumulate_grad(np.broadcast_to(gg, a.data.shape).copy())

    return _make(out_data, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    axes = _norm_axes(a, axis)
    if axes is None:
        count = a.data.size
    else:
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    out = tsum(a, axis=axis, keepdims=keepdims)
    return mul(out, Tensor(1.0 / count))


def tmax(a, axis):
    """Max along one axis; gradient flows to the (first) argmax."""
    a = _as_tensor(a)
    axis = _check_axis(a, axis, "max")
    out_data = a.data.max(axis=axis)
    idx = a.data.argmax(axis=axis)

    def backward(g):
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        a.accumulate_grad(buf)

    return _make(out_data, (a,), backward)


# -- shape ops ---------------------------------------------------------------


def reshape(a, shape):
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        a.accumulate_grad(g.reshape(a.data.shape))

    return _make(out_data, (a,), backward)


def transpose(a, axes=None):
    a = _as_tensor(a)
    out_data = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def backward(g):
        a.accumulate_grad(np.transpose(g, inv))

    return _make(out_data, (a,), backward)


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    axis = _check_axis(tensors[0], axis, "concat")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(sl)])

    return _make(out_data, tensors, backward)


def take(a, index):
    """Basic slicing (a[index]); gradient scatters back into place."""
    a = _as_tensor(a)
    out_data = a.data[index]

    def backward(g):
        buf = np.zeros_like(a.data)
        buf[index] = g
        a.accumulate_grad(buf)

    return _make(out_data, (a,), backward)


# -- graph control ------------------------------------------------------------


def stop_gradient(a):
    """Value passes through; no gradient propagates to ``a``."""
    a = _as_tensor(a)
    return Tensor(a.data)


def binarize(a, threshold):
    """Hard-threshold a into {0,1} (>= threshold maps to 1). Non-differentiable."""
    a = _as_tensor(a)
    return Tensor((a.data >= threshold).astype(np.float64))
