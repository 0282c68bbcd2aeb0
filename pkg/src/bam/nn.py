"""Neural-net layers over the autodiff tensor core.

Layers own their parameters (Tensors with requires_grad=True) and expose
them through ``parameters()`` as (name, tensor) pairs; non-learnable state
(batchnorm running moments) goes through ``buffers()``. Initialization is
driven by an explicit numpy Generator so runs are reproducible.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor, add, matmul, mul, power, reshape, sub, transpose


def uniform_fan_in(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    """Affine map on the last axis: y = x @ W.T + b, W is (out, in)."""

    def __init__(self, in_dim, out_dim, rng, bias=True):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Tensor(uniform_fan_in(rng, (out_dim, in_dim), in_dim), requires_grad=True)
        self.bias = Tensor(uniform_fan_in(rng, (out_dim,), in_dim), requires_grad=True) if bias else None

    def __call__(self, x):
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"linear: input feature dim {x.shape[-1]} != {self.in_dim}")
        y = matmul(x, transpose(self.weight))
        if self.bias is not None:
            y = add(y, self.bias)
        return y

    def parameters(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out

    def buffers(self):
        return []


def conv1d(x, weight, bias, stride=1, padding=0):
    """Strided 1-D convolution as an autodiff op.

    x: (B, C_in, L), weight: (C_out, C_in, K), bias: (C_out,) or None.
    """
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d: need (B,C,L) input and (O,I,K) weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv1d: input channels {x.shape[1]} != weight channels {weight.shape[1]}")
    k = weight.shape[2]
    length = x.shape[2]
    if length + 2 * padding < k:
        raise ShapeError(f"conv1d: input length {length} shorter than kernel {k} (padding {padding})")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(weight.data)
    out_data = kernels.conv1d_forward(xd, wd, stride, padding)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            x.accumulate_grad(kernels.conv1d_backward_input(g, wd, stride, padding, length))
        if weight.requires_grad:
            weight.accumulate_grad(kernels.conv1d_backward_weight(g, xd, stride, padding, k))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2)))

    from . import tensor as _t

    req = _t._grad_enabled and any(p.requires_grad for p in parents)
    if not req:
        return Tensor(out_data)
    return Tensor(out_data, requires_grad=True, parents=[p for p in parents if p.requires_grad], backward=backward)


class Conv1d:
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0, bias=True):
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size
        self.weight = Tensor(
            uniform_fan_in(rng, (out_channels, in_channels, kernel_size), fan_in), requires_grad=True
        )
        self.bias = Tensor(uniform_fan_in(rng, (out_channels,), fan_in), requires_grad=True) if bias else None

    def __call__(self, x):
        return conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def out_length(self, length):
        k = self.weight.shape[2]
        return (length + 2 * self.padding - k) // self.stride + 1

    def parameters(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out

    def buffers(self):
        return []


class BatchNorm1d:
    """Per-feature normalization with learnable scale/shift and running moments.

    ``feature_axis`` names the normalized axis; statistics are taken over all
    other axes. Training mode uses batch moments and updates the running
    buffers; eval mode applies the frozen running moments.
    """

    def __init__(self, num_features, feature_axis=-1, eps=1e-5, momentum=0.1):
        self.num_features = num_features
        self.feature_axis = feature_axis
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(num_features), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features), requires_grad=True)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    def _param_shape(self, ndim):
        axis = self.feature_axis % ndim
        shape = [1] * ndim
        shape[axis] = self.num_features
        return tuple(shape), axis

    def __call__(self, x, training, valid=None):
        """``valid`` (0/1, broadcastable to x, size 1 on the feature axis)
        restricts training statistics to real frames; padded frames still get
        normalized outputs but never influence the moments."""
        if x.shape[self.feature_axis % x.ndim] != self.num_features:
            raise ShapeError(
                f"batchnorm: feature axis has length {x.shape[self.feature_axis % x.ndim]}, "
                f"expected {self.num_features}"
            )
        shape, axis = self._param_shape(x.ndim)
        reduce_axes = tuple(i for i in range(x.ndim) if i != axis)
        gamma = reshape(self.gamma, shape)
        beta = reshape(self.beta, shape)
        if training:
            if valid is None:
                n = x.size // self.num_features
                m = x.mean(axis=reduce_axes, keepdims=True)
                centered = sub(x, m)
                var = mul(centered, centered).mean(axis=reduce_axes, keepdims=True)
            else:
                w = np.asarray(valid, dtype=np.float64)
                n = float(np.broadcast_to(w, x.shape).sum(axis=reduce_axes, keepdims=True).max())
                if n < 1:
                    raise ShapeError("batchnorm: validity mask leaves no frames")
                wt = Tensor(w)
                scale = Tensor(1.0 / n)
                from .tensor import tsum

                m = mul(tsum(mul(x, wt), axis=reduce_axes, keepdims=True), scale)
                centered = sub(x, m)
                sq = mul(mul(centered, centered), wt)
                var = mul(tsum(sq, axis=reduce_axes, keepdims=True), scale)
            inv = power(add_scalar(var, self.eps), -0.5)
            out = add(mul(mul(centered, inv), gamma), beta)
            unbias = n / (n - 1) if n > 1 else 1.0
            bm = m.data.reshape(self.num_features)
            bv = var.data.reshape(self.num_features) * unbias
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * bm
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * bv
            return out
        rm = Tensor(self.running_mean.reshape(shape))
        rinv = Tensor(1.0 / np.sqrt(self.running_var.reshape(shape) + self.eps))
        return add(mul(mul(sub(x, rm), rinv), gamma), beta)

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def set_buffer(self, name, value):
        if name == "running_mean":
            self.running_mean = value.copy()
        elif name == "running_var":
            self.running_var = value.copy()
        else:
            raise KeyError(name)


def add_scalar(x, c):
    return add(x, Tensor(float(c)))


def collect_parameters(module_pairs):
    """Flatten [(prefix, module)] into [(dotted_name, tensor)]."""
    out = []
    for prefix, mod in module_pairs:
        for name, p in mod.parameters():
            out.append((f"{prefix}.{name}", p))
    return out


def collect_buffers(module_pairs):
    out = []
    for prefix, mod in module_pairs:
        for name, b in mod.buffers():
            out.append((f"{prefix}.{name}", b, mod))
    return out
