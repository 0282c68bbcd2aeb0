"""Hot numeric kernels: strided 1-D convolution forward/backward.

Two interchangeable implementations exist for each kernel: a numba
``@njit`` version (default) and a pure-numpy version. Selection happens at
import time via the ``BAM_BACKEND`` environment variable (``numba`` or
``numpy``); when numba is unavailable the numpy path is used automatically.
``make_impls()`` exposes both so the benchmark can compare them directly.

All kernels take/return C-contiguous float64 arrays:
    x: (B, C_in, L)   w: (C_out, C_in, K)   y/g: (B, C_out, L_out)
with L_out = (L + 2*padding - K) // stride + 1.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import as_strided

BACKEND_ENV = "BAM_BACKEND"


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding)))


def _windows(x, k, stride):
    b, c, l = x.shape
    n = (l - k) // stride + 1
    s0, s1, s2 = x.strides
    return as_strided(x, (b, c, n, k), (s0, s1, s2 * stride, s2))


# -- numpy implementations -----------------------------------------------


def _conv1d_forward_np(x, w, stride, padding):
    xp = _pad(x, padding)
    win = _windows(xp, w.shape[2], stride)
    # (B, Cin, Lout, K) x (Cout, Cin, K) -> (B, Lout, Cout)
    y = np.tensordot(win, w, axes=([1, 3], [1, 2]))
    return np.ascontiguousarray(y.transpose(0, 2, 1))


def _conv1d_backward_input_np(g, w, stride, padding, length):
    b = g.shape[0]
    cout, cin, k = w.shape
    lout = g.shape[2]
    gx = np.zeros((b, cin, length + 2 * padding))
    gwin = np.tensordot(g, w, axes=([1], [0]))  # (B, Lout, Cin, K)
    for j in range(k):
        gx[:, :, j : j + stride * lout : stride] += gwin[:, :, :, j].transpose(0, 2, 1)
    if padding:
        gx = gx[:, :, padding : padding + length]
    return np.ascontiguousarray(gx)


def _conv1d_backward_weight_np(g, x, stride, padding, k):
    xp = _pad(x, padding)
    win = _windows(xp, k, stride)
    # (B, Cout, Lout) x (B, Cin, Lout, K) -> (Cout, Cin, K)
    return np.ascontiguousarray(np.tensordot(g, win, axes=([0, 2], [0, 2])))


# -- loop implementations (numba targets) ----------------------------------


def _conv1d_forward_loops(x, w, stride, padding):
    b, cin, l = x.shape
    cout, _, k = w.shape
    lout = (l + 2 * padding - k) // stride + 1
    y = np.zeros((b, cout, lout))
    for bi in range(b):
        for oc in range(cout):
            yrow = y[bi, oc]
            for ic in range(cin):
                xrow = x[bi, ic]
                wrow = w[oc, ic]
                for o in range(lout):
                    start = o * stride - padding
                    j0 = -start if start < 0 else 0
                    j1 = l - start if start + k > l else k
                    acc = 0.0
                    for j in range(j0, j1):
                        acc += wrow[j] * xrow[start + j]
                    yrow[o] += acc
    return y


def _conv1d_backward_input_loops(g, w, stride, padding, length):
    b, cout, lout = g.shape
    _, cin, k = w.shape
    gx = np.zeros((b, cin, length))
    for bi in range(b):
        for ic in range(cin):
            grow_x = gx[bi, ic]
            for oc in range(cout):
                grow = g[bi, oc]
                wrow = w[oc, ic]
                for o in range(lout):
                    start = o * stride - padding
                    j0 = -start if start < 0 else 0
                    j1 = length - start if start + k > length else k
                    gv = grow[o]
                    for j in range(j0, j1):
                        grow_x[start + j] += gv * wrow[j]
    return gx


def _conv1d_backward_weight_loops(g, x, stride, padding, k):
    b, cout, lout = g.shape
    _, cin, l = x.shape
    gw = np.zeros((cout, cin, k))
    for oc in range(cout):
        for ic in range(cin):
            wacc = gw[oc, ic]
            for bi in range(b):
                grow = g[bi, oc]
                xrow = x[bi, ic]
                for o in range(lout):
                    start = o * stride - padding
                    j0 = -start if start < 0 else 0
                    j1 = l - start if start + k > l else k
                    gv = grow[o]
                    for j in range(j0, j1):
                        wacc[j] += gv * xrow[start + j]
    return gw


_NUMPY_IMPLS = {
    "conv1d_forward": _conv1d_forward_np,
    "conv1d_backward_input": _conv1d_backward_input_np,
    "conv1d_backward_weight": _conv1d_backward_weight_np,
}

_numba_cache = None


def _numba_impls():
    global _numba_cache
    if _numba_cache is None:
        from numba import njit

        jit = njit(cache=True, fastmath=False)
        _numba_cache = {
            "conv1d_forward": jit(_conv1d_forward_loops),
            "conv1d_backward_input": jit(_conv1d_backward_input_loops),
            "conv1d_backward_weight": jit(_conv1d_backward_weight_loops),
        }
    return _numba_cache


def make_impls(backend):
    """Return the kernel table for an explicit backend ('numba' | 'numpy')."""
    if backend == "numpy":
        return dict(_NUMPY_IMPLS)
    if backend == "numba":
        return dict(_numba_impls())
    raise ValueError(f"unknown backend {backend!r}")


def _select_backend():
    choice = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if choice not in ("numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numba":
        try:
            _numba_impls()
        except ImportError:
            return "numpy"
    return choice


BACKEND = _select_backend()
_IMPLS = make_impls(BACKEND)

conv1d_forward = _IMPLS["conv1d_forward"]
conv1d_backward_input = _IMPLS["conv1d_backward_input"]
conv1d_backward_weight = _IMPLS["conv1d_backward_weight"]
