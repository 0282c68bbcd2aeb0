"""Front-ends that turn raw waveforms (or precomputed features) into frame
sequences.

The wave encoder is a stack of non-overlapping 1-d convolutions (kernel ==
stride), so its total stride equals its receptive field and the number of
output frames is exactly ``len // hop`` at every input length. With the
default stack the hop is 160 samples = 20 ms at 8 kHz. Attentive pooling
then merges ``stride`` consecutive frames into one with learned weights.
"""

from __future__ import annotations

import numpy as np

from .nn import Conv1d, Linear, ShapeError
from .tensor import Tensor, mul, reshape, selu, softmax, tanh, tmax, tsum


class WaveEncoder:
    """Conv stack over raw audio: (B, L) float64 -> (B, T, D), T = L // hop."""

    def __init__(self, channels, widths, rng):
        if len(channels) != len(widths) or not channels:
            raise ValueError("encoder channels and widths must be equal-length, non-empty")
        self.channels = tuple(int(c) for c in channels)
        self.widths = tuple(int(w) for w in widths)
        self.hop = int(np.prod(self.widths))  # kernel == stride everywhere
        self.out_dim = self.channels[-1]
        self.layers = []
        c_in = 1
        for c_out, k in zip(self.channels, self.widths):
            self.layers.append(Conv1d(c_in, c_out, kernel_size=k, rng=rng, stride=k))
            c_in = c_out

    def num_frames(self, length):
        return int(length) // self.hop

    def __call__(self, wave):
        if isinstance(wave, Tensor):
            data = wave
            shape = wave.shape
        else:
            data = Tensor(np.asarray(wave, dtype=np.float64))
            shape = data.shape
        if len(shape) != 2:
            raise ShapeError(f"wave encoder expects (B, L), got {shape}")
        if shape[1] < self.hop:
            raise ShapeError(
                f"waveform length {shape[1]} shorter than encoder receptive field {self.hop}"
            )
        h = reshape(data, (shape[0], 1, shape[1]))
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i + 1 < len(self.layers):
                h = selu(h)
        # (B, C, T) -> (B, T, C)
        from .tensor import transpose

        return transpose(h, (0, 2, 1))

    def parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend((f"conv{i}.{n}", p) for n, p in layer.parameters())
        return out


class AttentivePool:
    """Merge windows of ``stride`` frames with learned softmax weights.

    Per frame t: e_t = v . tanh(W h_t + b); weights are softmax of e within
    each window and the output is the weighted mean. Trailing frames that do
    not fill a window are dropped, matching ``T_out = T_in // stride``; when
    T_in < stride the whole sequence forms a single window.
    """

    def __init__(self, dim, stride, rng):
        if stride < 1:
            raise ValueError(f"pool stride must be >= 1, got {stride}")
        self.dim = dim
        self.stride = int(stride)
        self.proj = Linear(dim, dim, rng)
        self.score = Linear(dim, 1, rng, bias=False)

    def out_frames(self, t_in):
        if t_in < self.stride:
            return 1 if t_in > 0 else 0
        return t_in // self.stride

    def __call__(self, feats):
        b, t_in, d = feats.shape
        stride = self.stride if t_in >= self.stride else t_in
        t_out = t_in // stride
        keep = t_out * stride
        if keep != t_in:
            from .tensor import take

            feats = take(feats, (slice(None), slice(0, keep)))
        if stride == 1:
            return feats
        windows = reshape(feats, (b, t_out, stride, d))
        energy = self.score(tanh(self.proj(windows)))  # (B, T_out, stride, 1)
        weights = softmax(energy, axis=2)
        return tsum(mul(weights, windows), axis=2)

    def parameters(self):
        out = [(f"proj.{n}", p) for n, p in self.proj.parameters()]
        out.extend((f"score.{n}", p) for n, p in self.score.parameters())
        return out


class MaxPool:
    """Plain max pooling over windows of ``stride`` frames (ablation baseline)."""

    def __init__(self, stride):
        if stride < 1:
            raise ValueError(f"pool stride must be >= 1, got {stride}")
        self.stride = int(stride)

    def out_frames(self, t_in):
        if t_in < self.stride:
            return 1 if t_in > 0 else 0
        return t_in // self.stride

    def __call__(self, feats):
        b, t_in, d = feats.shape
        stride = self.stride if t_in >= self.stride else t_in
        t_out = t_in // stride
        keep = t_out * stride
        if keep != t_in:
            from .tensor import take

            feats = take(feats, (slice(None), slice(0, keep)))
        if stride == 1:
            return feats
        windows = reshape(feats, (b, t_out, stride, d))
        return tmax(windows, axis=2)

    def parameters(self):
        return []


class FeatureProjector:
    """Front-end for precomputed feature files: optional linear map to D."""

    def __init__(self, in_dim, out_dim, rng):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.proj = Linear(self.in_dim, self.out_dim, rng) if self.in_dim != self.out_dim else None

    def __call__(self, feats):
        if feats.shape[-1] != self.in_dim:
            raise ShapeError(
                f"feature dim {feats.shape[-1]} does not match configured external dim {self.in_dim}"
            )
        if not isinstance(feats, Tensor):
            feats = Tensor(np.asarray(feats, dtype=np.float64))
        return self.proj(feats) if self.proj is not None else feats

    def parameters(self):
        if self.proj is None:
            return []
        return [(f"proj.{n}", p) for n, p in self.proj.parameters()]
