"""Frame-wise attention: pairwise interaction scores, learnable attention
map, optionally masked softmax aggregation, residual + batchnorm + SELU.

Scores between frames i and j are the elementwise product of their feature
vectors, so the raw score tensor is (B, T, T, D) and symmetric in (i, j).
A learned projection and head weights turn it into a (B, T, T, H) attention
map; softmax normalizes over the key axis per query frame and head.
"""

from __future__ import annotations

import numpy as np

from .nn import BatchNorm1d, Linear
from .tensor import ShapeError, Tensor, add, matmul, mul, reshape, selu, softmax, tanh, transpose, tsum


def pairwise_scores(feats):
    """(B, T, D) -> (B, T, T, D) with s[b,i,j] = feats[b,i] * feats[b,j]."""
    if feats.ndim != 3:
        raise ShapeError(f"pairwise_scores expects (B, T, D), got {feats.shape}")
    b, t, d = feats.shape
    qi = reshape(feats, (b, t, 1, d))
    kj = reshape(feats, (b, 1, t, d))
    return mul(qi, kj)


def attention_map(scores, score_fc, head_weight):
    """tanh(linear(scores)) contracted with (D, H) head weights -> (B,T,T,H)."""
    if scores.shape[-1] != head_weight.shape[0]:
        raise ShapeError(
            f"attention_map: score dim {scores.shape[-1]} != head weight rows {head_weight.shape[0]}"
        )
    return matmul(tanh(score_fc(scores)), head_weight)


def aggregate(attn, feats, mask=None, mask_mode="exclude"):
    """Softmax over keys, then gather features: returns (B, H, T, D).

    ``mask`` is an optional (B, T, T) or (T, T) 0/1 array; masked keys get
    exactly zero weight (every query must keep at least one key, which the
    all-ones diagonal of boundary masks guarantees).
    """
    b, tq, tk, h = attn.shape
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.ndim == 2:
            mask = mask[None]
        mask = mask[:, :, :, None]
    weights = softmax(attn, axis=2, mask=mask, mask_mode=mask_mode)
    per_head = transpose(weights, (0, 3, 1, 2))  # (B, H, Tq, Tk)
    values = reshape(feats, (b, 1, tk, feats.shape[-1]))
    return matmul(per_head, values)  # (B, H, T, D)


class FrameAttentionBlock:
    """One attention block: aggregate context, project, add residual,
    batchnorm over features, SELU."""

    def __init__(self, dim, heads, rng, mask_mode="exclude"):
        self.dim = dim
        self.heads = heads
        self.mask_mode = mask_mode
        self.score_fc = Linear(dim, dim, rng)
        self.head_weight = Tensor(rng.normal(0.0, 0.02, size=(dim, heads)), requires_grad=True)
        self.out_fc = Linear(dim, dim, rng)
        self.res_fc = Linear(dim, dim, rng)
        self.norm = BatchNorm1d(dim)

    def __call__(self, feats, mask=None, training=False, valid=None):
        scores = pairwise_scores(feats)
        attn = attention_map(scores, self.score_fc, self.head_weight)
        gathered = aggregate(attn, feats, mask=mask, mask_mode=self.mask_mode)
        context = tsum(self.out_fc(gathered), axis=1)  # heads summed post-projection
        out = add(context, self.res_fc(feats))
        bn_valid = None if valid is None else np.asarray(valid, dtype=np.float64)[:, :, None]
        return selu(self.norm(out, training, valid=bn_valid))

    def parameters(self):
        out = []
        for prefix, m in (("score_fc", self.score_fc), ("out_fc", self.out_fc), ("res_fc", self.res_fc), ("norm", self.norm)):
            out.extend((f"{prefix}.{n}", p) for n, p in m.parameters())
        out.append(("head_weight", self.head_weight))
        return out

    def buffers(self):
        return [(f"norm.{n}", b) for n, b in self.norm.buffers()]

    def set_buffer(self, name, value):
        assert name.startswith("norm.")
        self.norm.set_buffer(name[len("norm."):], value)
