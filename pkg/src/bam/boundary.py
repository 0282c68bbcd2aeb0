"""Boundary prediction and boundary-gated attention.

Two feature branches describe each frame for the boundary head: a small
1-d residual network over the frame's own feature vector (intra view) and
an unmasked attention block over the sequence (inter view). Their
concatenation feeds a sigmoid head; thresholded predictions become a
block-diagonal adjacency matrix that gates the main attention stack so
frames only exchange information within their predicted segment.
"""

from __future__ import annotations

import numpy as np

from .attention import FrameAttentionBlock
from .nn import BatchNorm1d, Conv1d, Linear
from .tensor import ShapeError, add, binarize, concat, reshape, selu, sigmoid, tmean

BRANCH_CHOICES = ("be", "fc", "inter", "intra")


def combine_masks(hard_boundaries, valid, batch, t):
    """Attention key mask from optional boundary predictions and an optional
    frame-validity mask. Returns (B, T, T) float64 or None. The diagonal is
    forced to 1 whenever validity enters, so every query keeps its own key."""
    mask = None
    if hard_boundaries is not None:
        mask = boundary_adjacency(hard_boundaries)
        if mask.ndim == 2:
            mask = np.broadcast_to(mask, (batch, t, t)).copy()
    if valid is not None:
        keys = np.broadcast_to(np.asarray(valid, dtype=np.float64)[:, None, :], (batch, t, t))
        mask = keys.copy() if mask is None else mask * keys
        idx = np.arange(t)
        mask[:, idx, idx] = 1.0
    return mask


def boundary_adjacency(hard):
    """Adjacency A[i,j] = 1 iff no predicted boundary lies in [min(i,j), max(i,j)]
    inclusive, except the diagonal which is always 1.

    Endpoints count, so a boundary frame is connected only to itself.
    Accepts (T,) or (B, T) 0/1 arrays; returns (T, T) or (B, T, T) float64.
    """
    b = np.asarray(hard, dtype=np.float64)
    single = b.ndim == 1
    if single:
        b = b[None]
    if b.ndim != 2:
        raise ShapeError(f"boundary_adjacency expects (T,) or (B, T), got {b.shape}")
    if not np.all((b == 0.0) | (b == 1.0)):
        raise ValueError("boundary indicators must be exactly 0 or 1")
    t = b.shape[1]
    c = np.cumsum(b, axis=1)
    # count of boundary frames in the inclusive span [i, j]:
    # |C[j] - C[i]| covers the half-open part, the lower endpoint is added back.
    span = np.abs(c[:, None, :] - c[:, :, None])
    i_le_j = np.arange(t)[:, None] <= np.arange(t)[None, :]
    count = span + np.where(i_le_j, b[:, :, None], b[:, None, :])
    adj = (count == 0.0).astype(np.float64)
    idx = np.arange(t)
    adj[:, idx, idx] = 1.0
    return adj[0] if single else adj


class IntraFrameEncoder:
    """Per-frame residual conv net: each frame's D-vector is a 1-channel
    sequence; output is a D-vector again. Frames are processed identically
    and independently, so the module is permutation-equivariant over time."""

    MIN_WIDTH = 3  # conv kernel span

    def __init__(self, dim, channels, rng):
        if dim < self.MIN_WIDTH:
            raise ShapeError(f"intra encoder needs feature dim >= {self.MIN_WIDTH}, got {dim}")
        self.dim = dim
        self.channels = channels
        self.stem = Conv1d(1, channels, kernel_size=3, rng=rng, padding=1)
        self.blocks = []
        for _ in range(2):
            self.blocks.append(
                {
                    "conv1": Conv1d(channels, channels, kernel_size=3, rng=rng, padding=1),
                    "bn1": BatchNorm1d(channels, feature_axis=1),
                    "conv2": Conv1d(channels, channels, kernel_size=3, rng=rng, padding=1),
                    "bn2": BatchNorm1d(channels, feature_axis=1),
                }
            )
        self.out_fc = Linear(channels, dim, rng)
        # normalized ending mirrors the inter branch, so the two concat halves
        # reach the boundary head at comparable scale
        self.norm = BatchNorm1d(dim)

    def __call__(self, feats, training=False, valid=None):
        b, t, d = feats.shape
        if d != self.dim:
            raise ShapeError(f"intra encoder built for dim {self.dim}, got {d}")
        x = reshape(feats, (b * t, 1, d))
        w = None if valid is None else np.asarray(valid, dtype=np.float64).reshape(b * t, 1, 1)
        h = self.stem(x)
        for blk in self.blocks:
            y = blk["bn1"](blk["conv1"](h), training, valid=w)
            y = blk["conv2"](selu(y))
            y = blk["bn2"](y, training, valid=w)
            h = selu(add(y, h))
        pooled = tmean(h, axis=2)  # (B*T, C) average over the feature-sequence axis
        out = reshape(self.out_fc(pooled), (b, t, self.dim))
        bn_valid = None if valid is None else np.asarray(valid, dtype=np.float64)[:, :, None]
        return selu(self.norm(out, training, valid=bn_valid))

    def parameters(self):
        out = [(f"stem.{n}", p) for n, p in self.stem.parameters()]
        for i, blk in enumerate(self.blocks):
            for key in ("conv1", "bn1", "conv2", "bn2"):
                out.extend((f"block{i}.{key}.{n}", p) for n, p in blk[key].parameters())
        out.extend((f"out_fc.{n}", p) for n, p in self.out_fc.parameters())
        out.extend((f"norm.{n}", p) for n, p in self.norm.parameters())
        return out

    def buffers(self):
        out = []
        for i, blk in enumerate(self.blocks):
            for key in ("bn1", "bn2"):
                out.extend((f"block{i}.{key}.{n}", v) for n, v in blk[key].buffers())
        out.extend((f"norm.{n}", v) for n, v in self.norm.buffers())
        return out

    def set_buffer(self, name, value):
        if name.startswith("norm."):
            self.norm.set_buffer(name.split(".", 1)[1], value)
            return
        block, key, leaf = name.split(".")
        self.blocks[int(block[len("block"):])][key].set_buffer(leaf, value)


class BoundaryOutput:
    """Everything the boundary module produces for one forward pass."""

    __slots__ = ("branch_feats", "enhanced", "logits", "prob", "hard", "threshold")

    def __init__(self, branch_feats, enhanced, logits, prob, hard, threshold):
        self.branch_feats = branch_feats  # dict: name -> Tensor (and "combined")
        self.enhanced = enhanced  # F_be, (B, T, D) Tensor for the decision concat
        self.logits = logits  # (B, T) Tensor
        self.prob = prob  # (B, T) Tensor, sigmoid(logits)
        self.hard = hard  # (B, T) float64 numpy, thresholded, gradient-free
        self.threshold = threshold


class BoundaryDetector:
    """Predict per-frame boundary probability from configurable branch input.

    ``branches='be'`` concatenates the intra and inter views (width 2D);
    'intra' / 'inter' use one branch alone; 'fc' applies the heads straight
    to the incoming frame features. Hard decisions use >= threshold and are
    detached from the graph, so no authenticity gradient can reach the head
    through the mask they later build.
    """

    def __init__(self, dim, heads, rng, branches="be", threshold=0.5, mask_mode="exclude", intra_channels=8):
        if branches not in BRANCH_CHOICES:
            raise ValueError(f"unknown boundary branch config {branches!r}, want one of {BRANCH_CHOICES}")
        self.dim = dim
        self.branches = branches
        self.threshold = float(threshold)
        self.intra = IntraFrameEncoder(dim, intra_channels, rng) if branches in ("be", "intra") else None
        self.inter = FrameAttentionBlock(dim, heads, rng, mask_mode=mask_mode) if branches in ("be", "inter") else None
        width = 2 * dim if branches == "be" else dim
        self.head_fc = Linear(width, 1, rng)
        self.feat_fc = Linear(width, dim, rng)

    def __call__(self, feats, training=False, valid=None, forced=None):
        b, t, d = feats.shape
        branch_feats = {}
        if self.branches == "fc":
            combined = feats
        else:
            parts = []
            if self.intra is not None:
                branch_feats["intra"] = self.intra(feats, training, valid=valid)
                parts.append(branch_feats["intra"])
            if self.inter is not None:
                key_mask = combine_masks(None, valid, b, t)
                branch_feats["inter"] = self.inter(feats, mask=key_mask, training=training, valid=valid)
                parts.append(branch_feats["inter"])
            combined = parts[0] if len(parts) == 1 else concat(parts, axis=2)
        branch_feats["combined"] = combined
        logits = reshape(self.head_fc(combined), (b, t))
        prob = sigmoid(logits)
        enhanced = selu(self.feat_fc(combined))
        if forced is not None:
            hard = np.asarray(forced, dtype=np.float64)
            if hard.shape != (b, t):
                raise ShapeError(f"forced boundaries shape {hard.shape} != {(b, t)}")
        else:
            hard = binarize(prob, self.threshold).data
        return BoundaryOutput(branch_feats, enhanced, logits, prob, hard, self.threshold)

    def parameters(self):
        out = []
        if self.intra is not None:
            out.extend((f"intra.{n}", p) for n, p in self.intra.parameters())
        if self.inter is not None:
            out.extend((f"inter.{n}", p) for n, p in self.inter.parameters())
        out.extend((f"head_fc.{n}", p) for n, p in self.head_fc.parameters())
        out.extend((f"feat_fc.{n}", p) for n, p in self.feat_fc.parameters())
        return out

    def head_parameters(self):
        """The boundary prediction head alone (for stop-gradient assertions)."""
        return [(f"head_fc.{n}", p) for n, p in self.head_fc.parameters()]

    def buffers(self):
        out = []
        if self.intra is not None:
            out.extend((f"intra.{n}", v) for n, v in self.intra.buffers())
        if self.inter is not None:
            out.extend((f"inter.{n}", v) for n, v in self.inter.buffers())
        return out

    def set_buffer(self, name, value):
        head, leaf = name.split(".", 1)
        {"intra": self.intra, "inter": self.inter}[head].set_buffer(leaf, value)


class GatedAttentionStack:
    """N chained attention blocks sharing one adjacency mask.

    ``hard_boundaries`` (B, T) builds the mask; None runs unmasked. ``valid``
    additionally removes padded frames from every key set (the diagonal stays
    allowed so no query is left without support).
    """

    def __init__(self, dim, heads, n_blocks, rng, mask_mode="exclude"):
        if n_blocks < 1:
            raise ValueError(f"need at least one attention block, got {n_blocks}")
        self.blocks = [FrameAttentionBlock(dim, heads, rng, mask_mode=mask_mode) for _ in range(n_blocks)]

    def __call__(self, feats, hard_boundaries=None, training=False, valid=None):
        b, t, _ = feats.shape
        mask = combine_masks(hard_boundaries, valid, b, t)
        h = feats
        for blk in self.blocks:
            h = blk(h, mask=mask, training=training, valid=valid)
        return h

    def parameters(self):
        out = []
        for i, blk in enumerate(self.blocks):
            out.extend((f"block{i}.{n}", p) for n, p in blk.parameters())
        return out

    def buffers(self):
        out = []
        for i, blk in enumerate(self.blocks):
            out.extend((f"block{i}.{n}", v) for n, v in blk.buffers())
        return out

    def set_buffer(self, name, value):
        block, leaf = name.split(".", 1)
        self.blocks[int(block[len("block"):])].set_buffer(leaf, value)
