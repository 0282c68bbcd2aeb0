"""Frame-level authenticity (Y) and boundary (B) labels from sample spans.

A frame covering samples of both classes is a boundary frame and counts as
spoofed; frames merely adjacent to a boundary frame are not boundaries.
Trailing partial frames are dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .synth import SPOOF, CorpusError, validate_spans


class ResolutionError(ValueError):
    """Temporal resolution not representable in whole samples."""


@dataclass
class FrameLabels:
    resolution_ms: float
    y: np.ndarray  # uint8, 1 = spoofed
    b: np.ndarray  # uint8, 1 = boundary frame

    @property
    def num_frames(self):
        return len(self.y)

    def validate(self):
        if len(self.y) != len(self.b):
            raise CorpusError("Y/B length mismatch")
        if np.any(self.b > self.y):
            raise CorpusError("boundary frame not labeled spoofed")


def frame_size(sample_rate, resolution_ms):
    """Samples per frame; rejects resolutions that are not whole samples."""
    exact = sample_rate * resolution_ms / 1000.0
    n = int(round(exact))
    if n <= 0 or abs(exact - n) > 1e-9:
        raise ResolutionError(
            f"resolution {resolution_ms} ms is {exact} samples at {sample_rate} Hz; need a whole number"
        )
    return n


def frame_labels(spans, num_samples, sample_rate, resolution_ms):
    """Per-frame labels: Y=1 iff the window holds any spoofed sample,
    B=1 iff it holds samples of both classes."""
    validate_spans(spans, num_samples)
    step = frame_size(sample_rate, resolution_ms)
    t = num_samples // step
    if t == 0:
        return FrameLabels(resolution_ms, np.zeros(0, np.uint8), np.zeros(0, np.uint8))
    starts = np.array([s for s, _, _ in spans], dtype=np.int64)
    spoofed = np.array([c == SPOOF for _, _, c in spans], dtype=np.int64)
    win_lo = np.arange(t, dtype=np.int64) * step
    win_hi = win_lo + step - 1  # last sample inside the window
    first = np.searchsorted(starts, win_lo, side="right") - 1
    last = np.searchsorted(starts, win_hi, side="right") - 1
    b = (last > first).astype(np.uint8)
    cum = np.cumsum(spoofed)
    spoof_in_range = (cum[last] - cum[first] + spoofed[first]) > 0
    y = spoof_in_range.astype(np.uint8)
    return FrameLabels(resolution_ms, y, b)


def frame_labels_for(record_or_utt, resolution_ms):
    u = record_or_utt
    return frame_labels(u.spans, u.num_samples, u.sample_rate, resolution_ms)


def repool(labels, factor):
    """Coarsen by an integer factor; coarse Y/B are maxima over the covered
    fine frames, trailing partial groups are dropped."""
    factor = int(factor)
    if factor < 1:
        raise ResolutionError(f"repool factor must be >= 1, got {factor}")
    if factor == 1:
        return FrameLabels(labels.resolution_ms, labels.y.copy(), labels.b.copy())
    t = labels.num_frames // factor
    y = labels.y[: t * factor].reshape(t, factor).max(axis=1)
    b = labels.b[: t * factor].reshape(t, factor).max(axis=1)
    return FrameLabels(labels.resolution_ms * factor, y, b)


def pool_scores(scores, factor):
    """Coarsen frame scores to match ``repool`` label semantics (max rule)."""
    factor = int(factor)
    if factor < 1:
        raise ResolutionError(f"pool factor must be >= 1, got {factor}")
    if factor == 1:
        return np.asarray(scores).copy()
    scores = np.asarray(scores)
    t = len(scores) // factor
    return scores[: t * factor].reshape(t, factor).max(axis=1)


def boundary_from_segment_labels(y):
    """Fallback when only per-frame authenticity labels exist: mark the first
    frame of each new segment as a boundary. Unlike sample-span labels this
    cannot guarantee B implies Y."""
    y = np.asarray(y)
    b = np.zeros(len(y), np.uint8)
    if len(y) > 1:
        b[1:] = (y[1:] != y[:-1]).astype(np.uint8)
    return b


def write_label_dump(path, items):
    """Debug dump: one JSON object per utterance {id, resolution_ms, Y, B}."""
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, labels in items:
            obj = {
                "id": utt_id,
                "resolution_ms": labels.resolution_ms,
                "Y": [int(v) for v in labels.y],
                "B": [int(v) for v in labels.b],
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")
