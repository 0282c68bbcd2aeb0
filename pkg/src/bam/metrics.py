"""Frame-level evaluation: equal error rate, precision/recall/F1.

Spoofed is the positive class throughout. EER sweeps every distinct score
as a decision threshold (decision: score >= threshold), picks the one
minimizing |FAR - FRR| (ties go to the lower threshold), and reports the
mean of the two rates there.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

CSV_HEADER = "resolution_ms,task,eer,f1,precision,recall,threshold"


class MetricError(ValueError):
    pass


def _as_arrays(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError(f"scores {scores.shape} / labels {labels.shape} must be equal-length 1-d")
    if scores.size and not np.isfinite(scores).all():
        raise MetricError("non-finite scores")
    return scores, labels.astype(np.int64)


def compute_eer(scores, labels):
    """Returns (eer, threshold). Requires both classes present."""
    scores, labels = _as_arrays(scores, labels)
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    if len(pos) == 0 or len(neg) == 0:
        raise MetricError("EER undefined: need both positive and negative frames")
    thresholds = np.unique(scores)
    frr = np.searchsorted(pos, thresholds, side="left") / len(pos)
    far = (len(neg) - np.searchsorted(neg, thresholds, side="left")) / len(neg)
    i = int(np.argmin(np.abs(far - frr)))  # first minimum = lowest threshold
    return float((far[i] + frr[i]) / 2.0), float(thresholds[i])


def compute_prf(scores, labels, threshold=0.5):
    """Precision/recall/F1 at a fixed threshold; degenerate denominators give 0."""
    scores, labels = _as_arrays(scores, labels)
    dec = scores >= threshold
    tp = int(np.sum(dec & (labels == 1)))
    fp = int(np.sum(dec & (labels == 0)))
    tn = int(np.sum(~dec & (labels == 0)))
    fn = int(np.sum(~dec & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1, (tp, fp, tn, fn)


@dataclass
class EvalReport:
    task: str  # "authenticity" | "boundary"
    resolution_ms: float
    eer: float
    eer_threshold: float
    precision: float
    recall: float
    f1: float
    threshold: float  # decision threshold used for P/R/F1
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def num_frames(self):
        return self.tp + self.fp + self.tn + self.fn

    def csv_row(self):
        return (
            f"{_fmt_res(self.resolution_ms)},{self.task},{self.eer:.6f},{self.f1:.6f},"
            f"{self.precision:.6f},{self.recall:.6f},{self.threshold:g}"
        )

    def to_dict(self):
        d = asdict(self)
        d["num_frames"] = self.num_frames
        return d


def _fmt_res(res):
    return f"{res:g}"


def score_report(task, resolution_ms, scores, labels, threshold=0.5):
    eer, eer_thr = compute_eer(scores, labels)
    precision, recall, f1, (tp, fp, tn, fn) = compute_prf(scores, labels, threshold)
    return EvalReport(
        task=task,
        resolution_ms=resolution_ms,
        eer=eer,
        eer_threshold=eer_thr,
        precision=precision,
        recall=recall,
        f1=f1,
        threshold=threshold,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
    )


def write_reports(reports, json_path=None, csv_path=None):
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump([r.to_dict() for r in reports], fh, indent=2, sort_keys=True)
            fh.write("\n")
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(CSV_HEADER + "\n")
            for r in reports:
                fh.write(r.csv_row() + "\n")
