"""Frame labels from sample spans: the window-arithmetic hand cases, the
B-implies-Y law, re-pooling, and the direct-vs-repooled equivalence."""

import json

import numpy as np
import pytest

from bam.labeling import (
    FrameLabels,
    ResolutionError,
    boundary_from_segment_labels,
    frame_labels,
    frame_labels_for,
    frame_size,
    pool_scores,
    repool,
    write_label_dump,
)
from bam.synth import GENUINE, SPOOF, synthesize_utterance

RES = 160.0  # ms; 1280 samples at 8 kHz


def test_frame_size_arithmetic():
    assert frame_size(8000, 160.0) == 1280
    assert frame_size(8000, 20.0) == 160
    assert frame_size(16000, 0.5) == 8


def test_frame_size_rejects_fractional_samples():
    with pytest.raises(ResolutionError):
        frame_size(8000, 0.3)  # 2.4 samples
    with pytest.raises(ResolutionError):
        frame_size(8000, 0.0)
    with pytest.raises(ResolutionError):
        frame_size(8000, -20.0)


def test_hand_case_interior_splice():
    spans = [(0, 2400, GENUINE), (2400, 4800, SPOOF)]
    labels = frame_labels(spans, 4800, 8000, RES)
    # frame 0 [0,1280) genuine; frame 1 [1280,2560) straddles 2400; frame 2 [2560,3840) spoofed
    assert labels.y.tolist() == [0, 1, 1]
    assert labels.b.tolist() == [0, 1, 0]
    assert labels.num_frames == 3  # trailing partial [3840,4800) dropped


def test_hand_case_edge_aligned_splice():
    spans = [(0, 2560, GENUINE), (2560, 5120, SPOOF)]
    labels = frame_labels(spans, 5120, 8000, RES)
    assert labels.y.tolist() == [0, 0, 1, 1]
    assert labels.b.tolist() == [0, 0, 0, 0]  # no window holds both classes


def test_fully_genuine_all_zero():
    labels = frame_labels([(0, 8000, GENUINE)], 8000, 8000, RES)
    assert not labels.y.any()
    assert not labels.b.any()


def test_too_short_gives_empty():
    labels = frame_labels([(0, 100, GENUINE)], 100, 8000, RES)
    assert labels.num_frames == 0


def test_boundary_implies_spoof_corpus_wide(small_corpus):
    for res in (20.0, 160.0):
        for rec in small_corpus.records:
            labels = frame_labels_for(rec, res)
            assert not (labels.b & ~labels.y).any(), rec.id


def test_repool_identity():
    labels = FrameLabels(RES, np.array([0, 1], np.uint8), np.array([0, 1], np.uint8))
    out = repool(labels, 1)
    assert out.resolution_ms == RES
    assert np.array_equal(out.y, labels.y) and out.y is not labels.y


def test_repool_max_rule_hand_case():
    labels = FrameLabels(RES, np.array([0, 0, 1, 1], np.uint8), np.array([0, 1, 0, 0], np.uint8))
    out = repool(labels, 2)
    assert out.y.tolist() == [0, 1]
    assert out.b.tolist() == [1, 0]
    assert out.resolution_ms == 2 * RES


def test_repool_drops_trailing_partial():
    labels = FrameLabels(RES, np.arange(5, dtype=np.uint8) % 2, np.zeros(5, np.uint8))
    assert repool(labels, 2).num_frames == 2


def test_repool_rejects_bad_factor():
    labels = FrameLabels(RES, np.zeros(4, np.uint8), np.zeros(4, np.uint8))
    with pytest.raises(ResolutionError):
        repool(labels, 0)


def test_direct_equals_repooled():
    """Labels computed straight from spans at 320 ms equal repool(160 ms, 2).
    Y always; B too unless a splice sits exactly on a 160 ms frame edge
    (then only the coarse window can straddle it)."""
    fine = frame_size(8000, 160.0)
    for i in range(100):
        utt = synthesize_utterance(f"u{i}", 1000 + i, 8000, (1.6, 4.0), (0.2, 0.6))
        direct = frame_labels(utt.spans, utt.num_samples, 8000, 320.0)
        pooled = repool(frame_labels(utt.spans, utt.num_samples, 8000, 160.0), 2)
        assert direct.num_frames == pooled.num_frames
        assert np.array_equal(direct.y, pooled.y)
        edges_aligned = any(s % fine == 0 for s, _, _ in utt.spans[1:])
        if not edges_aligned:
            assert np.array_equal(direct.b, pooled.b)


def test_sign_changes_match_boundary_runs(small_corpus):
    """With every splice interior to a frame and every boundary frame
    isolated, each authenticity flip in Y is witnessed by exactly one run of
    boundary frames. Spans shorter than two frames can put two splices into
    adjacent frames; that merges runs, so such utterances carry no claim."""
    fine = frame_size(8000, RES)
    checked = 0
    for rec in small_corpus.records:
        labels = frame_labels_for(rec, RES)
        if labels.num_frames and np.any(labels.b[1:] & labels.b[:-1]):
            continue
        flips = int(np.sum(labels.y[1:] != labels.y[:-1]))
        padded = np.concatenate([[0], labels.b, [0]])
        runs = int(np.sum((padded[1:] == 1) & (padded[:-1] == 0)))
        interior = all(s % fine != 0 for s, _, _ in rec.spans[1:])
        if interior:
            assert flips == runs, rec.id
        else:
            assert flips >= runs, rec.id
        checked += 1
    assert checked >= len(small_corpus.records) // 2  # the law must bite


def test_segment_label_fallback():
    b = boundary_from_segment_labels([0, 0, 1, 1, 0])
    assert b.tolist() == [0, 0, 1, 0, 1]  # first frame of each new segment
    assert boundary_from_segment_labels([1]).tolist() == [0]


def test_pool_scores_max_rule():
    scores = np.array([0.1, 0.9, 0.3, 0.2, 0.8])
    out = pool_scores(scores, 2)
    assert np.allclose(out, [0.9, 0.3])  # trailing partial dropped
    same = pool_scores(scores, 1)
    same[0] = -1.0
    assert scores[0] == 0.1  # factor 1 returns a copy


def test_label_dump_format(tmp_path, small_corpus):
    items = [(rec.id, frame_labels_for(rec, RES)) for rec in small_corpus.records[:2]]
    path = tmp_path / "labels.jsonl"
    write_label_dump(str(path), items)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    for (utt_id, labels), line in zip(items, lines):
        obj = json.loads(line)
        assert obj["id"] == utt_id
        assert obj["resolution_ms"] == RES
        assert obj["Y"] == labels.y.tolist()
        assert obj["B"] == labels.b.tolist()
