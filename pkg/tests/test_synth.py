"""Corpus generator: determinism, span laws, manifest and feature-file
round trips, and the linear separability floor that keeps the recipe
learnable."""

import hashlib
import json
import os

import numpy as np
import pytest

from bam.labeling import frame_labels_for, frame_size
from bam.synth import (
    GENUINE,
    SPOOF,
    BadMagicError,
    CorpusError,
    NonFiniteDataError,
    TruncatedFileError,
    UttRecord,
    generate_corpus,
    load_corpus,
    read_features,
    read_manifest,
    synthesize_utterance,
    validate_spans,
    write_features,
    write_manifest,
)


def _tree_digest(root):
    h = hashlib.sha256()
    for dirpath, dirnames, filenames in sorted(os.walk(root)):
        dirnames.sort()
        for name in sorted(filenames):
            path = os.path.join(dirpath, name)
            h.update(os.path.relpath(path, root).encode())
            with open(path, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def test_generation_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    generate_corpus(str(a), 12, seed=42)
    generate_corpus(str(b), 12, seed=42)
    assert _tree_digest(a) == _tree_digest(b)


def test_per_utterance_seeding_matches_corpus(tmp_path):
    """seed ^ index per utterance: rendering one utterance standalone gives
    the exact samples the corpus run wrote, so generation can parallelize."""
    corpus = generate_corpus(str(tmp_path / "c"), 6, seed=9)
    for i, rec in enumerate(corpus.records):
        utt = synthesize_utterance(rec.id, 9 ^ i, 8000, (1.6, 4.0), (0.2, 0.6))
        assert utt.spans == rec.spans
        assert np.array_equal(utt.samples, rec.load_samples(corpus.root).astype(np.float32))


def test_span_partition_invariants(small_corpus):
    for rec in small_corpus.records:
        validate_spans(rec.spans, rec.num_samples)  # partition, no gaps/overlap
        classes = [cls for _, _, cls in rec.spans]
        for a, b in zip(classes, classes[1:]):
            assert a != b, "adjacent spans must alternate class"
        assert rec.spans[0][0] == 0
        assert rec.spans[-1][1] == rec.num_samples


def test_durations_within_range(small_corpus):
    for rec in small_corpus.records:
        assert 1.6 * 8000 <= rec.num_samples <= 4.0 * 8000


def test_waveforms_bounded_and_finite(small_corpus):
    for rec in small_corpus.records[:20]:
        samples = rec.load_samples(small_corpus.root)
        assert np.isfinite(samples).all()
        assert np.abs(samples).max() <= 1.0


def test_spoof_fraction_law(default_corpus):
    """Corpus-wide spoofed-sample fraction sits inside the configured ratio
    range +-5% once n is in the hundreds."""
    spoofed = total = 0
    for rec in default_corpus.records:
        total += rec.num_samples
        spoofed += sum(e - s for s, e, cls in rec.spans if cls == SPOOF)
    frac = spoofed / total
    assert 0.2 - 0.05 <= frac <= 0.6 + 0.05


def test_fully_genuine_utterances_exist(default_corpus):
    n_genuine = sum(1 for r in default_corpus.records if not r.is_spliced())
    assert 0.10 * len(default_corpus.records) <= n_genuine <= 0.30 * len(default_corpus.records)
    for r in default_corpus.records:
        if not r.is_spliced():
            assert len(r.spans) == 1 and r.spans[0][2] == GENUINE


def test_every_split_present(small_corpus):
    names = {r.split for r in small_corpus.records}
    assert names == {"train", "dev", "eval"}
    for split in names:
        assert any(r.is_spliced() for r in small_corpus.split(split))


def test_zero_spoof_ratio_fully_genuine(tmp_path):
    corpus = generate_corpus(str(tmp_path / "g"), 8, seed=1, spoof_ratio_range=(0.0, 0.0))
    for rec in corpus.records:
        assert len(rec.spans) == 1
        assert rec.spans[0] == (0, rec.num_samples, GENUINE)


def test_degenerate_duration_range_rejected(tmp_path):
    with pytest.raises(CorpusError):
        generate_corpus(str(tmp_path / "bad"), 4, duration_range=(2.0, 1.0))
    with pytest.raises(CorpusError):
        generate_corpus(str(tmp_path / "bad2"), 0)


# -- manifest ----------------------------------------------------------------


def test_manifest_round_trip(tmp_path, small_corpus):
    recs = small_corpus.records[:3]
    path = tmp_path / "manifest.jsonl"
    write_manifest(str(path), recs)
    back = read_manifest(str(path))
    assert back == list(recs)


def test_empty_manifest_round_trips(tmp_path):
    path = tmp_path / "empty.jsonl"
    write_manifest(str(path), [])
    assert read_manifest(str(path)) == []


def test_malformed_manifest_names_line(tmp_path, small_corpus):
    path = tmp_path / "m.jsonl"
    write_manifest(str(path), small_corpus.records[:2])
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("{not json\n")
    with pytest.raises(CorpusError, match="line 3"):
        read_manifest(str(path))


def test_manifest_rejects_overlapping_spans(tmp_path):
    rec = UttRecord(
        id="u0",
        path="wav/u0.f32",
        sample_rate=8000,
        num_samples=4000,
        split="train",
        spans=[(0, 2500, GENUINE), (2000, 4000, SPOOF)],
    )
    path = tmp_path / "m.jsonl"
    write_manifest(str(path), [rec])
    with pytest.raises(CorpusError, match="span"):
        read_manifest(str(path))


def test_load_corpus_matches_generation(tmp_path):
    corpus = generate_corpus(str(tmp_path / "c"), 5, seed=2)
    again = load_corpus(str(tmp_path / "c"))
    assert again.records == corpus.records
    assert len(again) == 5


# -- feature files -------------------------------------------------------------


def test_feature_file_layout(tmp_path):
    path = str(tmp_path / "f.bamf")
    write_features(path, np.arange(6.0).reshape(2, 3))
    assert np.array_equal(read_features(path), [[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]])


def test_feature_file_empty_ok(tmp_path):
    path = str(tmp_path / "e.bamf")
    write_features(path, np.zeros((0, 4)))
    out = read_features(path)
    assert out.shape == (0, 4)


def test_feature_file_bad_magic(tmp_path):
    path = tmp_path / "bad.bamf"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(BadMagicError):
        read_features(str(path))


def test_feature_file_truncated(tmp_path):
    good = tmp_path / "good.bamf"
    write_features(str(good), np.ones((3, 4)))
    cut = tmp_path / "cut.bamf"
    cut.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(TruncatedFileError):
        read_features(str(cut))


def test_feature_file_non_finite(tmp_path):
    path = str(tmp_path / "nan.bamf")
    vals = np.ones((2, 2), dtype=np.float32)
    vals[1, 1] = np.nan
    with open(path, "wb") as fh:
        fh.write(b"BAMF")
        fh.write(np.array([2, 2], dtype="<u4").tobytes())
        fh.write(vals.astype("<f4").tobytes())
    with pytest.raises(NonFiniteDataError):
        read_features(path)


# -- separability oracle -------------------------------------------------------


def test_frames_linearly_separable(default_corpus):
    """A plain logistic regression on log-magnitude spectra of 20 ms frames
    must clear 90% eval accuracy: the corpus is hard enough to need context
    but not unlearnable."""
    sklearn = pytest.importorskip("sklearn.linear_model")

    def frames_of(split):
        step = frame_size(8000, 20.0)
        xs, ys = [], []
        for rec in default_corpus.split(split):
            samples = rec.load_samples(default_corpus.root)
            labels = frame_labels_for(rec, 20.0)
            wins = samples[: labels.num_frames * step].reshape(labels.num_frames, step)
            xs.append(np.log(np.abs(np.fft.rfft(wins, axis=1)) + 1e-8))
            ys.append(labels.y)
        return np.concatenate(xs), np.concatenate(ys)

    xtr, ytr = frames_of("train")
    xev, yev = frames_of("eval")
    clf = sklearn.LogisticRegression(max_iter=2000)
    clf.fit(xtr, ytr)
    acc = clf.score(xev, yev)
    assert acc > 0.90, f"eval separability {acc:.4f}"
