"""Synthetic spliced-audio corpus: generation, manifests, feature files.

Each utterance is a sequence of spans rendered from one of two signal
classes and hard-spliced together. Genuine spans are harmonic tones with a
steep spectral tilt and phase-coherent partials; spoofed spans share the
harmonic recipe but carry phase-randomized partials and a flatter tilt.
Span annotations are sample-accurate.

On-disk formats:
  * waveform files: raw little-endian float32, no header
  * manifest.jsonl: one JSON object per utterance
    {id, path, sample_rate, num_samples, split, spans: [[start, end, cls], ...]}
  * feature files: magic "BAMF", u32 T, u32 D (LE), then T*D float32 LE row-major
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

GENUINE = "genuine"
SPOOF = "spoof"

# Signal recipe constants. Tilt is the partial-amplitude decay exponent. Each
# utterance draws its own genuine tilt and its spoofed spans sit a bounded
# step below it, so class tilts overlap across the corpus while the contrast
# inside any one utterance stays clean.
GENUINE_TILT_RANGE = (1.0, 1.65)
TILT_GAP_RANGE = (0.54, 0.74)
MAX_PARTIALS = 40
MIN_SPAN_SECONDS = 0.30
NOISE_RANGE = (0.03, 0.09)
GAIN_RANGE = (0.30, 0.85)


class CorpusError(ValueError):
    """Malformed corpus data (manifest, spans, waveforms)."""


class FeatureFileError(ValueError):
    """Base class for feature-file parse failures."""


class BadMagicError(FeatureFileError):
    pass


class TruncatedFileError(FeatureFileError):
    pass


class NonFiniteDataError(FeatureFileError):
    pass


@dataclass
class Utterance:
    id: str
    sample_rate: int
    samples: np.ndarray  # float32 in [-1, 1]
    spans: list  # [(start, end, cls)], partition of [0, num_samples)
    split: str = "train"

    @property
    def num_samples(self):
        return len(self.samples)


@dataclass
class UttRecord:
    """Manifest entry; waveform loaded on demand via ``load_samples``."""

    id: str
    path: str
    sample_rate: int
    num_samples: int
    split: str
    spans: list

    def load_samples(self, root):
        data = np.fromfile(os.path.join(root, self.path), dtype="<f4")
        if len(data) != self.num_samples:
            raise CorpusError(
                f"{self.id}: waveform has {len(data)} samples, manifest says {self.num_samples}"
            )
        return data

    def is_spliced(self):
        return any(cls == SPOOF for _, _, cls in self.spans)


@dataclass
class Corpus:
    root: str
    records: list = field(default_factory=list)

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def __len__(self):
        return len(self.records)


def validate_spans(spans, num_samples):
    """Spans must partition [0, num_samples) with alternating classes."""
    if num_samples > 0 and not spans:
        raise CorpusError("no spans for non-empty utterance")
    prev_end = 0
    prev_cls = None
    for i, (start, end, cls) in enumerate(spans):
        if cls not in (GENUINE, SPOOF):
            raise CorpusError(f"span {i}: unknown class {cls!r}")
        if start != prev_end:
            kind = "overlaps" if start < prev_end else "leaves a gap before"
            raise CorpusError(f"span {i} [{start},{end}) {kind} span {i - 1}")
        if end <= start:
            raise CorpusError(f"span {i} [{start},{end}) is empty or reversed")
        if cls == prev_cls:
            raise CorpusError(f"span {i} repeats class {cls!r} of span {i - 1}")
        prev_end = end
        prev_cls = cls
    if prev_end != num_samples:
        raise CorpusError(f"spans end at {prev_end}, utterance has {num_samples} samples")


# -- signal rendering --------------------------------------------------------


def _lowpass(x):
    kernel = np.ones(7) / 7.0
    return np.convolve(x, kernel, mode="same")


def _render_span(rng, n, sample_rate, spoofed, noise_level, tilt):
    f0 = rng.uniform(80.0, 300.0)
    vib_depth = rng.uniform(0.005, 0.02)
    vib_rate = rng.uniform(4.0, 7.0)
    vib_phase = rng.uniform(0.0, 2 * np.pi)
    t = np.arange(n) / sample_rate
    inst_freq = f0 * (1.0 + vib_depth * np.sin(2 * np.pi * vib_rate * t + vib_phase))
    phase = 2 * np.pi * np.cumsum(inst_freq) / sample_rate

    n_partials = min(MAX_PARTIALS, int(0.45 * sample_rate / f0))
    k = np.arange(1, n_partials + 1, dtype=np.float64)
    amps = k**-tilt
    if spoofed:
        offsets = rng.uniform(0.0, 2 * np.pi, size=n_partials)
    else:
        offsets = np.zeros(n_partials)
    sig = (amps[:, None] * np.sin(k[:, None] * phase[None, :] + offsets[:, None])).sum(axis=0)
    sig /= amps.sum()
    sig += noise_level * _lowpass(rng.standard_normal(n))
    return sig


def _split_lengths(rng, total, parts, min_len):
    """Random integer composition of ``total`` into ``parts`` pieces >= min_len."""
    slack = total - parts * min_len
    if parts == 1:
        return [total]
    cuts = np.sort(rng.integers(0, slack + 1, size=parts - 1))
    edges = np.concatenate(([0], cuts, [slack]))
    return [int(d) + min_len for d in np.diff(edges)]


def _make_spans(rng, num_samples, ratio, min_span):
    if ratio <= 0.0:
        return [(0, num_samples, GENUINE)]
    total_spoof = int(round(ratio * num_samples))
    total_spoof = max(min_span, min(total_spoof, num_samples - 2 * min_span))
    n_spoof = int(rng.integers(1, 4))  # 1 to 3 spoofed segments
    while n_spoof > 1 and (
        total_spoof < n_spoof * min_span or num_samples - total_spoof < (n_spoof + 1) * min_span
    ):
        n_spoof -= 1
    spoof_lens = _split_lengths(rng, total_spoof, n_spoof, min_span)
    gen_lens = _split_lengths(rng, num_samples - total_spoof, n_spoof + 1, min_span)
    spans = []
    pos = 0
    for i in range(n_spoof):
        spans.append((pos, pos + gen_lens[i], GENUINE))
        pos += gen_lens[i]
        spans.append((pos, pos + spoof_lens[i], SPOOF))
        pos += spoof_lens[i]
    spans.append((pos, pos + gen_lens[-1], GENUINE))
    return spans


def synthesize_utterance(utt_id, seed, sample_rate, duration_range, spoof_ratio_range,
                         fully_genuine_fraction=0.2, crossfade=0):
    """Render one utterance deterministically from its own seed."""
    rng = np.random.default_rng(seed)
    duration = rng.uniform(*duration_range)
    num_samples = int(round(duration * sample_rate))
    lo, hi = spoof_ratio_range
    if hi <= 0.0 or rng.uniform() < fully_genuine_fraction:
        ratio = 0.0
    else:
        ratio = rng.uniform(lo, hi)
    min_span = int(MIN_SPAN_SECONDS * sample_rate)
    spans = _make_spans(rng, num_samples, ratio, min_span)
    gain = rng.uniform(*GAIN_RANGE)
    noise_level = rng.uniform(*NOISE_RANGE)
    genuine_tilt = rng.uniform(*GENUINE_TILT_RANGE)
    spoof_tilt = genuine_tilt - rng.uniform(*TILT_GAP_RANGE)
    pieces = [
        _render_span(rng, end - start, sample_rate, cls == SPOOF, noise_level,
                     spoof_tilt if cls == SPOOF else genuine_tilt)
        for start, end, cls in spans
    ]
    wave = np.concatenate(pieces)
    if crossfade > 0:
        # amplitude fade through each splice point: ramp down into the
        # junction and back up, so a hard click becomes a short dip
        half = crossfade // 2
        for start, _, _ in spans[1:]:
            lo_i = max(0, start - half)
            hi_i = min(num_samples, start + half + 1)
            idx = np.arange(lo_i, hi_i)
            wave[lo_i:hi_i] *= np.abs(idx - start) / max(half, 1)
    wave = np.clip(gain * wave, -1.0, 1.0).astype(np.float32)
    validate_spans(spans, num_samples)
    return Utterance(id=utt_id, sample_rate=sample_rate, samples=wave, spans=spans)


def generate_corpus(out_dir, n_utts, sample_rate=8000, duration_range=(1.6, 4.0),
                    spoof_ratio_range=(0.2, 0.6), seed=0, fully_genuine_fraction=0.2,
                    crossfade=0):
    """Generate a corpus on disk; deterministic given ``seed``.

    Per-utterance randomness is seeded with ``seed ^ index`` so utterances
    could be rendered in parallel without changing the output.
    """
    if n_utts < 1:
        raise CorpusError("n_utts must be >= 1")
    lo, hi = duration_range
    if lo <= 0 or hi < lo:
        raise CorpusError(f"degenerate duration range [{lo}, {hi}]")
    wav_dir = os.path.join(out_dir, "wav")
    os.makedirs(wav_dir, exist_ok=True)

    splits = _assign_splits(n_utts, seed)
    records = []
    for i in range(n_utts):
        utt = synthesize_utterance(
            f"utt_{i:05d}",
            seed ^ i,
            sample_rate,
            duration_range,
            spoof_ratio_range,
            fully_genuine_fraction,
            crossfade,
        )
        rel = os.path.join("wav", f"{utt.id}.f32")
        utt.samples.astype("<f4").tofile(os.path.join(out_dir, rel))
        records.append(
            UttRecord(
                id=utt.id,
                path=rel,
                sample_rate=sample_rate,
                num_samples=utt.num_samples,
                split=splits[i],
                spans=utt.spans,
            )
        )
    _ensure_spliced_coverage(records)
    write_manifest(os.path.join(out_dir, "manifest.jsonl"), records)
    return Corpus(root=out_dir, records=records)


def _assign_splits(n_utts, seed, fractions=(0.70, 0.15, 0.15)):
    order = np.random.default_rng(seed).permutation(n_utts)
    n_train = int(round(fractions[0] * n_utts))
    n_dev = int(round(fractions[1] * n_utts))
    splits = [""] * n_utts
    for rank, idx in enumerate(order):
        if rank < n_train:
            splits[idx] = "train"
        elif rank < n_train + n_dev:
            splits[idx] = "dev"
        else:
            splits[idx] = "eval"
    return splits


def _ensure_spliced_coverage(records):
    """Guarantee every nonempty split holds a spliced utterance when any exists."""
    spliced = [r for r in records if r.is_spliced()]
    if not spliced:
        return
    by_split = {}
    for r in spliced:
        by_split.setdefault(r.split, []).append(r)
    donor_split = max(by_split, key=lambda s: len(by_split[s]))
    for name in ("train", "dev", "eval"):
        members = [r for r in records if r.split == name]
        if members and not any(r.is_spliced() for r in members) and len(by_split[donor_split]) > 1:
            donor = by_split[donor_split].pop()
            recipient = members[0]
            donor.split, recipient.split = name, donor_split


# -- manifest ----------------------------------------------------------------


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            obj = {
                "id": r.id,
                "path": r.path,
                "sample_rate": r.sample_rate,
                "num_samples": r.num_samples,
                "split": r.split,
                "spans": [[int(s), int(e), c] for s, e, c in r.spans],
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def read_manifest(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = UttRecord(
                    id=obj["id"],
                    path=obj["path"],
                    sample_rate=int(obj["sample_rate"]),
                    num_samples=int(obj["num_samples"]),
                    split=obj["split"],
                    spans=[(int(s), int(e), c) for s, e, c in obj["spans"]],
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise CorpusError(f"manifest line {lineno}: {exc}") from None
            try:
                validate_spans(rec.spans, rec.num_samples)
            except CorpusError as exc:
                raise CorpusError(f"manifest line {lineno}: {exc}") from None
            records.append(rec)
    return records


def load_corpus(root):
    return Corpus(root=root, records=read_manifest(os.path.join(root, "manifest.jsonl")))


# -- feature files ------------------------------------------------------------

FEATURE_MAGIC = b"BAMF"


def write_features(path, values):
    values = np.asarray(values, dtype="<f4")
    if values.ndim != 2:
        raise FeatureFileError(f"features must be 2-d (T, D), got shape {values.shape}")
    t, d = values.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", t, d))
        fh.write(values.tobytes(order="C"))


def read_features(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != FEATURE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise TruncatedFileError(f"{path}: header truncated at {len(blob)} bytes")
    t, d = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * t * d
    if len(blob) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes for {t}x{d}, got {len(blob)}")
    values = np.frombuffer(blob[12:expected], dtype="<f4").reshape(t, d)
    if not np.isfinite(values).all():
        raise NonFiniteDataError(f"{path}: non-finite feature values")
    return values.astype(np.float64)
