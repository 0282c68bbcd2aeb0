"""Full localizer: front-end, boundary module, gated attention stack,
frame decision head, joint loss, training loop, evaluation, checkpoints.

Variants (the ablation grid):
  baseline  front-end only, decision head on pooled frames
  fa        unmasked attention stack
  fa_be     attention stack + boundary module, no attention masking
  bfa_be    full model: attention masked by predicted boundaries ("be" alias)
  fc/inter/intra  full masked model with the boundary head reading raw
            frames / the inter branch only / the intra branch only
"""

from __future__ import annotations

import json
import math
import os
import struct

import numpy as np

from .boundary import BoundaryDetector, GatedAttentionStack, combine_masks
from .config import BamConfig
from .frontend import AttentivePool, FeatureProjector, WaveEncoder
from .labeling import frame_labels, frame_labels_for, pool_scores, repool
from .metrics import MetricError, score_report
from .nn import Linear
from .optim import Adam, halved_lr
from .synth import CorpusError, read_features
from .tensor import ShapeError, Tensor, add, concat, log_softmax, mul, neg, no_grad, tsum


class TrainingError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


MASKED_VARIANTS = ("bfa_be", "fc", "inter", "intra")
BOUNDARY_VARIANTS = ("fa_be",) + MASKED_VARIANTS
# which boundary-branch configuration each variant uses
_BRANCHES = {"fa_be": "be", "bfa_be": "be", "fc": "fc", "inter": "inter", "intra": "intra"}


class FramePrediction:
    __slots__ = ("logits", "spoof_prob", "boundary_logits", "boundary_prob", "hard_boundaries", "valid")

    def __init__(self, logits, spoof_prob, boundary_logits, boundary_prob, hard_boundaries, valid):
        self.logits = logits  # Tensor (B, T, 2); class 0 genuine, 1 spoof
        self.spoof_prob = spoof_prob  # numpy (B, T)
        self.boundary_logits = boundary_logits  # Tensor (B, T) or None
        self.boundary_prob = boundary_prob  # numpy (B, T) or None
        self.hard_boundaries = hard_boundaries  # numpy (B, T) or None
        self.valid = valid  # numpy bool (B, T)


def _spoof_probs(logit_data):
    z = logit_data - logit_data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e[..., 1] / e.sum(axis=-1)


class SpliceLocalizer:
    def __init__(self, cfg: BamConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        if cfg.frontend == "encoder":
            self.encoder = WaveEncoder(cfg.encoder_channels, cfg.encoder_widths, rng)
        else:
            self.encoder = FeatureProjector(cfg.external_dim, cfg.d_model, rng)
        self.pool = AttentivePool(cfg.d_model, cfg.stride, rng)
        self.has_attention = cfg.variant != "baseline"
        self.has_boundary = cfg.variant in BOUNDARY_VARIANTS
        self.masked = cfg.variant in MASKED_VARIANTS
        self.boundary = None
        self.stack = None
        if self.has_boundary:
            self.boundary = BoundaryDetector(
                cfg.d_model,
                cfg.heads,
                rng,
                branches=_BRANCHES[cfg.variant],
                threshold=cfg.threshold,
                mask_mode=cfg.mask_mode,
                intra_channels=cfg.intra_channels,
            )
        if self.has_attention:
            self.stack = GatedAttentionStack(cfg.d_model, cfg.heads, cfg.n_blocks, rng, mask_mode=cfg.mask_mode)
        decision_width = 2 * cfg.d_model if self.has_boundary else cfg.d_model
        self.decision = Linear(decision_width, 2, rng)

    # -- forward ---------------------------------------------------------

    def frame_features(self, x):
        """Front-end only: raw input -> pooled frame features (B, T, D)."""
        if self.cfg.frontend == "encoder":
            pre = self.encoder(x)
        else:
            arr = np.asarray(x, dtype=np.float64)
            if arr.ndim != 3:
                raise ShapeError(f"external features must be (B, T, D), got {arr.shape}")
            pre = self.encoder(arr)
        return self.pool(pre)

    def forward(self, x, training=False, valid=None, forced_boundaries=None):
        feats = self.frame_features(x)
        b, t, _ = feats.shape
        if valid is None:
            valid_arr = np.ones((b, t), dtype=bool)
            valid_in = None
        else:
            valid_arr = np.asarray(valid, dtype=bool)
            if valid_arr.shape != (b, t):
                raise ShapeError(f"validity mask shape {valid_arr.shape} != frame shape {(b, t)}")
            valid_in = valid_arr.astype(np.float64)

        be_out = None
        if self.has_boundary:
            be_out = self.boundary(feats, training=training, valid=valid_in, forced=forced_boundaries)

        if self.has_attention:
            hard = be_out.hard if (self.masked and be_out is not None) else None
            attended = self.stack(feats, hard_boundaries=hard, training=training, valid=valid_in)
        else:
            attended = feats

        head_in = concat([attended, be_out.enhanced], axis=2) if be_out is not None else attended
        logits = self.decision(head_in)
        return FramePrediction(
            logits=logits,
            spoof_prob=_spoof_probs(logits.data),
            boundary_logits=be_out.logits if be_out is not None else None,
            boundary_prob=be_out.prob.data if be_out is not None else None,
            hard_boundaries=be_out.hard if be_out is not None else None,
            valid=valid_arr,
        )

    # -- parameter plumbing ----------------------------------------------

    def _modules(self):
        mods = [("encoder", self.encoder), ("pool", self.pool)]
        if self.boundary is not None:
            mods.append(("boundary", self.boundary))
        if self.stack is not None:
            mods.append(("stack", self.stack))
        mods.append(("decision", self.decision))
        return mods

    def parameters(self):
        out = []
        for prefix, mod in self._modules():
            out.extend((f"{prefix}.{name}", p) for name, p in mod.parameters())
        return out

    def boundary_head_parameters(self):
        if self.boundary is None:
            return []
        return [(f"boundary.{n}", p) for n, p in self.boundary.head_parameters()]

    def buffers(self):
        out = []
        for prefix, mod in self._modules():
            if hasattr(mod, "buffers"):
                out.extend((f"{prefix}.{name}", v) for name, v in mod.buffers())
        return out

    def set_buffer(self, name, value):
        prefix, leaf = name.split(".", 1)
        dict(self._modules())[prefix].set_buffer(leaf, value)


# -- loss ---------------------------------------------------------------


def total_loss(pred, y, b, lam):
    """Joint objective: mean frame cross-entropy + lam * mean boundary BCE.

    Means run over valid frames only. Returns (loss Tensor, parts dict).
    """
    y = np.asarray(y)
    logits = pred.logits
    if y.shape != logits.shape[:2]:
        raise ShapeError(f"labels shape {y.shape} != prediction frames {logits.shape[:2]}")
    w = pred.valid.astype(np.float64)
    n = w.sum()
    if n < 1:
        raise ShapeError("no valid frames in batch")
    wt = Tensor(w)
    inv_n = Tensor(1.0 / n)
    onehot = np.zeros(logits.shape)
    np.put_along_axis(onehot, y.astype(np.int64)[..., None], 1.0, axis=-1)
    nll = neg(tsum(mul(log_softmax(logits, axis=-1), Tensor(onehot)), axis=-1))
    ls = mul(tsum(mul(nll, wt)), inv_n)
    parts = {"authenticity": float(ls.data)}
    if pred.boundary_logits is None:
        parts["total"] = parts["authenticity"]
        return ls, parts
    from .tensor import bce_with_logits

    bt = np.asarray(b, dtype=np.float64)
    if bt.shape != pred.boundary_logits.shape:
        raise ShapeError(f"boundary labels shape {bt.shape} != {pred.boundary_logits.shape}")
    per = bce_with_logits(pred.boundary_logits, bt)
    lb = mul(tsum(mul(per, wt)), inv_n)
    total = add(ls, mul(lb, Tensor(float(lam))))
    parts["boundary"] = float(lb.data)
    parts["total"] = float(total.data)
    return total, parts


# -- batching -----------------------------------------------------------


def crop_spans(spans, start, length):
    """Shift spans by -start and clip to [0, length); drops emptied spans."""
    out = []
    for s, e, cls in spans:
        s2 = max(s - start, 0)
        e2 = min(e - start, length)
        if e2 > s2:
            out.append((s2, e2, cls))
    return out


def assemble_batch(records, root, cfg, rng):
    """Fixed-length training batch: random-trim long utterances, zero-pad
    short ones, and mark frames whose window holds only real samples valid."""
    frame = cfg.frame_samples
    if cfg.frontend == "encoder":
        crop = int(round(cfg.crop_seconds * cfg.sample_rate))
        t_max = crop // frame
        x = np.zeros((len(records), crop))
    else:
        crop_hops = int(round(cfg.crop_seconds * 1000.0 / cfg.hop_ms))
        t_max = crop_hops // cfg.stride
        x = np.zeros((len(records), crop_hops, cfg.external_dim))
    y = np.zeros((len(records), t_max), dtype=np.int64)
    bnd = np.zeros((len(records), t_max), dtype=np.int64)
    valid = np.zeros((len(records), t_max), dtype=bool)
    for i, rec in enumerate(records):
        if cfg.frontend == "encoder":
            samples = rec.load_samples(root)
            length = len(samples)
            start = int(rng.integers(0, length - crop + 1)) if length > crop else 0
            take = min(length - start, crop)
            x[i, :take] = samples[start : start + take]
        else:
            feats = read_features(os.path.join(cfg.features_dir or root, f"{rec.id}.bamf"))
            if feats.shape[1] != cfg.external_dim:
                raise CorpusError(
                    f"{rec.id}: feature dim {feats.shape[1]} != configured external_dim {cfg.external_dim}"
                )
            hops = feats.shape[0]
            start_hop = int(rng.integers(0, hops - crop_hops + 1)) if hops > crop_hops else 0
            take_hops = min(hops - start_hop, crop_hops)
            x[i, :take_hops] = feats[start_hop : start_hop + take_hops]
            start = start_hop * cfg.hop_samples
            take = min(rec.num_samples - start, take_hops * cfg.hop_samples)
        labels = frame_labels(crop_spans(rec.spans, start, take), take, cfg.sample_rate, cfg.resolution_ms)
        tv = labels.num_frames
        y[i, :tv] = labels.y
        bnd[i, :tv] = labels.b
        valid[i, :tv] = True
    # trailing frames that are invalid for every utterance carry no signal;
    # dropping them shrinks the batch without changing any masked statistic
    t_used = max(1, int(valid.sum(axis=1).max()))
    if t_used < t_max:
        y = y[:, :t_used]
        bnd = bnd[:, :t_used]
        valid = valid[:, :t_used]
        if cfg.frontend == "encoder":
            x = x[:, : t_used * frame]
        else:
            x = x[:, : t_used * cfg.stride]
    return x, y, bnd, valid


# -- training -----------------------------------------------------------


def train(corpus, cfg, out_dir, log_name="train_log.jsonl", ckpt_name="best.ckpt", quiet=True,
          init_from=None):
    """Returns (checkpoint path, per-epoch log entries, trained model).

    ``init_from`` warm-starts from a checkpoint, copying every parameter
    whose name and shape match the fresh model."""
    os.makedirs(out_dir, exist_ok=True)
    train_recs = sorted(corpus.split("train"), key=lambda r: r.id)
    dev_recs = sorted(corpus.split("dev"), key=lambda r: r.id)
    if not train_recs:
        raise CorpusError("train split is empty")
    if not dev_recs:
        raise CorpusError("dev split is empty")
    model = SpliceLocalizer(cfg)
    if init_from is not None:
        load_matching_params(model, init_from)
    opt = Adam(model.parameters(), cfg.lr)
    data_rng = np.random.default_rng([cfg.seed, 0x5EED])
    log_path = os.path.join(out_dir, log_name)
    ckpt_path = os.path.join(out_dir, ckpt_name)
    entries = []
    best_eer = math.inf
    with open(log_path, "w", encoding="utf-8") as log:
        for epoch in range(cfg.epochs):
            lr = halved_lr(cfg.lr, epoch, cfg.lr_halving_period)
            opt.lr = lr
            order = data_rng.permutation(len(train_recs))
            batch_losses = []
            for lo in range(0, len(order), cfg.batch_size):
                batch = [train_recs[j] for j in order[lo : lo + cfg.batch_size]]
                x, y, bnd, valid = assemble_batch(batch, corpus.root, cfg, data_rng)
                forced = bnd.astype(np.float64) if (cfg.teacher_force and model.has_boundary) else None
                pred = model.forward(x, training=True, valid=valid, forced_boundaries=forced)
                loss, _ = total_loss(pred, y, bnd, cfg.lambda_boundary)
                if not np.isfinite(loss.data):
                    raise TrainingError(f"non-finite training loss at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                batch_losses.append(float(loss.data))
            train_loss = float(np.mean(batch_losses))
            reports = evaluate(model, dev_recs, corpus.root)
            dev_eer = reports[0].eer
            dev_f1 = reports[0].f1
            entry = {
                "epoch": epoch,
                "lr": lr,
                "train_loss": train_loss,
                "dev_eer": dev_eer,
                "dev_f1": dev_f1,
            }
            entries.append(entry)
            log.write(json.dumps(entry, sort_keys=True) + "\n")
            log.flush()
            if not quiet:
                print(
                    f"epoch {epoch:3d}  lr {lr:.2e}  loss {train_loss:.4f}  "
                    f"dev eer {dev_eer:.4f}  dev f1 {dev_f1:.4f}"
                )
            if dev_eer < best_eer:
                best_eer = dev_eer
                save_checkpoint(
                    ckpt_path,
                    model,
                    optimizer=opt,
                    meta={"epoch": epoch, "dev_eer": dev_eer, "rng_state": data_rng.bit_generator.state},
                )
    if not os.path.exists(ckpt_path):  # all-epochs-NaN cannot happen, but keep the invariant clear
        save_checkpoint(ckpt_path, model, optimizer=opt, meta={"epoch": cfg.epochs - 1})
    return ckpt_path, entries, model


# -- evaluation ---------------------------------------------------------


def evaluate(model, records, root, resolutions=None, threshold=None, per_utterance=False):
    """Frame metrics on full-length utterances, optionally at several
    resolutions (integer multiples of the model's native one). Scores are
    pooled corpus-wide; per_utterance switches EER to a per-utterance mean."""
    from .labeling import ResolutionError

    cfg = model.cfg
    native = cfg.resolution_ms
    if threshold is None:
        threshold = cfg.threshold
    if resolutions is None:
        resolutions = [native]
    factors = []
    for r in resolutions:
        f = r / native
        if abs(f - round(f)) > 1e-9 or f < 1:
            raise ResolutionError(
                f"resolution {r} ms is not an integer multiple of the native {native:g} ms"
            )
        factors.append(int(round(f)))
    records = sorted(records, key=lambda r: r.id)
    if not records:
        raise CorpusError("no utterances to evaluate")
    per_utt = []
    for rec in records:
        if cfg.frontend == "encoder":
            x = rec.load_samples(root)[None, :]
        else:
            x = read_features(os.path.join(cfg.features_dir or root, f"{rec.id}.bamf"))[None, :, :]
        labels = frame_labels_for(rec, native)
        if labels.num_frames == 0:
            raise MetricError(f"{rec.id}: too short for one {native:g} ms frame")
        with no_grad():
            pred = model.forward(x, training=False)
        t = pred.spoof_prob.shape[1]
        if t != labels.num_frames:
            raise MetricError(f"{rec.id}: model emitted {t} frames, labels have {labels.num_frames}")
        per_utt.append((pred, labels))
    reports = []
    for r, f in zip(resolutions, factors):
        ys, yl, bs, bl = [], [], [], []
        for pred, labels in per_utt:
            coarse = repool(labels, f)
            ys.append(pool_scores(pred.spoof_prob[0], f))
            yl.append(coarse.y)
            if model.has_boundary:
                bs.append(pool_scores(pred.boundary_prob[0], f))
                bl.append(coarse.b)
        rep = score_report("authenticity", r, np.concatenate(ys), np.concatenate(yl), threshold)
        if per_utterance:
            rep.eer = _mean_utterance_eer(ys, yl)
            rep.eer_threshold = math.nan
        reports.append(rep)
        if model.has_boundary:
            rep_b = score_report("boundary", r, np.concatenate(bs), np.concatenate(bl), threshold)
            if per_utterance:
                rep_b.eer = _mean_utterance_eer(bs, bl)
                rep_b.eer_threshold = math.nan
            reports.append(rep_b)
    return reports


def _mean_utterance_eer(score_lists, label_lists):
    from .metrics import compute_eer

    vals = []
    for s, l in zip(score_lists, label_lists):
        if 0 < l.sum() < len(l):
            vals.append(compute_eer(s, l)[0])
    if not vals:
        raise MetricError("per-utterance EER undefined: no utterance has both classes")
    return float(np.mean(vals))


# -- checkpoints --------------------------------------------------------

CKPT_MAGIC = b"BAMC"
CKPT_VERSION = 1


def save_checkpoint(path, model, optimizer=None, meta=None):
    params = model.parameters()
    buffers = model.buffers()
    header = {
        "version": CKPT_VERSION,
        "config": model.cfg.to_dict(),
        "meta": meta or {},
        "params": [[name, list(p.data.shape)] for name, p in params],
        "buffers": [[name, list(np.asarray(v).shape)] for name, v in buffers],
        "optimizer": None,
    }
    blobs = [np.ascontiguousarray(p.data, dtype="<f8") for _, p in params]
    blobs += [np.ascontiguousarray(np.asarray(v), dtype="<f8") for _, v in buffers]
    if optimizer is not None:
        state = optimizer.state_arrays()
        names = [name for name, _ in params]
        header["optimizer"] = {"t": state["t"], "order": names}
        for key in ("m", "v"):
            blobs += [np.ascontiguousarray(state[f"{key}.{n}"], dtype="<f8") for n in names]
    head_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(head_bytes)))
        fh.write(head_bytes)
        for blob in blobs:
            fh.write(blob.tobytes())
    os.replace(tmp, path)


def read_checkpoint(path):
    """Raw header + arrays, no model construction."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CKPT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for name, shape in header["params"] + header["buffers"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise CheckpointError(f"{path}: truncated at array {name!r}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        opt_state = None
        if header["optimizer"] is not None:
            moments = {}
            for key in ("m", "v"):
                for name in header["optimizer"]["order"]:
                    shape = dict((n, s) for n, s in header["params"])[name]
                    count = int(np.prod(shape)) if shape else 1
                    buf = fh.read(count * 8)
                    if len(buf) != count * 8:
                        raise CheckpointError(f"{path}: truncated optimizer state for {name!r}")
                    moments[f"{key}.{name}"] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            opt_state = {"t": header["optimizer"]["t"], "moments": moments}
    return header, arrays, opt_state


def load_checkpoint(path):
    """Rebuild the model (and optimizer state) a checkpoint was saved from."""
    header, arrays, opt_state = read_checkpoint(path)
    cfg = BamConfig.from_dict(header["config"])
    model = SpliceLocalizer(cfg)
    own = dict(model.parameters())
    saved_params = [name for name, _ in header["params"]]
    if set(own) != set(saved_params):
        missing = set(own) - set(saved_params)
        extra = set(saved_params) - set(own)
        raise CheckpointError(f"parameter set mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
    for name in saved_params:
        if own[name].data.shape != arrays[name].shape:
            raise CheckpointError(f"{name}: shape {arrays[name].shape} != model shape {own[name].data.shape}")
        own[name].data = arrays[name]
    for name, _ in header["buffers"]:
        model.set_buffer(name, arrays[name])
    return model, header["meta"], opt_state


def load_matching_params(model, path):
    """Partial init: copy saved arrays whose name and shape match; returns
    (n_loaded, n_model_params)."""
    _, arrays, _ = read_checkpoint(path)
    own = model.parameters()
    loaded = 0
    for name, p in own:
        if name in arrays and arrays[name].shape == p.data.shape:
            p.data = arrays[name].copy()
            loaded += 1
    return loaded, len(own)
