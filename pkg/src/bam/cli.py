"""Command-line front door.

Subcommands: gen-data, train, eval, ablate, gradcheck, report. Exit codes:
0 success, 1 runtime failure (single-line diagnostic on stderr), 2 usage
error (argparse). The BAM_SEED environment variable overrides the config
seed wherever one is used.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import gradcheck as gradcheck_mod
from .config import BamConfig, ConfigError, VARIANTS, apply_overrides, preset
from .labeling import frame_labels_for, write_label_dump
from .metrics import write_reports
from .model import evaluate, load_checkpoint, train
from .synth import generate_corpus, load_corpus

ABLATE_CSV_HEADER = (
    "variant,seed,epochs,loc_eer,loc_f1,loc_precision,loc_recall,"
    "bnd_eer,bnd_f1,bnd_precision,bnd_recall"
)


def _env_seed():
    raw = os.environ.get("BAM_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"BAM_SEED must be an integer, got {raw!r}") from None


def _parse_range(text, name):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise ConfigError(f"--{name} wants lo:hi, got {text!r}") from None
    return lo, hi


def _load_config(args):
    """Config resolution order: preset/file, then --set overrides, then BAM_SEED."""
    spec = getattr(args, "config", None) or "desk"
    if spec in ("desk", "paper"):
        cfg = preset(spec)
    else:
        cfg = BamConfig.load(spec)
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    env = _env_seed()
    if env is not None:
        cfg = cfg.replace(seed=env)
    return cfg


def _check_corpus_matches(corpus, cfg):
    rates = {r.sample_rate for r in corpus.records}
    if cfg.frontend == "encoder" and rates and rates != {cfg.sample_rate}:
        raise ConfigError(
            f"corpus sample rate {sorted(rates)} does not match config {cfg.sample_rate}"
        )
    if cfg.frontend == "external" and not cfg.features_dir:
        raise ConfigError("external frontend requires features_dir (use --set features_dir=...)")


def _fmt(x):
    return f"{x:.6f}"


# -- subcommands ---------------------------------------------------------


def cmd_gen_data(args):
    seed = args.seed
    if seed is None:
        env = _env_seed()
        seed = env if env is not None else 0
    corpus = generate_corpus(
        args.out,
        args.n_utts,
        sample_rate=args.sample_rate,
        duration_range=_parse_range(args.duration, "duration"),
        spoof_ratio_range=_parse_range(args.spoof_ratio, "spoof-ratio"),
        seed=seed,
        crossfade=args.crossfade,
    )
    counts = {s: len(corpus.split(s)) for s in ("train", "dev", "eval")}
    print(f"wrote {len(corpus)} utterances to {args.out} (splits {counts})")
    if args.label_dump:
        items = [(r.id, frame_labels_for(r, args.label_resolution)) for r in corpus.records]
        write_label_dump(args.label_dump, items)
        print(f"label dump ({args.label_resolution:g} ms) at {args.label_dump}")
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    corpus = load_corpus(args.corpus)
    _check_corpus_matches(corpus, cfg)
    os.makedirs(args.out, exist_ok=True)
    cfg.save(os.path.join(args.out, "config.json"))
    ckpt_path, entries, _ = train(
        corpus, cfg, args.out, quiet=args.quiet, init_from=args.init_from
    )
    best = min(entries, key=lambda e: e["dev_eer"])
    print(
        f"trained {cfg.variant} for {cfg.epochs} epochs; "
        f"best dev eer {best['dev_eer']:.4f} at epoch {best['epoch']}; "
        f"checkpoint {ckpt_path}"
    )
    return 0


def cmd_eval(args):
    model, meta, _ = load_checkpoint(args.ckpt)
    env = _env_seed()
    if env is not None:
        model.cfg = model.cfg.replace(seed=env)
    corpus = load_corpus(args.corpus)
    records = corpus.split(args.split)
    if not records:
        raise ConfigError(f"split {args.split!r} is empty in {args.corpus}")
    resolutions = None
    if args.resolutions:
        resolutions = [float(v) for v in args.resolutions.split(",") if v != ""]
    reports = evaluate(
        model,
        records,
        corpus.root,
        resolutions=resolutions,
        threshold=args.threshold,
        per_utterance=args.per_utterance,
    )
    os.makedirs(args.out, exist_ok=True)
    json_path = os.path.join(args.out, "report.json")
    csv_path = os.path.join(args.out, "report.csv")
    write_reports(reports, json_path=json_path, csv_path=csv_path)
    for r in reports:
        print(
            f"{r.resolution_ms:g} ms {r.task:12s} eer {r.eer:.4f}  f1 {r.f1:.4f}  "
            f"p {r.precision:.4f}  r {r.recall:.4f}"
        )
    print(f"reports at {json_path} and {csv_path}")
    return 0


def cmd_ablate(args):
    cfg = _load_config(args)
    corpus = load_corpus(args.corpus)
    variants = [v for v in args.variants.split(",") if v != ""]
    seeds = [int(v) for v in args.seeds.split(",") if v != ""]
    if not variants or not seeds:
        raise ConfigError("ablate needs at least one variant and one seed")
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for variant in variants:
        for seed in seeds:
            run_cfg = cfg.replace(variant=variant, seed=seed, epochs=args.epochs)
            _check_corpus_matches(corpus, run_cfg)
            run_dir = os.path.join(args.out, f"{run_cfg.variant}_seed{seed}")
            _, _, model = train(corpus, run_cfg, run_dir, quiet=args.quiet)
            reports = evaluate(model, corpus.split("eval"), corpus.root)
            loc = reports[0]
            bnd = reports[1] if len(reports) > 1 else None
            row = [run_cfg.variant, str(seed), str(args.epochs),
                   _fmt(loc.eer), _fmt(loc.f1), _fmt(loc.precision), _fmt(loc.recall)]
            row += ["", "", "", ""] if bnd is None else [
                _fmt(bnd.eer), _fmt(bnd.f1), _fmt(bnd.precision), _fmt(bnd.recall)]
            rows.append(row)
            bnd_note = "" if bnd is None else f"  bnd eer {bnd.eer:.4f}"
            print(f"{run_cfg.variant:9s} seed {seed}  loc eer {loc.eer:.4f}{bnd_note}", flush=True)
    csv_path = os.path.join(args.out, "ablation.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(ABLATE_CSV_HEADER + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    print(f"ablation table at {csv_path}")
    return 0


def cmd_gradcheck(args):
    seed = args.seed
    env = _env_seed()
    if env is not None:
        seed = env
    results = gradcheck_mod.run_all(seed=seed, corrupt=args.corrupt)
    print(gradcheck_mod.format_report(results))
    bad = [r for r in results if not r.ok]
    if bad:
        print(f"gradcheck failed: {', '.join(f'{r.module}.{r.name}' for r in bad)}", file=sys.stderr)
        return 1
    return 0


def _median(values):
    return float(np.median(np.asarray(values, dtype=np.float64)))


def _report_ablation(path):
    with open(path, "r", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty ablation table")
    by_variant = {}
    for row in rows:
        by_variant.setdefault(row["variant"], []).append(row)
    print(f"{'variant':<10} {'runs':>4} {'median loc eer':>15} {'median bnd eer':>15}")
    loc_med, bnd_med = {}, {}
    for variant, group in by_variant.items():
        loc_med[variant] = _median([float(r["loc_eer"]) for r in group])
        bnd_vals = [float(r["bnd_eer"]) for r in group if r["bnd_eer"] != ""]
        bnd_med[variant] = _median(bnd_vals) if bnd_vals else None
        bnd_txt = f"{bnd_med[variant]:.4f}" if bnd_med[variant] is not None else "-"
        print(f"{variant:<10} {len(group):>4} {loc_med[variant]:>15.4f} {bnd_txt:>15}")
    core = ("bfa_be", "fa_be", "fa", "baseline")
    if all(v in loc_med for v in core):
        m = [loc_med[v] for v in core]
        ordered = m[0] <= m[1] <= m[2] <= m[3]
        print(
            f"localization ordering bfa_be <= fa_be <= fa <= baseline: "
            f"{'holds' if ordered else 'VIOLATED'}; "
            f"bfa_be beats baseline by {m[3] - m[0]:.4f}"
        )
    heads = ("bfa_be", "inter", "intra", "fc")
    if all(bnd_med.get(v) is not None for v in heads):
        be, inter, intra, fc = (bnd_med[v] for v in heads)
        ordered = be <= min(inter, intra) <= fc
        print(
            f"boundary ordering be <= min(inter, intra) <= fc: "
            f"{'holds' if ordered else 'VIOLATED'}"
        )


def _report_eval(path):
    with open(path, "r", encoding="utf-8") as fh:
        rows = json.load(fh)
    print(f"{'resolution':>10} {'task':<12} {'eer':>8} {'f1':>8} {'precision':>10} {'recall':>8}")
    for r in rows:
        print(
            f"{r['resolution_ms']:>8g}ms {r['task']:<12} {r['eer']:>8.4f} {r['f1']:>8.4f} "
            f"{r['precision']:>10.4f} {r['recall']:>8.4f}"
        )


def cmd_report(args):
    if not os.path.exists(args.path):
        raise ConfigError(f"no such report file: {args.path}")
    if args.path.endswith(".json"):
        _report_eval(args.path)
    else:
        _report_ablation(args.path)
    return 0


# -- parser ---------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="bam", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic spliced corpus")
    g.add_argument("--out", required=True, help="output corpus directory")
    g.add_argument("--n-utts", type=int, default=600)
    g.add_argument("--seed", type=int, default=None, help="default 0 (or BAM_SEED)")
    g.add_argument("--sample-rate", type=int, default=8000)
    g.add_argument("--duration", default="1.6:4.0", help="seconds, lo:hi")
    g.add_argument("--spoof-ratio", default="0.2:0.6", help="spoofed fraction, lo:hi")
    g.add_argument("--crossfade", type=int, default=0, help="splice cross-fade in samples")
    g.add_argument("--label-dump", default=None, help="also write a frame-label JSONL here")
    g.add_argument("--label-resolution", type=float, default=20.0, help="dump resolution in ms")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train one model variant")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config", default="desk", help="preset name (desk, paper) or JSON path")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    t.add_argument("--init-from", default=None, help="warm-start checkpoint")
    t.add_argument("--quiet", action="store_true", help="suppress per-epoch lines")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--out", required=True, help="directory for report.json / report.csv")
    e.add_argument("--split", default="eval")
    e.add_argument("--resolutions", default=None, help="comma list of ms, e.g. 20,40,80,160,320,640")
    e.add_argument("--threshold", type=float, default=None, help="decision threshold for P/R/F1")
    e.add_argument("--per-utterance", action="store_true", help="mean per-utterance EER instead of pooled")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="train variant x seed grid, emit one CSV")
    a.add_argument("--corpus", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config", default="desk", help="preset name or JSON path")
    a.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    a.add_argument("--variants", default=",".join(VARIANTS))
    a.add_argument("--seeds", default="1,2,3")
    a.add_argument("--epochs", type=int, default=30)
    a.add_argument("--quiet", action="store_true")
    a.set_defaults(fn=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference verification of all gradients")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--corrupt", default=None, metavar="OP",
                   help="testing hook: corrupt one op's backward rule; the run must fail")
    c.set_defaults(fn=cmd_gradcheck)

    r = sub.add_parser("report", help="summarize an ablation CSV or eval report JSON")
    r.add_argument("path")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # single-line diagnostic, exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
