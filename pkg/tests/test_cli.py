"""Operator surface: exit codes, determinism, seed precedence, and the
shapes of the files each subcommand leaves behind."""

import csv
import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from bam.cli import ABLATE_CSV_HEADER
from bam.config import preset
from bam.model import SpliceLocalizer, save_checkpoint

ENV = {**os.environ, "BAM_BACKEND": "numpy"}
ENV.pop("BAM_SEED", None)


def run_cli(*args, env=None, timeout=600):
    return subprocess.run(
        [sys.executable, "-m", "bam.cli", *args],
        capture_output=True,
        text=True,
        env=env or ENV,
        timeout=timeout,
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


@pytest.fixture(scope="module")
def cli_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_corpus")
    res = run_cli("gen-data", "--out", str(root), "--n-utts", "24", "--seed", "5")
    assert res.returncode == 0, res.stderr
    return str(root)


@pytest.fixture(scope="module")
def trained_run(cli_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("train_run")
    res = run_cli(
        "train",
        "--corpus",
        cli_corpus,
        "--out",
        str(out),
        "--set",
        "epochs=1",
        "--quiet",
    )
    assert res.returncode == 0, res.stderr
    return str(out)


# -- exit codes ----------------------------------------------------------------


def test_missing_out_is_usage_error():
    assert run_cli("gen-data", "--n-utts", "4").returncode == 2


def test_unknown_subcommand_is_usage_error():
    assert run_cli("frobnicate").returncode == 2


def test_runtime_failure_is_exit_one(tmp_path):
    res = run_cli("train", "--corpus", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o"))
    assert res.returncode == 1
    assert "error:" in res.stderr


def test_bad_override_is_exit_one(cli_corpus, tmp_path):
    res = run_cli(
        "train", "--corpus", cli_corpus, "--out", str(tmp_path / "o"), "--set", "no_such_key=3"
    )
    assert res.returncode == 1


# -- gen-data ----------------------------------------------------------------


def test_gen_data_deterministic(tmp_path):
    for name in ("a", "b"):
        res = run_cli("gen-data", "--out", str(tmp_path / name), "--n-utts", "10", "--seed", "1")
        assert res.returncode == 0, res.stderr
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")


def test_gen_data_seed_env_matches_flag(tmp_path):
    res = run_cli("gen-data", "--out", str(tmp_path / "flag"), "--n-utts", "6", "--seed", "9")
    assert res.returncode == 0
    env = dict(ENV, BAM_SEED="9")
    res2 = run_cli("gen-data", "--out", str(tmp_path / "env"), "--n-utts", "6", env=env)
    assert res2.returncode == 0
    assert _tree_digest(tmp_path / "flag") == _tree_digest(tmp_path / "env")


def test_gen_data_zero_spoof_ratio(tmp_path):
    out = tmp_path / "genuine"
    res = run_cli(
        "gen-data", "--out", str(out), "--n-utts", "5", "--seed", "2", "--spoof-ratio", "0:0"
    )
    assert res.returncode == 0
    for line in (out / "manifest.jsonl").read_text().splitlines():
        assert len(json.loads(line)["spans"]) == 1


def test_gen_data_label_dump(tmp_path):
    out = tmp_path / "dump"
    res = run_cli(
        "gen-data",
        "--out",
        str(out),
        "--n-utts",
        "4",
        "--seed",
        "3",
        "--label-dump",
        str(out / "labels.jsonl"),
    )
    assert res.returncode == 0
    lines = (out / "labels.jsonl").read_text().splitlines()
    assert len(lines) == 4
    assert {"id", "resolution_ms", "Y", "B"} <= set(json.loads(lines[0]))


# -- train / eval ----------------------------------------------------------------


def test_train_writes_artifacts(trained_run):
    assert os.path.exists(os.path.join(trained_run, "best.ckpt"))
    assert os.path.exists(os.path.join(trained_run, "config.json"))
    log = [json.loads(s) for s in open(os.path.join(trained_run, "train_log.jsonl"))]
    assert len(log) == 1 and {"epoch", "lr", "train_loss", "dev_eer", "dev_f1"} == set(log[0])


def test_train_seed_env_override(cli_corpus, tmp_path):
    out = tmp_path / "seeded"
    env = dict(ENV, BAM_SEED="9")
    res = run_cli(
        "train", "--corpus", cli_corpus, "--out", str(out), "--set", "epochs=1", env=env
    )
    assert res.returncode == 0, res.stderr
    assert json.loads((out / "config.json").read_text())["seed"] == 9


def test_eval_emits_reports(cli_corpus, trained_run, tmp_path):
    out = tmp_path / "eval"
    res = run_cli(
        "eval",
        "--corpus",
        cli_corpus,
        "--ckpt",
        os.path.join(trained_run, "best.ckpt"),
        "--out",
        str(out),
        "--resolutions",
        "160,320",
    )
    assert res.returncode == 0, res.stderr
    with open(out / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["resolution_ms"], r["task"]) for r in rows] == [
        ("160", "authenticity"),
        ("160", "boundary"),
        ("320", "authenticity"),
        ("320", "boundary"),
    ]
    objs = json.loads((out / "report.json").read_text())
    assert len(objs) == 4 and all("num_frames" in o for o in objs)


def test_eval_fresh_init_is_chance_level(cli_corpus, tmp_path):
    """An untrained model has learned nothing: EER sits at chance, 0.5 +- 0.15."""
    cfg = preset("desk").replace(seed=123)
    ckpt = str(tmp_path / "fresh.ckpt")
    save_checkpoint(ckpt, SpliceLocalizer(cfg))
    out = tmp_path / "eval"
    res = run_cli("eval", "--corpus", cli_corpus, "--ckpt", ckpt, "--out", str(out))
    assert res.returncode == 0, res.stderr
    objs = json.loads((out / "report.json").read_text())
    eer = [o for o in objs if o["task"] == "authenticity"][0]["eer"]
    assert 0.35 <= eer <= 0.65, eer


# -- ablate ----------------------------------------------------------------


def test_ablate_row_count_and_header(cli_corpus, tmp_path):
    out = tmp_path / "ablate"
    res = run_cli(
        "ablate",
        "--corpus",
        cli_corpus,
        "--out",
        str(out),
        "--variants",
        "baseline,fa,fa_be,bfa_be",
        "--seeds",
        "1,2,3",
        "--epochs",
        "1",
        "--quiet",
        timeout=1200,
    )
    assert res.returncode == 0, res.stderr
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0] == ABLATE_CSV_HEADER
    assert len(lines) == 1 + 12  # one row per variant per seed
    rows = list(csv.DictReader(lines))
    assert [r["variant"] for r in rows] == ["baseline"] * 3 + ["fa"] * 3 + ["fa_be"] * 3 + ["bfa_be"] * 3
    for r in rows:
        if r["variant"] in ("baseline", "fa"):
            assert r["bnd_eer"] == ""
        else:
            assert 0.0 <= float(r["bnd_eer"]) <= 1.0


def test_ablate_rejects_unknown_variant(cli_corpus, tmp_path):
    res = run_cli(
        "ablate", "--corpus", cli_corpus, "--out", str(tmp_path / "x"), "--variants", "bogus"
    )
    assert res.returncode == 1
    assert "variant" in res.stderr


# -- gradcheck ----------------------------------------------------------------


def test_gradcheck_passes():
    res = run_cli("gradcheck", timeout=300)
    assert res.returncode == 0, res.stderr
    assert "all gradient checks passed" in res.stdout


def test_gradcheck_corrupted_backward_fails():
    res = run_cli("gradcheck", "--corrupt", "selu", timeout=300)
    assert res.returncode == 1
    assert "tensor_core.selu" in res.stderr + res.stdout


# -- report ----------------------------------------------------------------


def test_report_renders_eval_json(cli_corpus, trained_run, tmp_path):
    out = tmp_path / "eval"
    run_cli(
        "eval",
        "--corpus",
        cli_corpus,
        "--ckpt",
        os.path.join(trained_run, "best.ckpt"),
        "--out",
        str(out),
    )
    res = run_cli("report", str(out / "report.json"))
    assert res.returncode == 0
    assert "authenticity" in res.stdout


def test_report_renders_ablation_csv(cli_corpus, tmp_path):
    out = tmp_path / "ab"
    run_cli(
        "ablate",
        "--corpus",
        cli_corpus,
        "--out",
        str(out),
        "--variants",
        "baseline,bfa_be",
        "--seeds",
        "1",
        "--epochs",
        "1",
        "--quiet",
        timeout=900,
    )
    res = run_cli("report", str(out / "ablation.csv"))
    assert res.returncode == 0
    assert "median" in res.stdout


def test_report_missing_file_fails():
    res = run_cli("report", "/definitely/not/here.json")
    assert res.returncode == 1
