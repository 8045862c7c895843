import csv
import subprocess
import sys

import numpy as np
import pytest

from luna_eeg.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(line for line in fh if not line.startswith("#")))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth", d / "data", "--montage", "tcp20", "-n", 12, "--seconds", 1.25, "--classes", 3,
               "--seed", 1) == 0
    assert run("pretrain", "--data", d / "data", "--out", d / "p.ckpt", "--steps", 3, "--batch-size", 4) == 0
    return d


def test_pretrain_outputs(workspace):
    rows = read_rows(workspace / "p.trace.csv")
    assert rows[0] == ["step", "l_rec_masked", "l_rec_visible", "l_spec", "lr"]
    assert len(rows) == 4


def test_pretrain_trace_reproducible(workspace, tmp_path):
    yml = tmp_path / "c.yaml"
    yml.write_text("precision: float64\n")
    for name in ("a", "b"):
        assert run("--config", yml, "pretrain", "--data", workspace / "data", "--out", tmp_path / f"{name}.ckpt",
                   "--steps", 3, "--batch-size", 4, "--seed", 5) == 0
    assert (tmp_path / "a.trace.csv").read_text() == (tmp_path / "b.trace.csv").read_text()
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_finetune_metrics(workspace):
    assert run("finetune", "--checkpoint", workspace / "p.ckpt", "--data", workspace / "data", "--classes", 3,
               "--out", workspace / "f.ckpt", "--steps", 4, "--batch-size", 4) == 0
    rows = read_rows(workspace / "f.metrics.csv")
    assert rows[0] == ["split", "metric", "value"]
    assert {r[0] for r in rows[1:]} == {"train", "val"}
    assert {r[1] for r in rows[1:]} >= {"accuracy", "balanced_accuracy", "auroc", "cohen_kappa", "weighted_f1"}


@pytest.mark.parametrize("ckpt", ["p.ckpt", "f.ckpt"])
def test_inspect_queries_rows_convex(workspace, ckpt, tmp_path):
    if not (workspace / ckpt).exists():
        test_finetune_metrics(workspace)
    out = tmp_path / "q.csv"
    assert run("inspect-queries", "--checkpoint", workspace / ckpt, "--segment", workspace / "data" / "000000.seg",
               "--out", out) == 0
    rows = read_rows(out)
    assert len(rows[0]) == 21 and rows[0][0] == "query"
    for r in rows[1:]:
        assert abs(sum(float(v) for v in r[1:]) - 1) <= 1e-6


def test_bench_rows(tmp_path):
    out = tmp_path / "b.csv"
    assert run("bench", "--out", out, "--preset", "tiny", "--grid", "2,4,8,16", "--patches", 3,
               "--models", "luna,full,alt_channels", "--plot", tmp_path / "b.gp") == 0
    rows = read_rows(out)[1:]
    for name in ("luna", "full", "alt_channels"):
        assert sum(r[0] == name for r in rows) == 4
    assert (tmp_path / "b.gp").read_text().startswith("set datafile")


def test_preprocess(tmp_path):
    assert run("synth", tmp_path / "raw", "--montage", "10-20", "-n", 2, "--seconds", 11) == 0
    assert run("preprocess", tmp_path / "raw", tmp_path / "pp", "--notch", 60, "--bipolar") == 0
    assert len(list((tmp_path / "pp").glob("*.seg"))) == 4


def test_exit_usage(tmp_path, capsys):
    assert run("bench", "--out", tmp_path / "x.csv", "--grid", "8,4") == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense_section: 1\n")
    assert run("--config", bad, "bench", "--out", tmp_path / "x.csv") == 1
    nan = tmp_path / "nan.yaml"
    nan.write_text("pretrain:\n  peak_lr: .nan\n")
    assert run("--config", nan, "pretrain", "--data", tmp_path, "--out", tmp_path / "x") == 1
    with pytest.raises(SystemExit) as info:
        run("pretrain")
    assert info.value.code == 1
    assert "luna" in capsys.readouterr().err


def test_exit_data(tmp_path, workspace, capsys):
    assert run("pretrain", "--data", tmp_path / "missing", "--out", tmp_path / "x.ckpt") == 2
    trunc = tmp_path / "t"
    trunc.mkdir()
    (trunc / "montage.txt").write_bytes((workspace / "data" / "montage.txt").read_bytes())
    data = (workspace / "data" / "000000.seg").read_bytes()
    (trunc / "000000.seg").write_bytes(data[:-10])
    assert run("pretrain", "--data", trunc, "--out", tmp_path / "x.ckpt") == 2
    assert "byte offset" in capsys.readouterr().err


def test_exit_divergence(tmp_path, workspace, capsys):
    yml = tmp_path / "c.yaml"
    yml.write_text("pretrain:\n  peak_lr: 1e30\n  min_lr: 0\n  warmup_steps: 0\n  grad_clip: 1e30\n")
    assert run("--config", yml, "pretrain", "--data", workspace / "data", "--out", tmp_path / "x.ckpt",
               "--steps", 5) == 3
    assert "diverged" in capsys.readouterr().err


def test_console_script_and_env(tmp_path, monkeypatch):
    yml = tmp_path / "c.yaml"
    yml.write_text("bench:\n  grid: [4, 8]\n  preset: tiny\n  models: [luna]\n")
    env = {"LUNA_CONFIG": str(yml), "PATH": "/usr/bin:/bin"}
    proc = subprocess.run([sys.executable, "-m", "luna_eeg.cli", "bench", "--out", str(tmp_path / "o.csv")],
                          env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert len(read_rows(tmp_path / "o.csv")) == 3
