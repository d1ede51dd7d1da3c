import csv
import json

import numpy as np
import pytest

from sparsevit import tensor as T
from sparsevit.checkpoint import load_checkpoint
from sparsevit.cli import main

TINY_CFG = """\
# tiny model so every command runs in well under a second
model.image_size = 8
model.patch_size = 4
model.hidden_size = 16
model.mlp_size = 32
model.num_heads = 2
model.depth = 1
model.num_classes = 4
data.train_size = 32
data.test_size = 8
data.noise = 0.1
train.epochs = 2
train.batch_size = 16
sparse.enabled = true
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CFG)
    return str(path)


@pytest.fixture
def trained(tmp_path, cfg):
    out = tmp_path / "run1"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    return out


def test_train_outputs(trained):
    assert {p.name for p in trained.iterdir()} == {"model.spvt", "metrics.csv", "manifest.json"}
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["config"]["model.hidden_size"] == "16"
    assert manifest["config"]["sparse.lambda"] == repr(1 / 5)
    assert len(manifest["checkpoint_out"]) == 40
    assert len(manifest["epoch_seconds"]) == 2
    rows = list(csv.DictReader(open(trained / "metrics.csv")))
    assert [r["epoch"] for r in rows] == ["1", "2"]
    assert all(r["seconds"] == "" for r in rows)


def test_rerun_and_manifest_replay_are_identical(tmp_path, cfg, trained):
    again = tmp_path / "run2"
    assert main(["train", "--config", cfg, "--out", str(again)]) == 0
    replay = tmp_path / "run3"
    assert main(["train", "--config", str(trained / "manifest.json"), "--out", str(replay)]) == 0
    for run in (again, replay):
        assert (run / "metrics.csv").read_bytes() == (trained / "metrics.csv").read_bytes()
        assert (run / "model.spvt").read_bytes() == (trained / "model.spvt").read_bytes()


def test_seed_flag_changes_run(tmp_path, cfg, trained):
    other = tmp_path / "seed1"
    assert main(["train", "--config", cfg, "--seed", "1", "--out", str(other)]) == 0
    assert (other / "model.spvt").read_bytes() != (trained / "model.spvt").read_bytes()


def test_config_errors_exit_2(tmp_path, cfg, capsys):
    out = str(tmp_path / "x")
    assert main(["train", "--config", cfg, "--set", "sparse.position=foo", "--out", out]) == 2
    err = capsys.readouterr().err
    for name in ("similarity_score", "attention_weight", "weighted_value", "attention_output",
                 "mlp_gelu_input"):
        assert name in err
    assert main(["train", "--config", cfg, "--set", "model.dept=2", "--out", out]) == 2
    assert "model.dept" in capsys.readouterr().err
    assert main(["train", "--config", cfg]) == 2
    assert main(["frobnicate"]) == 2


def test_io_errors_exit_3(tmp_path, cfg, trained):
    missing = str(tmp_path / "nope.spvt")
    assert main(["eval", "--in", missing, "--config", cfg]) == 3
    assert main(["train", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 3
    bad = tmp_path / "bad.spvt"
    raw = bytearray((trained / "model.spvt").read_bytes())
    raw[50] ^= 0xFF
    bad.write_bytes(bytes(raw))
    assert main(["eval", "--in", str(bad), "--config", cfg]) == 3


def test_prune(tmp_path, cfg, trained, capsys):
    out = tmp_path / "pruned20.spvt"
    assert main(["prune", "--in", str(trained / "model.spvt"), "--ratio", "0.2",
                 "--out", str(out), "--config", cfg]) == 0
    record = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    pruned = load_checkpoint(out)
    n = pruned.numel()
    zeros = sum(int(np.sum(t.data == 0)) for t in pruned.values())
    assert record["n_zeroed"] == zeros >= int(0.2 * n)
    report = json.loads((tmp_path / "pruned20.report.jsonl").read_text())
    assert set(report["per_tensor"]) == set(pruned.names())
    manifest = json.loads((tmp_path / "pruned20.manifest.json").read_text())
    assert manifest["checkpoint_in"] != manifest["checkpoint_out"]


def test_prune_ratio_bounds(tmp_path, cfg, trained):
    src = str(trained / "model.spvt")
    assert main(["prune", "--in", src, "--ratio", "1.5", "--out", str(tmp_path / "p")]) == 2
    assert main(["prune", "--in", src, "--ratio", "0", "--out", str(tmp_path / "p")]) == 2
    near = tmp_path / "near.spvt"
    assert main(["prune", "--in", src, "--ratio", "0.999999", "--out", str(near)]) == 0
    params = load_checkpoint(near)
    assert sum(int(np.count_nonzero(t.data)) for t in params.values()) <= 1


def test_eval(tmp_path, cfg, trained, capsys):
    src = str(trained / "model.spvt")
    results = tmp_path / "results.csv"
    assert main(["eval", "--in", src, "--config", cfg, "--results", str(results)]) == 0
    first = capsys.readouterr().out
    assert main(["eval", "--in", src, "--config", cfg, "--results", str(results)]) == 0
    assert capsys.readouterr().out == first
    assert first.startswith("accuracy=")
    lines = results.read_text().splitlines()
    assert lines[0] == "checkpoint,split,accuracy" and len(lines) == 3
    # default config describes a different model
    assert main(["eval", "--in", src]) == 2


def test_sweep(tmp_path, cfg):
    out = tmp_path / "sw"
    assert main(["sweep", "--config", cfg, "--set", "sweep.seeds=0,1", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert len(rows) == 12
    assert [r["arm"] for r in rows] == ["sparse"] * 6 + ["baseline"] * 6
    assert sum(r["ratio"] != "0" for r in rows) == 10
    runs = list(csv.DictReader(open(out / "sweep_runs.csv")))
    assert len(runs) == 24
    md = (out / "sweep.md").read_text()
    table = [line.split("|")[1:-1] for line in md.splitlines() if line.startswith("| 0")]
    diffs = [float(cells[3]) for cells in table[1:]]
    mean_cell = float([line for line in md.splitlines() if "mean" in line][0].split("|")[-2])
    assert abs(mean_cell - np.mean(diffs)) < 1e-9
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seeds"] == [0, 1]
    assert {p.name for p in out.glob("metrics_*.csv")} == {
        "metrics_sparse_seed0.csv", "metrics_baseline_seed0.csv",
        "metrics_sparse_seed1.csv", "metrics_baseline_seed1.csv"}


def test_sweep_bad_ratio(tmp_path, cfg):
    assert main(["sweep", "--config", cfg, "--set", "sweep.ratios=0.1,1.2",
                 "--out", str(tmp_path)]) == 2


def test_gradcheck_passes(cfg, capsys):
    assert main(["gradcheck", "--config", cfg, "--samples", "2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5
    assert all(line.startswith("position=") and "max_rel_err=" in line for line in lines)


def test_gradcheck_catches_sabotaged_backward(cfg, capsys, monkeypatch):
    real_gelu = T.gelu

    def bad_gelu(x):
        out = real_gelu(x)
        node = out._node
        if node is not None:  # None under no_grad
            real_backward = node.backward_fn
            node.backward_fn = lambda g: tuple(1.1 * v for v in real_backward(g))
        return out

    monkeypatch.setattr(T, "gelu", bad_gelu)
    assert main(["gradcheck", "--config", cfg, "--samples", "2"]) == 1
    assert "attention_weight" in capsys.readouterr().err
