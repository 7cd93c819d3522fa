"""End-to-end command-line flows on a tiny dataset."""
import json

import numpy as np
import pytest

from lnln import datasets
from lnln.cli import build_parser, main

TINY_GEN = ["gen-data", "--n-train", "48", "--n-valid", "12", "--n-test",
            "16", "--seq-len", "5", "--dim", "6", "--seed", "11"]

TINY_SET = [
    "--set", "model.tokens=2", "--set", "model.width=8",
    "--set", "model.heads=2", "--set", "model.ffn_mult=2",
    "--set", "model.fusion_layers=2", "--set", 'model.dtype="float32"',
    "--set", "train.epochs=2", "--set", "train.batch_size=16",
    "--set", "train.lr=1e-3", "--set", "train.val_rates=[0.0, 0.5]",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "tiny.lnln"
    assert main(TINY_GEN + ["--out", str(data)]) == 0
    train_dir = root / "run"
    assert main([
        "train", "--data", str(data), "--seeds", "5",
        "--out-dir", str(train_dir), *TINY_SET,
    ]) == 0
    return root, data, train_dir / "seed-5" / "best_mae.npz"


def test_gen_data_writes_container_and_manifest(workspace):
    root, data, _ = workspace
    cont = datasets.load_dataset(data)
    assert cont.header.split_sizes == {"train": 48, "valid": 12, "test": 16}
    manifest = json.loads((root / "tiny.lnln.manifest.json").read_text())
    assert manifest["command"] == "gen-data"
    assert manifest["config"]["params"]["seed"] == 11
    assert "versions" in manifest
    assert "timestamp" not in json.dumps(manifest)


def test_gen_data_manifest_replay_is_byte_identical(workspace, tmp_path):
    root, data, _ = workspace
    replay = tmp_path / "copy.lnln"
    assert main([
        "gen-data", "--from-manifest",
        str(root / "tiny.lnln.manifest.json"), "--out", str(replay),
    ]) == 0
    assert replay.read_bytes() == data.read_bytes()


def test_train_emits_artifacts(workspace):
    root, _, ckpt = workspace
    seed_dir = ckpt.parent
    assert ckpt.exists()
    assert (seed_dir / "best_acc2.npz").exists()
    history = json.loads((seed_dir / "history.json").read_text())
    assert len(history) == 2
    assert {"epoch", "lr", "train_loss", "val_mae", "val_acc2"} <= set(
        history[0]
    )
    summary = json.loads((seed_dir.parent / "summary.json").read_text())
    assert summary["5"]["aborted"] is False
    manifest = json.loads((seed_dir.parent / "manifest.json").read_text())
    assert manifest["config"]["params"]["run_config"]["model"]["width"] == 8
    assert "inputs" in manifest


def test_eval_reports_match_direct_computation(workspace, tmp_path, capsys):
    _, data, ckpt = workspace
    out = tmp_path / "eval"
    assert main([
        "eval", "--data", str(data), "--checkpoint", str(ckpt),
        "--rate", "0.3", "--out-dir", str(out),
    ]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["params"]["rate"] == 0.3
    assert 0.0 <= report["metrics"]["acc2_negnonneg"] <= 1.0
    table = capsys.readouterr().out
    assert "MAE" in table and "Acc-7" in table


def test_sweep_flow_and_replay(workspace, tmp_path):
    _, data, ckpt = workspace
    out1 = tmp_path / "s1"
    args = ["sweep", "--data", str(data), "--checkpoint", str(ckpt),
            "--rates", "0.0", "0.4", "--seeds", "3", "4"]
    assert main(args + ["--out-dir", str(out1)]) == 0
    blob = json.loads((out1 / "sweep.json").read_text())
    assert blob["rates"] == [0.0, 0.4]
    assert len(blob["cells"]) == 4
    assert (out1 / "sweep.csv").read_text().count("\n") == 5  # header + cells

    out2 = tmp_path / "s2"
    assert main([
        "sweep", "--from-manifest", str(out1 / "manifest.json"),
        "--out-dir", str(out2),
    ]) == 0
    for name in ("sweep.json", "sweep.txt", "sweep.csv"):
        assert (out2 / name).read_bytes() == (out1 / name).read_bytes()


def test_modality_missing_flow(workspace, tmp_path, capsys):
    _, data, ckpt = workspace
    out = tmp_path / "mm"
    assert main([
        "modality-missing", "--data", str(data), "--checkpoint", str(ckpt),
        "--missing", "l", "--missing", "none", "--seeds", "2",
        "--out-dir", str(out),
    ]) == 0
    blob = json.loads((out / "modality_missing.json").read_text())
    assert [r["missing"] for r in blob["results"]] == [["l"], []]
    assert "missing=none" in capsys.readouterr().out


def test_grad_check_smoke(tmp_path, capsys):
    out = tmp_path / "gc"
    assert main([
        "grad-check", "--trials", "2", "--seed", "3", "--max-coords", "1",
        "--out-dir", str(out),
    ]) == 0
    blob = json.loads((out / "grad_check.json").read_text())
    assert blob["max_error"] < blob["tolerance"]
    assert "OK" in capsys.readouterr().out


def test_missing_required_arguments_exit_1(capsys):
    assert main(["eval", "--rate", "0.1"]) == 1
    assert "--data" in capsys.readouterr().err


def test_bad_rate_exits_1(workspace, capsys):
    _, data, ckpt = workspace
    assert main([
        "eval", "--data", str(data), "--checkpoint", str(ckpt),
        "--rate", "1.5",
    ]) == 1
    assert "rate" in capsys.readouterr().err


def test_missing_files_exit_1(workspace, capsys, tmp_path):
    _, data, ckpt = workspace
    assert main(["eval", "--data", "nope.lnln", "--checkpoint", str(ckpt),
                 "--out-dir", str(tmp_path)]) == 1
    assert main(["eval", "--data", str(data), "--checkpoint", "nope.npz",
                 "--out-dir", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "not found" in err


def test_manifest_command_mismatch_exits_1(workspace, tmp_path, capsys):
    root, _, _ = workspace
    assert main([
        "sweep", "--from-manifest", str(root / "tiny.lnln.manifest.json"),
        "--out-dir", str(tmp_path),
    ]) == 1
    assert "records command" in capsys.readouterr().err


def test_manifest_detects_changed_inputs(workspace, tmp_path, capsys):
    _, data, ckpt = workspace
    out1 = tmp_path / "e1"
    assert main([
        "eval", "--data", str(data), "--checkpoint", str(ckpt),
        "--rate", "0.0", "--out-dir", str(out1),
    ]) == 0
    # regenerate the container with a different seed in place
    assert main(TINY_GEN[:-1] + ["13", "--out", str(data)]) == 0
    assert main([
        "eval", "--from-manifest", str(out1 / "manifest.json"),
        "--out-dir", str(tmp_path / "e2"),
    ]) == 1
    assert "changed since" in capsys.readouterr().err


def test_parser_defaults():
    args = build_parser().parse_args(["gen-data", "--out", "x.lnln"])
    assert (args.n_train, args.n_valid, args.n_test) == (2000, 300, 300)
    assert (args.seq_len, args.dim, args.scheme) == (16, 20, "mosi")
    args = build_parser().parse_args(["sweep"])
    assert args.rates == [float(np.round(0.1 * i, 1)) for i in range(10)]
    assert args.seeds == [1111, 1112, 1113]
    args = build_parser().parse_args(["train", "--set", "a=1", "--set", "b=2"])
    assert args.set == ["a=1", "b=2"]
