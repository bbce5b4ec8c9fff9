"""End-to-end command-line runs on a temp workspace."""

import csv

import numpy as np
import pytest

from pufbnn.cli import main
from pufbnn.data import load_split, synthetic_digits, write_idx
from pufbnn.modelio import read_model, write_model


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, small_model):
    """Data dir with IDX files plus a trained model and device file."""
    root = tmp_path_factory.mktemp("cli")
    train = synthetic_digits(40, seed=7)
    test = synthetic_digits(25, seed=8)
    write_idx(train, root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte")
    write_idx(test, root / "t10k-images-idx3-ubyte.gz", root / "t10k-labels-idx1-ubyte.gz",
              compress=True)
    write_model(small_model, root / "model.bnnm")
    assert main(["device", "new", "--out", str(root / "dev.key"), "--seed", "5"]) == 0
    return root


def test_train_subcommand_writes_model(tmp_path, capsys):
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    train = synthetic_digits(30, seed=1)
    test = synthetic_digits(10, seed=2)
    write_idx(train, data_dir / "train-images-idx3-ubyte",
              data_dir / "train-labels-idx1-ubyte")
    write_idx(test, data_dir / "t10k-images-idx3-ubyte",
              data_dir / "t10k-labels-idx1-ubyte")
    out = tmp_path / "tiny.bnnm"
    code = main(["train", "--data-dir", str(data_dir), "--epochs", "1",
                 "--seed", "3", "--out", str(out)])
    assert code == 0
    model = read_model(out)
    assert model.shape == (784, 512, 512, 512, 10)
    assert "test accuracy" in capsys.readouterr().out


def test_train_usage_error_without_data_source(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--out", "x.bnnm"])
    assert exc.value.code == 2


def test_protect_and_verify_roundtrip(workspace, capsys):
    out = workspace / "model.bnnp"
    code = main(["protect", "--model", str(workspace / "model.bnnm"),
                 "--device", str(workspace / "dev.key"),
                 "--challenge", "deadbeef", "--scheme", "rows",
                 "--layers", "all", "--out", str(out)])
    assert code == 0
    code = main(["verify", "--model", str(out), "--device", str(workspace / "dev.key"),
                 "--data-dir", str(workspace), "--plain", str(workspace / "model.bnnm"),
                 "--backend", "both"])
    assert code == 0
    output = capsys.readouterr().out
    assert "OK [digital]" in output and "OK [crossbar]" in output


def test_verify_fails_on_tampered_model(workspace, capsys):
    pm_path = workspace / "tamper.bnnp"
    main(["protect", "--model", str(workspace / "model.bnnm"),
          "--device", str(workspace / "dev.key"), "--challenge", "0abc",
          "--scheme", "cols", "--layers", "1,2", "--out", str(pm_path)])
    blob = bytearray(pm_path.read_bytes())
    # the file ends with [layer-3: 2048 weight bytes, 512 threshold bytes]
    # then [head: 209 bytes]; flip a stretch of layer-3 weight words
    start = len(blob) - (209 + 512 + 1024)
    for i in range(64):
        blob[start + i] ^= 0xFF
    pm_path.write_bytes(bytes(blob))
    code = main(["verify", "--model", str(pm_path), "--device", str(workspace / "dev.key"),
                 "--data-dir", str(workspace), "--plain", str(workspace / "model.bnnm")])
    assert code == 4
    assert "FAIL" in capsys.readouterr().out


def test_infer_protected_with_and_without_device(workspace, capsys):
    pm_path = workspace / "infer.bnnp"
    main(["protect", "--model", str(workspace / "model.bnnm"),
          "--device", str(workspace / "dev.key"), "--challenge", "aa",
          "--scheme", "rowinv-colswap", "--layers", "all", "--out", str(pm_path)])
    images = str(workspace / "t10k-images-idx3-ubyte.gz")
    capsys.readouterr()  # drain the protect output

    code = main(["infer", "--model", str(workspace / "model.bnnm"),
                 "--input", images, "--index", "0"])
    assert code == 0
    plain_class = int(capsys.readouterr().out.strip())

    code = main(["infer", "--model", str(pm_path), "--device",
                 str(workspace / "dev.key"), "--input", images, "--index", "0"])
    assert code == 0
    assert int(capsys.readouterr().out.strip()) == plain_class

    code = main(["infer", "--model", str(pm_path), "--input", images, "--index", "0"])
    captured = capsys.readouterr()
    assert code == 0
    assert "warning" in captured.err.lower()


def test_infer_crossbar_backend_matches_digital(workspace, capsys):
    images = str(workspace / "t10k-images-idx3-ubyte.gz")
    main(["infer", "--model", str(workspace / "model.bnnm"), "--input", images,
          "--index", "3"])
    digital = capsys.readouterr().out.strip()
    main(["infer", "--model", str(workspace / "model.bnnm"), "--input", images,
          "--index", "3", "--backend", "crossbar", "--g-on", "10", "--g-off", "1"])
    assert capsys.readouterr().out.strip() == digital


def test_attack_eval_writes_csv(workspace, capsys):
    pm_path = workspace / "attack.bnnp"
    main(["protect", "--model", str(workspace / "model.bnnm"),
          "--device", str(workspace / "dev.key"), "--challenge", "bb",
          "--scheme", "rows", "--layers", "all", "--out", str(pm_path)])
    out = workspace / "report.csv"
    code = main(["attack-eval", "--model", str(pm_path), "--data-dir", str(workspace),
                 "--device", str(workspace / "dev.key"), "--seeds", "2",
                 "--seed", "0", "--out", str(out)])
    assert code == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["attack"] == "no_key"
    assert float(rows[0]["accuracy_mean"]) <= 0.5
    assert any(r["attack"].startswith("wrong_key_1_") for r in rows)


def test_attack_eval_deterministic(workspace):
    pm_path = workspace / "det.bnnp"
    main(["protect", "--model", str(workspace / "model.bnnm"),
          "--device", str(workspace / "dev.key"), "--challenge", "cc",
          "--scheme", "cols", "--layers", "all", "--out", str(pm_path)])
    a, b = workspace / "a.csv", workspace / "b.csv"
    args = ["attack-eval", "--model", str(pm_path), "--data-dir", str(workspace),
            "--device", str(workspace / "dev.key"), "--seeds", "2", "--seed", "4"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_tables_subcommand(workspace, capsys):
    out = workspace / "tables.csv"
    code = main(["tables", "--model", str(workspace / "model.bnnm"),
                 "--device", str(workspace / "dev.key"), "--data-dir", str(workspace),
                 "--seeds", "1", "--out", str(out)])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "scheme: rows" in stdout and "392+784" in stdout
    with open(out) as fh:
        assert len(list(csv.DictReader(fh))) == 15


def test_missing_file_gives_exit_3(capsys):
    code = main(["infer", "--model", "no-such.bnnm", "--input", "also-missing.idx"])
    assert code == 3
    assert "error" in capsys.readouterr().err


def test_bad_model_format_gives_exit_3(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.bnnm"
    bad.write_bytes(b"JUNKJUNKJUNK")
    images = str(workspace / "t10k-images-idx3-ubyte.gz")
    assert main(["infer", "--model", str(bad), "--input", images]) == 3


def test_usage_error_on_unknown_scheme(workspace):
    with pytest.raises(SystemExit) as exc:
        main(["protect", "--model", str(workspace / "model.bnnm"),
              "--device", str(workspace / "dev.key"), "--challenge", "aa",
              "--scheme", "bogus", "--out", "x.bnnp"])
    assert exc.value.code == 2


def test_device_file_size(workspace):
    assert (workspace / "dev.key").stat().st_size == 32


def test_dataset_loading_via_cli_paths(workspace):
    test = load_split(workspace, "test")
    assert len(test) == 250
    train = load_split(workspace, "train")
    assert len(train) == 400
