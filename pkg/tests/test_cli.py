import json

import numpy as np
import pytest
import yaml

from onet.checkpoint import load_checkpoint
from onet.cli import main
from onet.datapipe import load_manifest, read_pgm
from onet.datapipe.image import read_ppm
from onet.metrics import read_rows
from onet.optim import TrainLog

from fixtures import blob_manifest

TOY = {"model": {"input_size": 32, "base_channels": 2, "depth": 2}}


@pytest.fixture
def blobs(tmp_path):
    return blob_manifest(tmp_path / "data", n=4, size=32)


def write_config(path, cfg):
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_verify_table1_default(capsys):
    assert main(["shapes", "--verify-table1"]) == 0
    out = capsys.readouterr().out.splitlines()
    numbered = [l for l in out if l.split()[0].isdigit()]
    assert len(numbered) == 23 and all(" PASS " in l for l in numbered)


def test_verify_table1_unet_fails(capsys):
    assert main(["shapes", "--arch", "unet", "--verify-table1"]) == 1
    out = capsys.readouterr().out.splitlines()
    failed = [l.split()[0] for l in out if " FAIL " in l]
    assert failed == ["21"]


def test_verify_table1_non_default_config(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", TOY)
    assert main(["shapes", "--config", str(cfg), "--verify-table1"]) == 1
    assert "not applicable" in capsys.readouterr().out


def test_shapes_table(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", TOY)
    assert main(["shapes", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split() == ["input", "1x32x32"]
    assert "parameters:" in out


def test_gradcheck_tolerances(capsys):
    assert main(["gradcheck", "--tol", "1e-4"]) == 0
    assert main(["gradcheck", "--tol", "1e-12"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_unknown_subcommand_and_flag():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code != 0
    with pytest.raises(SystemExit) as e:
        main(["shapes", "--no-such-flag"])
    assert e.value.code != 0


def test_module_error_is_one_line(tmp_path, capsys):
    code = main(["preprocess", "--manifest", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 1
    assert err.count("\n") == 1 and "error" in err


def test_bad_config_key(tmp_path, blobs, capsys):
    cfg = write_config(tmp_path / "c.yaml", {"model": {"input_size": 32, "colour": "red"}})
    assert main(["train", "--manifest", str(blobs), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "colour" in capsys.readouterr().err


def test_preprocess_emits_pairs(tmp_path, blobs):
    out = tmp_path / "pre"
    assert main(["preprocess", "--manifest", str(blobs), "--out", str(out), "--size", "32"]) == 0
    ds = load_manifest(out / "manifest.csv")
    assert len(ds) == 4
    img = read_pgm(ds.samples[0].image)
    assert (img.width, img.height) == (32, 32)
    resolved = json.loads((out / "resolved-config.json").read_text())
    assert resolved["command"] == "preprocess" and resolved["data"]["size"] == 32


def test_augment_emits_count(tmp_path, blobs):
    out = tmp_path / "aug"
    assert main(["augment", "--manifest", str(blobs), "--out", str(out), "--count", "2", "--seed", "3",
                 "--size", "32"]) == 0
    ds = load_manifest(out / "manifest.csv")
    assert len(ds) == 8
    again = tmp_path / "aug2"
    main(["augment", "--manifest", str(blobs), "--out", str(again), "--count", "2", "--seed", "3", "--size", "32"])
    for s in ds:
        assert (again / s.image.name).read_bytes() == s.image.read_bytes()


def test_train_eval_infer_round(tmp_path, blobs, capsys):
    cfg = write_config(tmp_path / "c.yaml", TOY)
    run = tmp_path / "run"
    assert main(["train", "--manifest", str(blobs), "--config", str(cfg), "--out", str(run),
                 "--max-epochs", "3", "--stop-delta", "0", "--threads", "1"]) == 0
    log = TrainLog.read(run / "train_log.jsonl")
    assert len(log.records) == 3
    ckpt = load_checkpoint(run / "checkpoint.onet")
    assert ckpt.state.t == 3  # 4 samples, batch 4
    assert ckpt.config.input_size == 32

    ev = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(run / "checkpoint.onet"), "--manifest", str(blobs),
                 "--out", str(ev), "--tau", "0.3", "--min-area", "5"]) == 0
    rows = read_rows(ev / "eval.csv")
    assert len(rows) == 4
    assert "tau             0.3" in (ev / "summary.txt").read_text()
    assert read_ppm(ev / "overlays" / f"{rows[0].id}_overlay.ppm").shape == (32, 32, 3)

    inf = tmp_path / "inf"
    image = load_manifest(blobs).samples[0].image
    assert main(["infer", "--checkpoint", str(run / "checkpoint.onet"), "--image", str(image),
                 "--out", str(inf)]) == 0
    stem = image.stem
    for name in (f"{stem}_prob.pgm", f"{stem}_mask.pgm", f"{stem}_overlay.ppm", "resolved-config.json"):
        assert (inf / name).exists()


def test_resolved_config_reproduces_run(tmp_path, blobs):
    cfg = write_config(tmp_path / "c.yaml", {**TOY, "train": {"batch_size": 3, "stop_delta": 0.0}})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--manifest", str(blobs), "--config", str(cfg), "--out", str(a),
                 "--max-epochs", "2", "--seed", "7", "--threads", "1"]) == 0
    resolved = a / "resolved-config.json"
    assert main(["train", "--manifest", str(blobs), "--config", str(resolved), "--out", str(b),
                 "--threads", "1"]) == 0
    assert (a / "checkpoint.onet").read_bytes() == (b / "checkpoint.onet").read_bytes()
    la, lb = TrainLog.read(a / "train_log.jsonl"), TrainLog.read(b / "train_log.jsonl")
    assert la.losses() == lb.losses()


def test_train_abn_type_filter(tmp_path, blobs, capsys):
    cfg = write_config(tmp_path / "c.yaml", TOY)
    code = main(["train", "--manifest", str(blobs), "--config", str(cfg), "--out", str(tmp_path / "o"),
                 "--abn-type", "calc", "--max-epochs", "1"])
    assert code == 1
    assert "no train samples" in capsys.readouterr().err


def test_train_single_precision(tmp_path, blobs):
    cfg = write_config(tmp_path / "c.yaml", TOY)
    run = tmp_path / "run"
    assert main(["train", "--manifest", str(blobs), "--config", str(cfg), "--out", str(run),
                 "--max-epochs", "1", "--precision", "single"]) == 0
    ckpt = load_checkpoint(run / "checkpoint.onet")
    assert ckpt.params[0].dtype == np.float32


@pytest.mark.slow
def test_cli_overfit_toy_fixture(tmp_path, capsys):
    data = blob_manifest(tmp_path / "data", n=8, size=64)
    cfg = write_config(tmp_path / "c.yaml", {"model": {"input_size": 64, "base_channels": 4, "depth": 3}})
    run = tmp_path / "run"
    assert main(["train", "--manifest", str(data), "--config", str(cfg), "--out", str(run),
                 "--stop-delta", "0", "--max-epochs", "200", "--threads", "1"]) == 0
    assert len(TrainLog.read(run / "train_log.jsonl").records) <= 200
    ev = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(run / "checkpoint.onet"), "--manifest", str(data),
                 "--out", str(ev), "--no-overlays"]) == 0
    rows = read_rows(ev / "eval.csv")
    assert np.mean([r.dice for r in rows]) >= 0.90
