import json

import numpy as np
import pytest

from cocodesk.cli import run
from cocodesk.data import write_features_csv
from cocodesk.fusion import ScoreTable, write_keypoints

TRAIN = ["train", "--loss", "coco", "--dataset", "synth", "--epochs", "3", "--per-class", "20"]


def test_alpha_prints_both_forms(capsys):
    assert run(["alpha", "--classes", "10", "--target-loss", "1e-4"]) == 0
    out = capsys.readouterr().out.split()
    assert float(out[1]) == pytest.approx(5.7038, abs=1e-4)
    assert float(out[3]) == pytest.approx(4.0986, abs=1e-4)


def test_alpha_rejects_bad_k(capsys):
    assert run(["alpha", "--classes", "1"]) == 1


def test_unknown_flag_is_usage_error(capsys):
    assert run(["alpha", "--classes", "10", "--bogus"]) == 1
    err = capsys.readouterr()
    assert "--bogus" in err.err
    assert "--target-loss" in err.out + err.err


def test_train_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(TRAIN + ["--seed", "7", "--out", str(a)]) == 0
    assert run(TRAIN + ["--seed", "7", "--out", str(b)]) == 0
    for name in ("metrics.json", "features.csv", "checkpoint.bin"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    doc = json.loads((a / "metrics.json").read_text())
    assert doc["config"]["seed"] == 7 and len(doc["per_epoch"]) == 3
    assert set(doc["per_epoch"][0]) == {"epoch", "mean_loss", "train_accuracy"}


def test_config_file_and_flag_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# toy run\nepochs = 2\nloss = softmax\nseed = 3\n")
    monkeypatch.setenv("COCODESK_OUT", str(tmp_path / "env"))
    assert run(["train", "--config", str(cfg), "--per-class", "10", "--seed", "4"]) == 0
    doc = json.loads((tmp_path / "env" / "metrics.json").read_text())
    assert doc["config"]["epochs"] == 2
    assert doc["config"]["loss_kind"] == "softmax"
    assert doc["config"]["seed"] == 4
    cfg.write_text("colour = blue\n")
    assert run(["train", "--config", str(cfg)]) == 1


def test_divergence_exit_code(tmp_path):
    argv = TRAIN + ["--lr", "1e6", "--momentum", "0", "--out", str(tmp_path)]
    argv[2] = "softmax"
    with np.errstate(all="ignore"):
        assert run(argv) == 2


def test_gradcheck_command(tmp_path, capsys):
    assert run(["gradcheck", "--loss", "coco", "--seeds", "20", "--dims", "8",
                "--classes", "10", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "gradcheck.json").read_text())
    assert doc["results"]["coco"]["max_relative_error"] < 1e-5


def test_feature_commands(tmp_path):
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(30, 4)) + np.repeat(np.eye(4)[:3] * 3, 10, axis=0)
    labels = np.repeat([1, 2, 3], 10)
    path = tmp_path / "f.csv"
    write_features_csv(path, feats, labels)
    assert run(["pairs", "--features", str(path), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "pairs.json").read_text())["separation"] > 0.5
    assert (tmp_path / "histogram.csv").read_text().startswith("#")
    assert run(["verify", "--features", str(path), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "verify.json").read_text())["accuracy"] > 0.8
    write_features_csv(tmp_path / "p.csv", feats[::10], labels[::10])
    write_features_csv(tmp_path / "g.csv", feats[1::10], labels[1::10])
    write_features_csv(tmp_path / "d.csv", rng.normal(size=(20, 4)), np.zeros(20, int))
    assert run(["identify", "--probes", str(tmp_path / "p.csv"), "--gallery",
                str(tmp_path / "g.csv"), "--distractors", str(tmp_path / "d.csv"),
                "--counts", "5,20", "--trials", "3", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "identify.json").read_text())
    assert doc["distractor_counts"] == [5, 20]
    assert run(["pairs", "--features", str(tmp_path / "missing.csv")]) == 1


def test_fuse_and_align(tmp_path):
    rng = np.random.default_rng(1)
    ref = np.arange(1, 6)
    probe = rng.integers(1, 6, 20)
    same = probe[:, None] == ref[None, :]
    scores = np.stack([np.where(same, 0.7, 0.0) + 0.1 * rng.normal(size=same.shape),
                       rng.uniform(-1, 1, same.shape)])
    scores[1, 0, 0] = np.nan
    table = ScoreTable(["face", "body"], scores, ref, probe).to_json()
    (tmp_path / "val.json").write_text(json.dumps(table))
    assert run(["fuse", "--test", str(tmp_path / "val.json"), "--validation",
                str(tmp_path / "val.json"), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "fusion.json").read_text())
    assert doc["test_top1"] == 1.0
    (tmp_path / "cal.json").write_text(json.dumps(doc))
    assert run(["fuse", "--test", str(tmp_path / "val.json"), "--calibrations",
                str(tmp_path / "cal.json"), "--out", str(tmp_path / "again")]) == 0
    assert run(["fuse", "--test", str(tmp_path / "val.json")]) == 1

    p = rng.normal(size=(6, 2))
    q = p @ np.array([[2.0, 0.5], [0.0, 1.0]]).T + [3.0, -1.0]
    ids = [f"k{i}" for i in range(6)]
    write_keypoints(tmp_path / "src.csv", ids, p)
    write_keypoints(tmp_path / "dst.csv", ids, q)
    assert run(["align", "--source", str(tmp_path / "src.csv"), "--target",
                str(tmp_path / "dst.csv"), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "affine.json").read_text())["max_residual"] < 1e-10
    write_keypoints(tmp_path / "line.csv", ids, np.outer(np.arange(6.0), [1.0, 1.0]))
    assert run(["align", "--source", str(tmp_path / "line.csv"), "--target",
                str(tmp_path / "dst.csv"), "--out", str(tmp_path)]) == 1
