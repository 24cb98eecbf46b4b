import json

import numpy as np
import pytest

from pointseg.cli import main
from pointseg.fileformats import read_labels, read_raster, write_raster
from pointseg.validation import check_probability_raster

TRAIN_CFG = {"patch": 16, "batch": 2, "stride": 8, "width": 8, "depth": 2, "base_lr": 0.05,
             "max_iter": 4, "finetune_iter": 3}


def _json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    cfg = _json(root / "gen.json", {"height": 24, "width": 24, "n_scenes": 2, "seed": 4})
    assert main(["gen", "--config", cfg, "--out", str(root / "data")]) == 0
    return root / "data"


@pytest.fixture(scope="module")
def trained(scenes, tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = _json(root / "train.json", TRAIN_CFG)
    assert main(["train", "--config", cfg, "--data", str(scenes), "--out", str(root / "out")]) == 0
    return root / "out"


def test_gen_single_scene_is_reproducible(tmp_path, capsys):
    cfg = _json(tmp_path / "g.json", {"n_scenes": 1, "seed": 5})
    assert main(["gen", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["gen", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(files) == 3
    assert all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    assert '"n_points"' in capsys.readouterr().out


def test_gen_ten_scenes(tmp_path):
    cfg = _json(tmp_path / "g.json", {"n_scenes": 10, "height": 16, "width": 16})
    assert main(["gen", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    files = sorted(p.name for p in (tmp_path / "d").iterdir())
    assert len(files) == 30
    assert files[-1] == "scene_0009_points.crg"


@pytest.mark.parametrize("cfg, code", [({"k": 1}, 2), ({"colour": 3}, 2), ({"n_scenes": 0}, 2)])
def test_gen_config_errors(tmp_path, cfg, code):
    path = _json(tmp_path / "g.json", cfg)
    assert main(["gen", "--config", path, "--out", str(tmp_path / "d")]) == code


def test_gen_bad_json_and_missing_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"k": 3,\n "seed": }')
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "bad.json:2:" in capsys.readouterr().err
    assert main(["gen", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 3


def test_train_outputs(trained):
    lines = (trained / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 4 + 3
    rec = json.loads(lines[0])
    assert {"iter", "lr", "loss_seg", "loss_exp", "loss_con", "loss_total", "n_expanded"} <= set(rec)
    cfg = json.loads((trained / "config.json").read_text())
    assert cfg["tau"] == 0.95 and cfg["lambda_con"] == 1.0 and cfg["enable_st"]


def test_train_flags(scenes, tmp_path):
    cfg = _json(tmp_path / "t.json", dict(TRAIN_CFG, max_iter=3, finetune_iter=2))
    out = tmp_path / "base"
    assert main(["train", "--config", cfg, "--data", str(scenes), "--out", str(out),
                 "--no-rg", "--no-cr", "--no-st"]) == 0
    recs = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
    assert len(recs) == 3 and all(r["loss_total"] == r["loss_seg"] for r in recs)

    out = tmp_path / "kl"
    assert main(["train", "--config", cfg, "--data", str(scenes), "--out", str(out), "--no-st",
                 "--consistency", "kl", "--temperature", "0.1", "--tau", "0.9", "--lambda-con", "2",
                 "--seed", "3"]) == 0
    saved = json.loads((out / "config.json").read_text())
    assert (saved["consistency_kind"], saved["temperature"], saved["tau"], saved["lambda_con"],
            saved["seed"]) == ("kl", 0.1, 0.9, 2.0, 3)


def test_train_errors(scenes, tmp_path):
    bad = _json(tmp_path / "t.json", {"max_itre": 3})
    assert main(["train", "--config", bad, "--data", str(scenes), "--out", str(tmp_path / "o")]) == 2
    cfg = _json(tmp_path / "ok.json", TRAIN_CFG)
    assert main(["train", "--config", cfg, "--data", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == 3


def test_grow_examples(tmp_path):
    p1 = np.array([[0.99, 0.97, 0.50]])
    prob = np.stack([p1, 1 - p1], axis=-1)
    write_raster(tmp_path / "p.crg", prob, "f64")
    write_raster(tmp_path / "y.crg", np.array([[1, 0, 0]]), "u8")
    assert main(["grow", str(tmp_path / "p.crg"), str(tmp_path / "y.crg"), "--tau", "0.95",
                 "--out", str(tmp_path / "e.crg")]) == 0
    assert read_labels(tmp_path / "e.crg").tolist() == [[1, 1, 0]]
    assert main(["grow", str(tmp_path / "p.crg"), str(tmp_path / "e.crg"), "--tau", "0.95",
                 "--out", str(tmp_path / "e2.crg")]) == 0
    assert (tmp_path / "e2.crg").read_bytes() == (tmp_path / "e.crg").read_bytes()
    assert main(["grow", str(tmp_path / "p.crg"), str(tmp_path / "y.crg"), "--tau", "1.0",
                 "--out", str(tmp_path / "same.crg")]) == 0
    assert (tmp_path / "same.crg").read_bytes() == (tmp_path / "y.crg").read_bytes()
    write_raster(tmp_path / "y2.crg", np.array([[1, 0]]), "u8")
    assert main(["grow", str(tmp_path / "p.crg"), str(tmp_path / "y2.crg"), "--out", str(tmp_path / "x.crg")]) == 3
    write_raster(tmp_path / "bad.crg", prob * 2, "f64")
    assert main(["grow", str(tmp_path / "bad.crg"), str(tmp_path / "y.crg"), "--out", str(tmp_path / "x.crg")]) == 3


def test_predict_is_deterministic_and_valid(trained, scenes, tmp_path):
    image = scenes / "scene_0000_image.crg"
    for name in ("a", "b"):
        assert main(["predict", str(trained / "model.ckpt"), str(image), "--patch", "16",
                     "--stride", "8", "--out", str(tmp_path / name)]) == 0
    for f in ("labels.crg", "probs.crg"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    prob = read_raster(tmp_path / "a" / "probs.crg")
    check_probability_raster(prob)
    labels = read_labels(tmp_path / "a" / "labels.crg")
    assert labels.shape == (24, 24) and labels.min() >= 1 and labels.max() <= 4


def test_predict_single_tile_path(trained, scenes, tmp_path):
    from pointseg.cli import load_image
    from pointseg.fileformats import read_checkpoint
    from pointseg.model import ModelParams, head_probabilities
    image = scenes / "scene_0001_image.crg"
    assert main(["predict", str(trained / "model.ckpt"), str(image), "--patch", "64",
                 "--stride", "8", "--out", str(tmp_path)]) == 0
    params = ModelParams.from_named(read_checkpoint(trained / "model.ckpt"))
    pb, pe = head_probabilities(params, load_image(image)[None])
    assert np.array_equal(read_raster(tmp_path / "probs.crg"), (pb[0] + pe[0]) / 2)


def test_eval_examples(scenes, tmp_path, capsys):
    gt = scenes / "scene_0000_gt.crg"
    assert main(["eval", str(gt), str(gt), "--k", "4", "--out", str(tmp_path / "e")]) == 0
    summary = json.loads((tmp_path / "e" / "summary.json").read_text())
    assert summary["OA"] == 1.0 and summary["mF1"] == 1.0
    rows = (tmp_path / "e" / "metrics.csv").read_text().splitlines()
    n_present = len(set(read_labels(gt).ravel()) - {0})
    assert len(rows) - 1 == n_present + 1
    write_raster(tmp_path / "small.crg", np.ones((3, 3), dtype=int), "u8")
    assert main(["eval", str(tmp_path / "small.crg"), str(gt), "--k", "4", "--out", str(tmp_path / "x")]) != 0
    assert "differ in shape" in capsys.readouterr().err
