import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from motionflow.cli import main
from motionflow.geometry import PointCloud
from motionflow.io_formats import load_cloud, save_cloud

SMALL = ["--latent-dim", "4", "--hidden-dims", "8,8", "--n-points", "32"]


PATH_KEYS = ("data", "checkpoint", "out")


def digest(directory):
    """Hash of every output file; the echoed config is hashed without its path fields."""
    out = {}
    for p in sorted(directory.rglob("*")):
        if not p.is_file():
            continue
        data = p.read_bytes()
        if p.name == "config.json":
            doc = {k: v for k, v in json.loads(data).items() if k not in PATH_KEYS}
            data = json.dumps(doc, sort_keys=True).encode()
        out[str(p.relative_to(directory))] = hashlib.sha256(data).hexdigest()
    return out


def pipeline(root, seed="3"):
    data, model, pred = root / "data", root / "model", root / "pred"
    assert main(["synth", "--out", str(data), "--episodes", "2", "--n-points", "32", "--seed", seed]) == 0
    assert main(["train", "--data", str(data), "--out", str(model), "--steps", "15", "--seed", seed, *SMALL]) == 0
    ep = data / "rigid_rotation-f000-e000"
    assert main([
        "predict", "--checkpoint", str(model / "checkpoint.json"), "--frame0", str(ep / "frame0.xyz"),
        "--frame1", str(ep / "frame1.xyz"), "--out", str(pred), "--max-iters", "20", "--n-points", "32", "--seed", seed,
    ]) == 0
    return data, model, pred


def test_end_to_end_is_byte_identical(tmp_path, capsys):
    a = pipeline(tmp_path / "a")
    b = pipeline(tmp_path / "b")
    for da, db in zip(a, b):
        assert digest(da) == digest(db)
    pred = a[2]
    assert {"prediction.ply", "correspondence.csv", "loss_history.csv", "latent.json", "config.json"} <= set(digest(pred))
    assert (pred / "correspondence.csv").read_text().splitlines()[0] == "src_index,x,y,z"
    assert len(load_cloud(pred / "prediction.ply")) == 32


def test_progress_lines(tmp_path, capsys):
    data = tmp_path / "d"
    main(["synth", "--out", str(data), "--episodes", "1", "--n-points", "16"])
    capsys.readouterr()
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "m"), "--steps", "200", *SMALL]) == 0
    lines = capsys.readouterr().out.split()
    assert [l.split(",")[0] for l in lines] == ["100", "200"]
    float(lines[0].split(",")[1])


def test_predict_latent_mismatch(tmp_path, capsys):
    data, model, _ = pipeline(tmp_path)
    ep = data / "rigid_rotation-f000-e000"
    code = main([
        "predict", "--checkpoint", str(model / "checkpoint.json"), "--frame0", str(ep / "frame0.xyz"),
        "--frame1", str(ep / "frame1.xyz"), "--out", str(tmp_path / "p2"), "--latent-dim", "7",
    ])
    assert code == 1
    err = capsys.readouterr().err
    assert "7" in err and "4" in err
    assert not (tmp_path / "p2").exists()


def test_gradcheck_passes():
    assert main(["gradcheck"]) == 0


def test_gradcheck_writes_report(tmp_path):
    assert main(["gradcheck", "--out", str(tmp_path), "--seed", "4"]) == 0
    assert json.loads((tmp_path / "gradcheck.json").read_text())["passed"] is True


def test_validation_errors_exit_1(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 1
    assert main(["predict", "--frame0", "x.xyz", "--frame1", "y.xyz", "--out", str(tmp_path)]) == 1
    assert main(["bogus"]) == 1
    assert main(["synth", "--out", str(tmp_path), "--step-min", "0.5", "--step-max", "0.1"]) == 1
    assert main(["synth", "--out", str(tmp_path), "--config", str(tmp_path / "missing.json")]) == 1


def test_runtime_failure_exit_2(tmp_path):
    src = tmp_path / "c.xyz"
    save_cloud(PointCloud([[0.0, 0, 0], [0.01, 0, 0]]), src)
    assert main(["corrupt", "--input", str(src), "--out", str(tmp_path / "o.xyz"), "--holes", "1", "--hole-radius", "1"]) == 2


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"episodes": 2, "n_points": 12, "seed": 5}))
    out = tmp_path / "d"
    assert main(["synth", "--config", str(cfg), "--out", str(out), "--n-points", "10"]) == 0
    echoed = json.loads((out / "config.json").read_text())
    assert echoed["episodes"] == 2 and echoed["n_points"] == 10 and echoed["seed"] == 5
    assert json.loads((out / "dataset.json").read_text())["episodes"].__len__() == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nope": 1}))
    assert main(["synth", "--config", str(bad), "--out", str(out)]) == 1


def test_corrupt_and_eval(tmp_path, rng):
    src = tmp_path / "c.xyz"
    save_cloud(PointCloud(rng.normal(size=(200, 3))), src)
    before = src.read_bytes()
    noisy = tmp_path / "n.xyz"
    assert main(["corrupt", "--input", str(src), "--out", str(noisy), "--noise-sigma", "0.02", "--seed", "1"]) == 0
    assert src.read_bytes() == before
    assert main(["eval", "--pred", str(noisy), "--gt", str(src), "--out", str(tmp_path / "ev")]) == 0
    metrics = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert 0 < metrics["correspondence_l2"] < 0.1 and metrics["cma"]["0.2"] == 1.0
    assert (tmp_path / "ev" / "cma.csv").read_text().splitlines()[0] == "delta,accuracy"
    part = tmp_path / "p.ply"
    assert main(["corrupt", "--input", str(src), "--out", str(part), "--partial-fraction", "0.25", "--holes", "2"]) == 0
    assert len(load_cloud(part)) <= 150
    assert main(["eval", "--pred", str(part), "--gt", str(src), "--out", str(tmp_path / "e2")]) == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "motionflow", "gradcheck", "--n-weights", "20"], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["passed"] is True
