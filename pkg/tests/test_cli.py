import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from rednet import netpbm
from rednet.cli import main
from rednet.config import config_from_dict, load_config
from rednet.errors import ConfigError
from rednet.taxonomy import TAXONOMY

ROOT = Path(__file__).resolve().parents[1]


def write_config(tmp_path, dataset, **train):
    doc = json.loads((ROOT / "configs" / "reference_recipe.json").read_text())
    doc["train"].update({"max_iter": 3, "train_side": 32, "save_interval": 0}, **train)
    doc["data"]["manifests"] = {"train": str(dataset[0]), "test": str(dataset[1])}
    doc["io"] = {"checkpoint": "run/model.ckpt", "log": "run/log.csv", "report": "run/report.json"}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def trained(small_dataset, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_config(tmp, small_dataset)
    assert main(["train", "--config", str(cfg)]) == 0
    return cfg, tmp / "run"


def test_committed_configs_load():
    for name in ("desk.json", "reference_recipe.json"):
        cfg = load_config(ROOT / "configs" / name)
        assert cfg.model.num_classes == 9 and cfg.train.train_side == 64
    assert load_config(ROOT / "configs" / "reference_recipe.json").train.base_lr == 0.0001


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"train": {"bogus": 1}})
    with pytest.raises(ConfigError, match="extra"):
        config_from_dict({"extra": {}})


def test_synth_writes_dataset(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "d"), "--count", "8", "--side", "64", "--seed", "0"]) == 0
    assert capsys.readouterr().out.strip() == str(tmp_path / "d" / "manifest.json")
    assert len(list((tmp_path / "d").rglob("*.ppm"))) == 8
    assert len(list((tmp_path / "d").rglob("*.pgm"))) == 8
    main(["synth", "--out", str(tmp_path / "e"), "--count", "8", "--side", "64", "--seed", "0"])
    for f in (tmp_path / "d").rglob("*.p?m"):
        assert f.read_bytes() == (tmp_path / "e" / f.relative_to(tmp_path / "d")).read_bytes()


def test_synth_count_zero(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--count", "0"]) == 2


def test_train_outputs(trained):
    _, run = trained
    assert (run / "model.ckpt").exists()
    lines = (run / "log.csv").read_text().splitlines()
    assert lines[0] == "iter,lr,loss" and len(lines) == 4
    it, lr, loss = lines[1].split(",")
    assert it == "0" and float(lr) == 0.0001 and float(loss) > 0


def test_train_seed_override_deterministic(small_dataset, tmp_path):
    cfg = write_config(tmp_path, small_dataset)
    logs = []
    for _ in range(2):
        assert main(["train", "--config", str(cfg), "--seed", "11"]) == 0
        logs.append(((tmp_path / "run/log.csv").read_bytes(), (tmp_path / "run/model.ckpt").read_bytes()))
    assert logs[0] == logs[1]
    assert main(["train", "--config", str(cfg), "--seed", "12"]) == 0
    assert (tmp_path / "run/log.csv").read_bytes() != logs[0][0]


def test_thread_cap_does_not_change_results(small_dataset, tmp_path, monkeypatch):
    cfg = write_config(tmp_path, small_dataset)
    main(["train", "--config", str(cfg)])
    free = (tmp_path / "run/model.ckpt").read_bytes()
    monkeypatch.setenv("REDNET_THREADS", "1")
    main(["train", "--config", str(cfg)])
    assert (tmp_path / "run/model.ckpt").read_bytes() == free


def test_train_bad_config(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    assert main(["train", "--config", str(tmp_path / "c.json")]) == 2
    (tmp_path / "c.json").write_text(json.dumps({"train": {"max_iter": 0}}))
    assert main(["train", "--config", str(tmp_path / "c.json")]) == 2


def test_train_numeric_abort(small_dataset, tmp_path, capsys):
    cfg = write_config(tmp_path, small_dataset, base_lr=1e30, momentum=0.0)
    with np.errstate(all="ignore"):
        assert main(["train", "--config", str(cfg)]) == 3
    assert "last good checkpoint" in capsys.readouterr().err


def test_eval_report(trained, capsys):
    cfg, run = trained
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(run / "model.ckpt"), "--split", "test"]) == 0
    rep = json.loads((run / "report.json").read_text())
    assert json.loads(capsys.readouterr().out) == rep
    assert list(rep["per_class"]) == list(TAXONOMY.evaluated_labels)
    assert 0 <= rep["miou"] <= 1 and rep["pixels"] > 0


def test_eval_missing_checkpoint(trained, tmp_path):
    cfg, _ = trained
    assert main(["eval", "--config", str(cfg), "--checkpoint", str(tmp_path / "none.ckpt")]) == 2


def test_predict_outputs(trained, small_dataset, tmp_path):
    _, run = trained
    image = sorted((Path(small_dataset[1]).parent / "images").glob("*.ppm"))[0]
    args = ["predict", "--checkpoint", str(run / "model.ckpt"), "--image", str(image)]
    assert main(args + ["--out", str(tmp_path / "a.pgm"), "--color", str(tmp_path / "a.ppm")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.pgm"), "--color", str(tmp_path / "b.ppm")]) == 0
    mask = netpbm.read(tmp_path / "a.pgm", "pgm")
    assert mask.shape == netpbm.read(image).shape[:2]
    assert mask.max() < len(TAXONOMY.raw_labels)
    colours = {tuple(c) for c in netpbm.read(tmp_path / "a.ppm").reshape(-1, 3)}
    assert colours <= set(TAXONOMY.palette)
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()


def test_predict_unreadable_image(trained, tmp_path):
    _, run = trained
    (tmp_path / "x.ppm").write_bytes(b"junk")
    out = str(tmp_path / "o.pgm")
    assert main(["predict", "--checkpoint", str(run / "model.ckpt"), "--image", str(tmp_path / "x.ppm"), "--out", out]) == 2


def test_verify_attention_suite(capsys):
    assert main(["verify", "--suite", "attention"]) == 0
    out = capsys.readouterr().out
    for check in ("brute_force_oracle", "row_stochastic", "alpha_zero_identity", "permutation_equivariance"):
        assert check in out


def test_verify_failure_exit(monkeypatch, capsys):
    from rednet import cli
    from rednet.verify import Check

    monkeypatch.setitem(cli.SUITES, "metrics", lambda: iter([Check("metrics", "forced", False, "x", 7)]))
    assert main(["verify", "--suite", "metrics"]) == 1
    assert "metrics/forced (seed 7)" in capsys.readouterr().err


def test_verify_unknown_suite():
    proc = subprocess.run([sys.executable, "-m", "rednet", "verify", "--suite", "nope"], capture_output=True)
    assert proc.returncode == 2


def test_help_lists_defaults():
    proc = subprocess.run([sys.executable, "-m", "rednet", "train", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "train.base_lr = 0.0001" in proc.stdout and "backbone.norm" in proc.stdout
