import json

import pytest

from e2edrive.cli import main
from e2edrive.config import tiny_config
from e2edrive.evaluation import GroundTruthReplay
from e2edrive.io import load_checkpoint, read_dataset, save_checkpoint


def _tree(path):
    return {p.relative_to(path): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_gen_data_is_deterministic(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path / "a"), "--n", "10", "--seed", "7"]) == 0
    assert main(["gen-data", "--out", str(tmp_path / "b"), "--n", "10", "--seed", "7"]) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a == b and len(read_dataset(tmp_path / "a" / "episodes.jsonl")) == 10


def test_unknown_flag_is_usage_error(capsys):
    assert main(["gen-data", "--out", "x", "--n", "1", "--seed", "1", "--bogus"]) == 1
    err = capsys.readouterr().err
    assert "usage" in err and "--bogus" in err
    assert main([]) == 1
    assert main(["gen-data", "--n", "-3", "--out", "x", "--seed", "1"]) == 1


def test_runtime_error_exit_code(tmp_path, capsys):
    assert main(["eval", "--ckpt", str(tmp_path / "missing.ckpt"), "--data", str(tmp_path), "--report",
                 str(tmp_path / "r.json")]) == 2
    assert "missing.ckpt" in capsys.readouterr().err


def test_gradcheck_passes(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "tiny_model" in out and "FAIL" not in out


def test_eval_gt_replay_stub(tmp_path, capsys):
    main(["gen-data", "--out", str(tmp_path / "d"), "--n", "12", "--seed", "3"])
    save_checkpoint(tmp_path / "gt.ckpt", GroundTruthReplay())
    assert main(["eval", "--ckpt", str(tmp_path / "gt.ckpt"), "--data", str(tmp_path / "d"),
                 "--report", str(tmp_path / "r.json")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["mean_composite"] == 1.0
    assert len(report["checkpoint_id"]) == 16 and len(report["dataset_id"]) == 16
    assert "mean_composite" in capsys.readouterr().out


def test_train_infer_eval_pipeline(tmp_path, capsys):
    data = tmp_path / "d"
    main(["gen-data", "--out", str(data), "--n", "4", "--seed", "1"])
    cfg = {"model": {k: getattr(tiny_config(), k) for k in ("d_model", "n_layers", "n_heads", "d_ff")},
           "train": {"steps": 3, "batch_size": 2, "seed": 2}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    for name in ("a", "b"):
        assert main(["train", "--config", str(tmp_path / "cfg.json"), "--data", str(data),
                     "--out", str(tmp_path / f"{name}.ckpt")]) == 0
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    log = (tmp_path / "a.ckpt.metrics.tsv").read_text().splitlines()
    assert len(log) == 3 and log[0].split("\t")[0] == "1" and len(log[0].split("\t")) == 4
    assert log == (tmp_path / "b.ckpt.metrics.tsv").read_text().splitlines()

    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--data", str(data), "--mode", "lora",
                 "--init", str(tmp_path / "a.ckpt"), "--out", str(tmp_path / "l.ckpt")]) == 0
    assert load_checkpoint(tmp_path / "l.ckpt").lora_enabled

    capsys.readouterr()
    assert main(["infer", "--ckpt", str(tmp_path / "a.ckpt"), "--episode", str(data / "episodes.jsonl"),
                 "--render", str(tmp_path / "p.ppm")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["trajectory"]) == 60 and isinstance(out["text"], str)
    assert (tmp_path / "p.ppm").read_bytes()[:2] == b"P6"

    assert main(["eval", "--ckpt", str(tmp_path / "a.ckpt"), "--data", str(data),
                 "--report", str(tmp_path / "r.json")]) == 0
    assert 0.0 <= json.loads((tmp_path / "r.json").read_text())["mean_composite"] <= 1.0


def test_bad_config_is_runtime_error(tmp_path, capsys):
    main(["gen-data", "--out", str(tmp_path / "d"), "--n", "2", "--seed", "1"])
    (tmp_path / "cfg.json").write_text(json.dumps({"train": {"stepz": 3}}))
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--data", str(tmp_path / "d"),
                 "--out", str(tmp_path / "x.ckpt")]) == 2
    assert "stepz" in capsys.readouterr().err
