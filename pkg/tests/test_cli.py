import dataclasses
import json

import numpy as np
import pytest

from ssd3d.cli import main, read_recall_table
from ssd3d.core import validate_scene
from ssd3d.gradcheck import mini_model_config
from ssd3d.scene_io import load_manifest, load_split


def write_cfg(tmp_path, name="cfg.json", **sections):
    base = {
        "model": dataclasses.asdict(mini_model_config()),
        "data": {"budget": 256, "instances": [1, 2], "points_per_instance": [60, 80], "background_points": 150, "extent": [16.0, 16.0]},
        "train": {"batch_size": 2, "steps": 3},
        "sample": {"scenes": 3, "budgets": [64, 4096], "lambdas": [0.0, 1.0]},
    }
    for k, v in sections.items():
        base.setdefault(k, {}).update(v)
    path = tmp_path / name
    path.write_text(json.dumps(base))
    return str(path)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_genscenes_writes_n_files_and_is_reproducible(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "genscenes", "--config", cfg, "--n", 10, "--out", a)[0] == 0
    assert run(capsys, "genscenes", "--config", cfg, "--n", 10, "--out", b)[0] == 0
    files = sorted(p.name for p in (a / "scenes").iterdir())
    assert len(files) == 10 and len(load_manifest(a / "manifest.json")) == 10
    for name in files + ["../manifest.json"]:
        assert (a / "scenes" / name).read_bytes() == (b / "scenes" / name).read_bytes()
    for split in ("train", "val"):
        assert all(not validate_scene(s) for s in load_split(a / "manifest.json", split))
    echo = json.loads((a / "resolved_config.json").read_text())
    assert echo["command"] == "genscenes" and echo["seed"] == 0 and "model" in echo["config"]


def test_sample_report_round_trips(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    code, out, _ = run(capsys, "sample", "--config", cfg, "--out", tmp_path / "s")
    assert code == 0 and json.loads(out)["rows"] == 6
    table = read_recall_table((tmp_path / "s" / "recall_table.csv").read_text())
    assert set(table) == {"D-FPS", "F-FPS, λ=0.0", "F-FPS, λ=1.0"} or len(table) == 3
    # full budget keeps every point
    assert all(row[4096] == 1.0 for row in table.values())
    long = (tmp_path / "s" / "recall_long.csv").read_text().splitlines()
    assert long[0] == "method,strategy,lambda,budget,recall" and len(long) == 7
    assert (tmp_path / "s" / "timing.csv").read_text().startswith("method,points_per_sec")


def test_sample_on_raw_dataset_warns_and_falls_back(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    run(capsys, "genscenes", "--config", cfg, "--n", 4, "--out", tmp_path / "d")
    with pytest.warns(UserWarning):
        code, _, _ = run(capsys, "sample", "--config", cfg, "--dataset", tmp_path / "d" / "manifest.json", "--strategy", "FFPS", "--lambda", 1.0, "--budget", 32, "--out", tmp_path / "s")
    assert code == 0


def test_train_is_byte_deterministic_and_eval_runs(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    for d in ("r1", "r2"):
        assert run(capsys, "train", "--config", cfg, "--seed", 3, "--out", tmp_path / d)[0] == 0
    for f in ("train_log.jsonl", "checkpoint.ssd3d"):
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()
    lines = (tmp_path / "r1" / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 3 and list(json.loads(lines[0]))[:3] == ["step", "lr", "total"]
    code, out, _ = run(capsys, "eval", "--config", cfg, "--checkpoint", tmp_path / "r1" / "checkpoint.ssd3d", "--out", tmp_path / "e")
    assert code == 0
    metrics = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert list(metrics)[:3] == ["ap", "mAP", "NDS"] and 0.0 <= metrics["mAP"] <= 1.0
    assert metrics["points_recall"] is not None


def test_zero_lr_single_step_keeps_parameters(tmp_path, capsys):
    from ssd3d.model import SSDNet
    from ssd3d.nn import load_checkpoint

    cfg = write_cfg(tmp_path, train={"steps": 1, "lr": 0.0})
    assert run(capsys, "train", "--config", cfg, "--out", tmp_path / "z")[0] == 0
    state, meta = load_checkpoint(tmp_path / "z" / "checkpoint.ssd3d")
    init = SSDNet(mini_model_config(), int(meta["seed"])).params.state_dict()
    assert all(np.array_equal(state[k], init[k]) for k in init)


def test_eval_checkpoint_mismatch_has_error_class(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    run(capsys, "train", "--config", cfg, "--out", tmp_path / "r")
    other = write_cfg(tmp_path, "other.json", model={"head_mlp": [5]})
    code, _, err = run(capsys, "eval", "--config", other, "--checkpoint", tmp_path / "r" / "checkpoint.ssd3d", "--out", tmp_path / "e")
    assert code != 0 and err.startswith("error CheckpointMismatchError:") and len(err.strip().splitlines()) == 1


def test_eval_oracle_scores_one(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert run(capsys, "eval", "--config", cfg, "--oracle", "--out", tmp_path / "o")[0] == 0
    m = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert m["ap"]["Car"] == {"AP@0.5": 1.0, "AP@0.7": 1.0} and m["mATE"] == 0.0


def test_untrained_model_report_well_formed(tmp_path, capsys):
    cfg = write_cfg(tmp_path, train={"steps": 1, "lr": 0.0})
    run(capsys, "train", "--config", cfg, "--out", tmp_path / "u")
    assert run(capsys, "eval", "--config", cfg, "--checkpoint", tmp_path / "u" / "checkpoint.ssd3d", "--out", tmp_path / "e")[0] == 0
    m = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert m["ap"]["Car"]["AP@0.7"] < 0.05


def test_gradcheck_command(tmp_path, capsys):
    code, out, _ = run(capsys, "gradcheck", "--max-entries", 6, "--out", tmp_path / "g")
    assert code == 0 and json.loads(out)["passed"] is True
    doc = json.loads((tmp_path / "g" / "gradcheck.json").read_text())
    assert doc["linear"]["max_rel_error"] < 1e-8 and doc["pipeline"]["max_rel_error"] < 1e-4


@pytest.mark.parametrize(
    "argv,kind",
    [
        (["train", "--config", "{missing}"], "FileNotFoundError"),
        (["eval", "--out", "{tmp}/x"], "ArgumentError"),
        (["genscenes", "--config", "{bad}", "--out", "{tmp}/x"], "ConfigError"),
        (["genscenes", "--n", "0", "--out", "{tmp}/x"], "ArgumentError"),
    ],
)
def test_errors_are_one_line_with_class(tmp_path, capsys, argv, kind):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"trian": {}}))
    argv = [a.format(missing=tmp_path / "nope.json", tmp=tmp_path, bad=bad) for a in argv]
    code, _, err = run(capsys, *argv)
    assert code == 1 and err.startswith(f"error {kind}:") and len(err.strip().splitlines()) == 1


def test_unwritable_output_dir(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = run(capsys, "genscenes", "--n", 2, "--out", blocker / "sub")
    assert code == 1 and err.startswith("error OutputDirError:")


def test_loss_decreases_over_200_steps_on_64_scenes(tmp_path, capsys):
    # default toy data and network: 64 train scenes, batch 4
    assert run(capsys, "train", "--steps", 200, "--out", tmp_path / "t")[0] == 0
    totals = [json.loads(l)["total"] for l in (tmp_path / "t" / "train_log.jsonl").read_text().splitlines()]
    windows = [np.mean(totals[i : i + 50]) for i in range(0, 200, 50)]
    assert all(b < a for a, b in zip(windows, windows[1:])), windows
