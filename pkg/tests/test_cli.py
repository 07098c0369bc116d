"""End-to-end CLI smoke tests: synth -> train -> predict -> eval -> profile."""

import json

import pytest

from momentdet.cli import main

SPEC = {
    "num_videos": 8,
    "t_range": [48, 64],
    "feature_dim": 8,
    "num_classes": 2,
    "instances_per_video": [1, 2],
    "duration_range": [3.0, 24.0],
    "noise_level": 0.1,
    "seed": 4,
}

CONFIG = {
    "model": {
        "input_dim": 8,
        "num_classes": 2,
        "embed_dim": 16,
        "num_heads": 2,
        "window_size": 5,
        "num_stem_blocks": 1,
        "num_pyramid_blocks": 2,
        "max_seq_len": 64,
    },
    "train": {"epochs": 2, "warmup_epochs": 1, "batch_size": 4, "t_max": 64},
    "postprocess": {"max_detections_per_video": 20},
    "data": {},
}


def write_spec(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(SPEC))
    return path


def write_config(tmp_path, data_dir):
    cfg = json.loads(json.dumps(CONFIG))
    cfg["data"]["train_dir"] = str(data_dir)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_full_pipeline_smoke(tmp_path, capsys):
    spec = write_spec(tmp_path)
    data_dir = tmp_path / "data"
    assert main(["synth", "--spec", str(spec), "--out", str(data_dir),
                 "--test-videos", "3"]) == 0
    assert (data_dir / "manifest.json").exists()
    assert (data_dir / "test" / "ground_truth.json").exists()
    test_manifest = json.loads((data_dir / "test" / "manifest.json").read_text())
    assert all(v.startswith("test_") for v in test_manifest)

    config = write_config(tmp_path, data_dir)
    run_dir = tmp_path / "run"
    assert main(["train", "--config", str(config), "--out", str(run_dir)]) == 0
    assert (run_dir / "model.afck").exists()
    assert (run_dir / "train_log.jsonl").exists()
    assert (run_dir / "loss_history.png").stat().st_size > 0

    preds_path = tmp_path / "predictions.json"
    assert main(["predict", "--config", str(config),
                 "--checkpoint", str(run_dir / "model.afck"),
                 "--features-dir", str(data_dir / "test"),
                 "--out", str(preds_path), "--no-ema"]) == 0
    predictions = json.loads(preds_path.read_text())
    assert set(predictions) == set(test_manifest)

    eval_dir = tmp_path / "eval"
    assert main(["eval", "--predictions", str(preds_path),
                 "--gt", str(data_dir / "test" / "ground_truth.json"),
                 "--out", str(eval_dir)]) == 0
    metrics = json.loads((eval_dir / "metrics.json").read_text())
    assert 0.0 <= metrics["average_map"] <= 1.0
    # Delimited output and figures land side by side.
    assert (eval_dir / "pr_curves.csv").exists()
    assert (eval_dir / "map_bars.png").stat().st_size > 0
    assert (eval_dir / "pr_curves.png").stat().st_size > 0

    prof_dir = tmp_path / "profile"
    assert main(["profile", "--predictions", str(preds_path),
                 "--gt", str(data_dir / "test" / "ground_truth.json"),
                 "--out", str(prof_dir)]) == 0
    report = json.loads((prof_dir / "profile.json").read_text())
    assert set(report["false_positive_categories"]) == {
        "true_positive", "double_detection", "wrong_label",
        "localization", "confusion", "background"}
    assert (prof_dir / "profile.csv").exists()
    assert (prof_dir / "profile.png").stat().st_size > 0


def test_synth_deterministic_outputs(tmp_path):
    spec = write_spec(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["synth", "--spec", str(spec), "--out", str(a)]) == 0
    assert main(["synth", "--spec", str(spec), "--out", str(b)]) == 0
    for name in sorted(p.name for p in a.iterdir()):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_eval_perfect_predictions(tmp_path):
    spec = write_spec(tmp_path)
    data_dir = tmp_path / "data"
    assert main(["synth", "--spec", str(spec), "--out", str(data_dir)]) == 0
    gt = json.loads((data_dir / "ground_truth.json").read_text())
    predictions = {
        vid: [{"start_sec": s, "end_sec": e, "label": a["label_id"],
               "score": 0.9}
              for a in entry["annotations"]
              for s, e in [a["segment"]]]
        for vid, entry in gt["database"].items()
    }
    preds_path = tmp_path / "perfect.json"
    preds_path.write_text(json.dumps(predictions))
    out = tmp_path / "eval"
    assert main(["eval", "--predictions", str(preds_path),
                 "--gt", str(data_dir / "ground_truth.json"),
                 "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["average_map"] == 1.0


def test_missing_file_exits_2(tmp_path, capsys):
    code = main(["synth", "--spec", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "out")])
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["code"] == 2 and "missing" in err["error"]


def test_malformed_json_exits_3(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code = main(["synth", "--spec", str(bad), "--out", str(tmp_path / "out")])
    assert code == 3
    assert json.loads(capsys.readouterr().err)["code"] == 3


def test_bad_config_exits_4(tmp_path, capsys):
    cfg = tmp_path / "config.json"
    payload = json.loads(json.dumps(CONFIG))
    payload["model"]["window_size"] = 4  # even window is invalid
    cfg.write_text(json.dumps(payload))
    code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 4
    assert json.loads(capsys.readouterr().err)["code"] == 4


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "ops passed" in out and "FAIL" not in out
