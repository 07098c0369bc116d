"""Command-line entry points.

Every command exits 0 on success and writes a machine-readable error JSON
to stderr otherwise, with distinct exit codes for missing files (2),
malformed JSON (3), and config validation failures (4).  All randomness
derives from --seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import figures
from .evaluation import (EvalConfig, load_ground_truth_json,
                         load_predictions_json, map_at, profile_errors,
                         write_pr_csv, write_profile_csv)
from .model import ModelConfig, default_regression_ranges
from .postprocess import PostprocessConfig
from .targets import LossConfig
from .trainer import (TrainConfig, evaluate_predictions, load_model,
                      predict_dataset, train)

EXIT_MISSING_FILE = 2
EXIT_BAD_JSON = 3
EXIT_BAD_CONFIG = 4
EXIT_RUNTIME = 1


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise CliError(f"missing file: {path}", EXIT_MISSING_FILE) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed JSON in {path}: {exc}", EXIT_BAD_JSON) from exc


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


class RunConfig:
    """Union of all per-module configs plus dataset paths."""

    def __init__(self, payload: dict, seed: int | None = None):
        try:
            self.model = ModelConfig.from_dict(payload["model"])
            self.train = TrainConfig(**payload.get("train", {}))
            self.loss = LossConfig(**payload.get("loss", {}))
            self.postprocess = PostprocessConfig(**payload.get("postprocess", {}))
            self.eval = EvalConfig(**payload.get("eval", {}))
            self.data = payload.get("data", {})
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(f"config validation failed: {exc}", EXIT_BAD_CONFIG) from exc
        if seed is not None:
            self.train.seed = seed

    @classmethod
    def load(cls, path, seed=None) -> "RunConfig":
        return cls(_load_json(path), seed=seed)


def _load_split(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise CliError(f"missing directory: {directory}", EXIT_MISSING_FILE)
    sequences = data_mod.load_dataset(directory)
    annotations = data_mod.load_annotations(directory / "ground_truth.json")
    return sequences, [annotations[s.video_id] for s in sequences]


# ---- commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    payload = _load_json(args.spec)
    try:
        spec = data_mod.SyntheticSpec.from_dict(payload)
    except TypeError as exc:
        raise CliError(f"config validation failed: {exc}", EXIT_BAD_CONFIG) from exc
    if args.seed is not None:
        spec.seed = args.seed
    sequences, annotations, signatures = data_mod.generate_synthetic(spec)
    data_mod.write_dataset(args.out, sequences, annotations)
    written = len(sequences)
    if args.test_videos:
        # The held-out split reuses the class signatures so both splits come
        # from the same class definitions.
        test_spec = data_mod.SyntheticSpec.from_dict(
            {**payload, "num_videos": args.test_videos, "seed": spec.seed + 1}
        )
        test_seqs, test_anns, _ = data_mod.generate_synthetic(
            test_spec, signatures=signatures, id_prefix="test"
        )
        data_mod.write_dataset(
            Path(args.out) / "test", test_seqs, test_anns, subset="validation"
        )
        written += len(test_seqs)
    print(f"wrote {written} videos to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config, seed=args.seed)
    train_dir = cfg.data.get("train_dir")
    if not train_dir:
        raise CliError("config data.train_dir is required", EXIT_BAD_CONFIG)
    sequences, annotations = _load_split(train_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, ema, history = train(
        sequences, annotations, cfg.model, cfg.train, cfg.loss,
        log_path=out / "train_log.jsonl",
        checkpoint_path=out / "model.afck",
    )
    figures.render_loss_history(history, out / "loss_history.png")
    print(f"trained {len(history)} steps; checkpoint at {out / 'model.afck'}")
    return 0


def cmd_predict(args) -> int:
    cfg = RunConfig.load(args.config, seed=args.seed)
    if not Path(args.checkpoint).exists():
        raise CliError(f"missing file: {args.checkpoint}", EXIT_MISSING_FILE)
    model = load_model(args.checkpoint, cfg.model, use_ema=not args.no_ema)
    sequences = data_mod.load_dataset(args.features_dir)
    video_scores = None
    if args.video_scores:
        video_scores = _load_json(args.video_scores)
    if args.threads > 1:
        def run_one(seq):
            return seq.video_id, predict_dataset(
                model, [seq], cfg.postprocess, video_scores
            )[seq.video_id]

        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            predictions = dict(pool.map(run_one, sequences))
    else:
        predictions = predict_dataset(model, sequences, cfg.postprocess, video_scores)
    _dump_json(predictions, args.out)
    print(f"wrote predictions for {len(predictions)} videos to {args.out}")
    return 0


def cmd_eval(args) -> int:
    preds = load_predictions_json(args.predictions)
    gts, _durations, _ = load_ground_truth_json(args.gt)
    thresholds = [float(t) for t in args.thresholds.split(",")]
    try:
        cfg = EvalConfig(tiou_thresholds=thresholds)
    except ValueError as exc:
        raise CliError(f"config validation failed: {exc}", EXIT_BAD_CONFIG) from exc
    report = map_at(preds, gts, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    serializable = {
        "map_per_threshold": {str(k): v for k, v in report["map_per_threshold"].items()},
        "average_map": report["average_map"],
        "ap_per_class": {
            str(c): {str(t): v for t, v in table.items()}
            for c, table in report["ap_per_class"].items()
        },
    }
    _dump_json(serializable, out / "metrics.json")
    write_pr_csv(preds, gts, thresholds, out / "pr_curves.csv")
    figures.render_map_bars(report, out / "map_bars.png")
    figures.render_pr_curves(preds, gts, thresholds, out / "pr_curves.png")
    print(f"average mAP {report['average_map']:.4f}; report in {out}")
    return 0


def cmd_profile(args) -> int:
    preds = load_predictions_json(args.predictions)
    gts, durations, _ = load_ground_truth_json(args.gt)
    report = profile_errors(preds, gts, durations, tiou_threshold=args.tiou)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(report, out / "profile.json")
    write_profile_csv(report, out / "profile.csv")
    figures.render_profile(report, out / "profile.png")
    print(f"profiled {len(gts)} ground-truth segments; report in {out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import op_suite

    cases = op_suite(seed=args.seed or 0)
    width = max(len(c["op"]) for c in cases)
    failed = 0
    for c in cases:
        status = "pass" if c["passed"] else "FAIL"
        print(f"{c['op']:<{width}}  {c['max_rel_error']:.3e}  {status}")
        failed += 0 if c["passed"] else 1
    print(f"{len(cases) - failed}/{len(cases)} ops passed")
    return 0 if failed == 0 else EXIT_RUNTIME


ABLATION_AXES = ("window_size", "levels", "init_range", "lambda_reg",
                 "t_max", "feature_stride")


def _apply_axis(cfg: RunConfig, axis: str, value: float):
    if axis == "window_size":
        cfg.model.window_size = int(value)
    elif axis == "levels":
        levels = int(value)
        cfg.model.num_pyramid_blocks = levels - 1
        cfg.model.regression_ranges = default_regression_ranges(levels)
    elif axis == "init_range":
        cfg.model.regression_ranges = default_regression_ranges(
            cfg.model.num_levels, init_max=float(value)
        )
    elif axis == "lambda_reg":
        cfg.loss.lambda_reg = float(value)
    elif axis == "t_max":
        cfg.train.t_max = int(value)
    elif axis == "feature_stride":
        cfg.data["feature_stride"] = int(value)
    else:
        raise CliError(f"unknown ablation axis {axis!r}", EXIT_BAD_CONFIG)
    cfg.model.validate()


def cmd_ablate(args) -> int:
    values = [float(v) for v in args.values.split(",")]
    rows = []
    for value in values:
        cfg = RunConfig.load(args.config, seed=args.seed)
        _apply_axis(cfg, args.axis, value)
        sequences, annotations = _load_split(cfg.data["train_dir"])
        test_sequences, _ = _load_split(cfg.data.get("test_dir", cfg.data["train_dir"]))
        stride = int(cfg.data.get("feature_stride", 1))
        if stride > 1:
            sequences = [data_mod.stride_downsample(s, stride) for s in sequences]
            test_sequences = [data_mod.stride_downsample(s, stride)
                              for s in test_sequences]
        model, ema, _ = train(sequences, annotations, cfg.model, cfg.train, cfg.loss)
        ema.copy_to(model.params)
        predictions = predict_dataset(model, test_sequences, cfg.postprocess)
        gt_path = Path(cfg.data.get("test_dir", cfg.data["train_dir"])) / "ground_truth.json"
        report = evaluate_predictions(predictions, gt_path, cfg.eval)
        row = {"axis": args.axis, "value": value,
               "average_map": report["average_map"]}
        row.update({f"map@{t}": v for t, v in report["map_per_threshold"].items()})
        rows.append(row)
        print(f"{args.axis}={value}: average mAP {report['average_map']:.4f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot([r["value"] for r in rows], [r["average_map"] for r in rows],
            marker="o")
    ax.set_xlabel(args.axis)
    ax.set_ylabel("average mAP")
    fig.tight_layout()
    fig.savefig(out / "ablation.png", dpi=120)
    plt.close(fig)
    return 0


# ---- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="momentdet",
        description="Train and evaluate a temporal action localizer",
    )
    parser.add_argument("--seed", type=int, default=None,
                        help="seed for all randomness")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for loading and per-video inference")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-videos", type=int, default=0,
                   help="also write a held-out split of this many videos")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="run inference over a feature directory")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-ema", action="store_true",
                   help="use raw weights instead of the EMA shadow")
    p.add_argument("--video-scores", default=None,
                   help="JSON of external video-level class scores for fusion")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--thresholds", default="0.3,0.4,0.5,0.6,0.7")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="false-negative / false-positive profiling")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--tiou", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("gradcheck", help="finite-difference checks for all ops")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="sweep one config axis and tabulate mAP")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True, choices=ABLATION_AXES)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        json.dump({"error": str(exc), "code": exc.code}, sys.stderr)
        sys.stderr.write("\n")
        return exc.code
    except FileNotFoundError as exc:
        json.dump({"error": str(exc), "code": EXIT_MISSING_FILE}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_MISSING_FILE
    except Exception as exc:  # pragma: no cover - defensive
        json.dump({"error": f"{type(exc).__name__}: {exc}", "code": EXIT_RUNTIME},
                  sys.stderr)
        sys.stderr.write("\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
