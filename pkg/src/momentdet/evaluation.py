"""Detection metrics: tIoU mAP at thresholds, average mAP, error profiling.

Ground truth and predictions are plain records:
  gt:   (video_id, start, end, label)            in seconds
  pred: (video_id, start, end, label, score)     in seconds
AP follows the ActivityNet-toolkit convention: greedy score-ordered
matching against the best-tIoU unmatched ground truth, all-point
interpolated precision/recall integration, classes without ground truth
excluded from the mean.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

THUMOS_THRESHOLDS = [0.3, 0.4, 0.5, 0.6, 0.7]
ACTIVITYNET_THRESHOLDS = [round(0.5 + 0.05 * i, 2) for i in range(10)]
EPIC_THRESHOLDS = [0.1, 0.2, 0.3, 0.4, 0.5]


@dataclass
class EvalConfig:
    tiou_thresholds: list = field(default_factory=lambda: list(THUMOS_THRESHOLDS))

    def __post_init__(self):
        t = self.tiou_thresholds
        if any(not (0.0 < x <= 1.0) for x in t) or any(a >= b for a, b in zip(t, t[1:])):
            raise ValueError("thresholds must be strictly increasing in (0, 1]")


def tiou(a: tuple, b: tuple) -> float:
    """1D Jaccard index of two (start, end) intervals."""
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def _sorted_preds(preds):
    # Deterministic: score descending, ties by earlier start then label id.
    return sorted(preds, key=lambda p: (-p[4], p[1], p[3]))


def _match_class(preds, gts, threshold):
    """Greedy one-to-one matching for a single class.

    preds: (video_id, start, end, label, score), already sorted by score.
    Returns a TP/FP flag per prediction (in order) and the match index.
    """
    gt_by_video: dict = {}
    for i, g in enumerate(gts):
        gt_by_video.setdefault(g[0], []).append(i)
    matched = [False] * len(gts)
    tp = np.zeros(len(preds), dtype=bool)
    match_idx = np.full(len(preds), -1, dtype=int)
    for pi, p in enumerate(preds):
        best_iou = 0.0
        best_gt = -1
        for gi in gt_by_video.get(p[0], ()):
            if matched[gi]:
                continue
            ov = tiou((p[1], p[2]), (gts[gi][1], gts[gi][2]))
            if ov >= threshold and ov > best_iou:
                best_iou = ov
                best_gt = gi
        if best_gt >= 0:
            matched[best_gt] = True
            tp[pi] = True
            match_idx[pi] = best_gt
    return tp, match_idx


def _ap_from_flags(tp: np.ndarray, num_gt: int) -> float:
    """All-point interpolated AP from ordered TP/FP flags."""
    if num_gt == 0:
        return float("nan")
    if tp.size == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    precision = cum_tp / np.arange(1, tp.size + 1)
    recall = cum_tp / num_gt
    mrec = np.concatenate(([0.0], recall, [recall[-1]]))
    mprec = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mprec.size - 2, -1, -1):
        mprec[i] = max(mprec[i], mprec[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mprec[steps + 1]))


def average_precision(preds, gts, threshold: float) -> float:
    """AP for one class at one tIoU threshold."""
    ordered = _sorted_preds(preds)
    tp, _ = _match_class(ordered, gts, threshold)
    return _ap_from_flags(tp, len(gts))


def map_at(preds, gts, cfg: EvalConfig) -> dict:
    """Per-threshold mAP and their mean, over classes that have ground truth."""
    labels = sorted({g[3] for g in gts})
    preds_by_label: dict = {}
    for p in preds:
        preds_by_label.setdefault(p[3], []).append(p)
    per_threshold = {}
    per_class: dict = {}
    for thr in cfg.tiou_thresholds:
        aps = []
        for label in labels:
            ap = average_precision(
                preds_by_label.get(label, []),
                [g for g in gts if g[3] == label],
                thr,
            )
            aps.append(ap)
            per_class.setdefault(label, {})[thr] = ap
        per_threshold[thr] = float(np.mean(aps)) if aps else 0.0
    avg = float(np.mean(list(per_threshold.values()))) if per_threshold else 0.0
    return {
        "map_per_threshold": per_threshold,
        "average_map": avg,
        "ap_per_class": per_class,
    }


def pr_curve(preds, gts, threshold: float) -> list[tuple]:
    """(recall, precision) points for a single class, for plot feeds."""
    ordered = _sorted_preds(preds)
    tp, _ = _match_class(ordered, gts, threshold)
    if not len(gts) or tp.size == 0:
        return []
    cum_tp = np.cumsum(tp)
    precision = cum_tp / np.arange(1, tp.size + 1)
    recall = cum_tp / len(gts)
    return list(zip(recall.tolist(), precision.tolist()))


# ---- error profiling -------------------------------------------------------

COVERAGE_BINS = [("XS", 0.0, 0.02), ("S", 0.02, 0.04), ("M", 0.04, 0.06),
                 ("L", 0.06, 0.08), ("XL", 0.08, 1.0)]
LENGTH_BINS = [("XS", 0.0, 3.0), ("S", 3.0, 6.0), ("M", 6.0, 12.0),
               ("L", 12.0, 18.0), ("XL", 18.0, float("inf"))]
INSTANCE_BINS = [("XS", 0, 1), ("S", 1, 40), ("M", 40, 80), ("L", 80, float("inf"))]

FP_CATEGORIES = ["true_positive", "double_detection", "wrong_label",
                 "localization", "confusion", "background"]


def _bin_of(value: float, bins) -> str:
    for name, lo, hi in bins:
        if lo < value <= hi:
            return name
    return bins[-1][0]


def characterize_gt(gts, video_durations: dict) -> list[dict]:
    """Coverage / length / instance-count bin per ground-truth segment."""
    counts: dict = {}
    for g in gts:
        counts[(g[0], g[3])] = counts.get((g[0], g[3]), 0) + 1
    rows = []
    for g in gts:
        duration = video_durations[g[0]]
        length = g[2] - g[1]
        rows.append({
            "video_id": g[0],
            "label": g[3],
            "coverage_bin": _bin_of(length / duration, COVERAGE_BINS),
            "length_bin": _bin_of(length, LENGTH_BINS),
            "instance_bin": _bin_of(counts[(g[0], g[3])], INSTANCE_BINS),
        })
    return rows


def profile_errors(
    preds,
    gts,
    video_durations: dict,
    tiou_threshold: float = 0.5,
    top_per_gt: int = 10,
) -> dict:
    """False-negative rates per bin, false-positive category histogram,
    and a per-bin sensitivity (raw mAP) table.

    FP categories over the top (10 x #GT) predictions by score:
    double detection (tIoU >= thr with an already matched GT, right label),
    wrong label (tIoU >= thr, wrong label), localization (0.1 <= tIoU < thr,
    right label), confusion (0.1 <= tIoU < thr, wrong label), background
    (tIoU < 0.1).
    """
    traits = characterize_gt(gts, video_durations)
    ordered = _sorted_preds(preds)
    top_n = top_per_gt * len(gts)
    ordered = ordered[:top_n]

    # Global greedy matching at the profiling threshold, per class.
    matched_gt = [False] * len(gts)
    gt_index = {}
    for i, g in enumerate(gts):
        gt_index.setdefault((g[0], g[3]), []).append(i)
    gt_by_video: dict = {}
    for i, g in enumerate(gts):
        gt_by_video.setdefault(g[0], []).append(i)

    categories = {name: 0 for name in FP_CATEGORIES}
    for p in ordered:
        best_iou, best_gt = 0.0, -1
        best_any_iou, best_any_gt = 0.0, -1
        for gi in gt_by_video.get(p[0], ()):
            g = gts[gi]
            ov = tiou((p[1], p[2]), (g[1], g[2]))
            if ov > best_any_iou:
                best_any_iou, best_any_gt = ov, gi
            if g[3] == p[3] and ov > best_iou:
                best_iou, best_gt = ov, gi
        if best_iou >= tiou_threshold:
            if matched_gt[best_gt]:
                categories["double_detection"] += 1
            else:
                matched_gt[best_gt] = True
                categories["true_positive"] += 1
        elif best_any_iou >= tiou_threshold:
            categories["wrong_label"] += 1
        elif best_any_iou >= 0.1:
            if best_any_gt >= 0 and gts[best_any_gt][3] == p[3]:
                categories["localization"] += 1
            else:
                categories["confusion"] += 1
        else:
            categories["background"] += 1

    fn_rates: dict = {"coverage": {}, "length": {}, "instances": {}}
    bin_counts: dict = {"coverage": {}, "length": {}, "instances": {}}
    axes = [("coverage", "coverage_bin"), ("length", "length_bin"),
            ("instances", "instance_bin")]
    for axis, key in axes:
        for trait_row, miss in zip(traits, matched_gt):
            name = trait_row[key]
            total, missed = bin_counts[axis].get(name, (0, 0))
            bin_counts[axis][name] = (total + 1, missed + (0 if miss else 1))
        for name, (total, missed) in bin_counts[axis].items():
            fn_rates[axis][name] = missed / total

    # Sensitivity: per-bin raw mAP at the profiling threshold, computed on
    # the bin's ground truth with predictions matched elsewhere removed.
    sensitivity: dict = {"coverage": {}, "length": {}, "instances": {}}
    full_cfg = EvalConfig(tiou_thresholds=[tiou_threshold])
    pred_match = _global_pred_matches(ordered, gts, tiou_threshold)
    for axis, key in axes:
        names = sorted({t[key] for t in traits})
        for name in names:
            keep_gt = [g for g, t in zip(gts, traits) if t[key] == name]
            keep_idx = {i for i, t in enumerate(traits) if t[key] == name}
            keep_preds = [
                p for p, m in zip(ordered, pred_match)
                if m < 0 or m in keep_idx
            ]
            sensitivity[axis][name] = map_at(keep_preds, keep_gt, full_cfg)["average_map"]

    return {
        "tiou_threshold": tiou_threshold,
        "false_negative_rates": fn_rates,
        "bin_populations": {
            axis: {name: total for name, (total, _) in bin_counts[axis].items()}
            for axis in bin_counts
        },
        "false_positive_categories": categories,
        "sensitivity_raw_map": sensitivity,
        "num_ground_truth": len(gts),
        "num_predictions_considered": len(ordered),
    }


def _global_pred_matches(ordered_preds, gts, threshold):
    """Per-prediction matched GT index (-1 if unmatched), greedy per class."""
    match = np.full(len(ordered_preds), -1, dtype=int)
    labels = {p[3] for p in ordered_preds}
    for label in labels:
        idxs = [i for i, p in enumerate(ordered_preds) if p[3] == label]
        cls_gts_idx = [i for i, g in enumerate(gts) if g[3] == label]
        cls_gts = [gts[i] for i in cls_gts_idx]
        tp, mi = _match_class([ordered_preds[i] for i in idxs], cls_gts, threshold)
        for local, global_i in enumerate(idxs):
            if mi[local] >= 0:
                match[global_i] = cls_gts_idx[mi[local]]
    return match


# ---- report serialization ---------------------------------------------------

def write_profile_csv(report: dict, path):
    """Flatten the profiler report into one delimited table."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["section", "axis", "bin", "value"])
        for axis, rates in report["false_negative_rates"].items():
            for name, rate in sorted(rates.items()):
                writer.writerow(["false_negative_rate", axis, name, f"{rate:.6f}"])
        for name, count in report["false_positive_categories"].items():
            writer.writerow(["false_positive_count", "category", name, count])
        for axis, table in report["sensitivity_raw_map"].items():
            for name, value in sorted(table.items()):
                writer.writerow(["sensitivity_raw_map", axis, name, f"{value:.6f}"])


def write_pr_csv(preds, gts, thresholds, path):
    """Per-class PR points at each threshold, plot-ready."""
    labels = sorted({g[3] for g in gts})
    preds_by_label: dict = {}
    for p in preds:
        preds_by_label.setdefault(p[3], []).append(p)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "label", "recall", "precision"])
        for thr in thresholds:
            for label in labels:
                points = pr_curve(
                    preds_by_label.get(label, []),
                    [g for g in gts if g[3] == label],
                    thr,
                )
                for rec, prec in points:
                    writer.writerow([thr, label, f"{rec:.6f}", f"{prec:.6f}"])


def load_ground_truth_json(path) -> tuple[list, dict, dict]:
    """ActivityNet-style ground truth file.

    Returns (gt records, video durations, video metadata dict).
    """
    with open(path) as fh:
        payload = json.load(fh)
    database = payload["database"]
    gts = []
    durations = {}
    for video_id, entry in database.items():
        durations[video_id] = float(entry["duration"])
        for ann in entry.get("annotations", []):
            s, e = ann["segment"]
            gts.append((video_id, float(s), float(e), int(ann["label_id"])))
    return gts, durations, database


def load_predictions_json(path) -> list:
    with open(path) as fh:
        payload = json.load(fh)
    preds = []
    for video_id, dets in payload.items():
        for d in dets:
            preds.append((video_id, float(d["start_sec"]), float(d["end_sec"]),
                          int(d["label"]), float(d["score"])))
    return preds
