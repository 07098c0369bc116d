"""Matplotlib figure rendering for metric and profiler reports.

The CLI report path writes these PNGs next to the CSV/JSON output; the
metric code itself stays figure-free.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def render_pr_curves(preds, gts, thresholds, out_path):
    """One panel per tIoU threshold, one PR line per class."""
    from .evaluation import pr_curve

    labels = sorted({g[3] for g in gts})
    preds_by_label: dict = {}
    for p in preds:
        preds_by_label.setdefault(p[3], []).append(p)
    n = len(thresholds)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.2), squeeze=False)
    for ax, thr in zip(axes[0], thresholds):
        for label in labels:
            points = pr_curve(
                preds_by_label.get(label, []),
                [g for g in gts if g[3] == label],
                thr,
            )
            if points:
                rec, prec = zip(*points)
                ax.plot(rec, prec, label=f"class {label}")
        ax.set_title(f"tIoU {thr}")
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
    axes[0][-1].legend(fontsize=7, loc="lower left")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def render_map_bars(report: dict, out_path):
    thresholds = list(report["map_per_threshold"].keys())
    values = [report["map_per_threshold"][t] for t in thresholds]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar([str(t) for t in thresholds], values, color="#4878b0")
    ax.axhline(report["average_map"], color="#d1605e", linestyle="--",
               label=f"average {report['average_map']:.3f}")
    ax.set_xlabel("tIoU threshold")
    ax.set_ylabel("mAP")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def render_profile(report: dict, out_path):
    """FN rates per bin, FP category breakdown, sensitivity per bin."""
    fn = report["false_negative_rates"]
    sens = report["sensitivity_raw_map"]
    fp = report["false_positive_categories"]
    fig, axes = plt.subplots(1, 3, figsize=(12.5, 3.4))

    ax = axes[0]
    offset = 0
    ticks, tick_labels = [], []
    for axis_name, rates in fn.items():
        names = sorted(rates)
        ax.bar(range(offset, offset + len(names)),
               [rates[n] for n in names], label=axis_name)
        ticks.extend(range(offset, offset + len(names)))
        tick_labels.extend(names)
        offset += len(names) + 1
    ax.set_xticks(ticks)
    ax.set_xticklabels(tick_labels, fontsize=7)
    ax.set_ylabel("false negative rate")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7)

    ax = axes[1]
    cats = list(fp)
    ax.bar(range(len(cats)), [fp[c] for c in cats], color="#6aa56a")
    ax.set_xticks(range(len(cats)))
    ax.set_xticklabels(cats, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("count")
    ax.set_title("false positive categories")

    ax = axes[2]
    offset = 0
    ticks, tick_labels = [], []
    for axis_name, table in sens.items():
        names = sorted(table)
        ax.bar(range(offset, offset + len(names)),
               [table[n] for n in names], label=axis_name)
        ticks.extend(range(offset, offset + len(names)))
        tick_labels.extend(names)
        offset += len(names) + 1
    ax.set_xticks(ticks)
    ax.set_xticklabels(tick_labels, fontsize=7)
    ax.set_ylabel("raw mAP")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7)

    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def render_loss_history(history: list[dict], out_path):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.5, 3.2))
    steps = [h["step"] for h in history]
    ax1.plot(steps, [h["loss_total"] for h in history], label="total")
    ax1.plot(steps, [h["loss_cls"] for h in history], label="cls", alpha=0.7)
    ax1.plot(steps, [h["loss_reg"] for h in history], label="reg", alpha=0.7)
    ax1.set_yscale("log")
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    ax2.plot(steps, [h["lr"] for h in history], color="#d1605e")
    ax2.set_xlabel("step")
    ax2.set_ylabel("learning rate")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
