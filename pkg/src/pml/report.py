"""Figure rendering for run directories (headless Agg backend)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_training_curves(result, path) -> None:
    reports = result.reports
    x = np.arange(1, len(reports) + 1)
    loss = [r.train_loss for r in reports]
    train_mae = [r.train_mae for r in reports]
    val_mae = [r.val_mae for r in reports]
    tail_mae = [r.val_tail_mae for r in reports]
    stages = [r.stage for r in reports]

    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax0.plot(x, loss, color="tab:red", lw=1.5)
    ax0.set_ylabel("train loss")
    ax1.plot(x, train_mae, label="train MAE", color="tab:blue", lw=1.2)
    ax1.plot(x, val_mae, label="val MAE", color="tab:orange", lw=1.5)
    ax1.plot(x, tail_mae, label="val tail MAE", color="tab:green", lw=1.2, ls="--")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("MAE")
    ax1.legend(loc="upper right", fontsize=8)
    for ax in (ax0, ax1):
        for i in range(1, len(reports)):
            if stages[i] != stages[i - 1]:
                ax.axvline(i + 0.5, color="gray", lw=0.8, ls=":")
    ax0.set_title("training curves (dotted lines mark curriculum stage changes)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_per_class_mae(result, path) -> None:
    if result.test_report is None:
        return
    per_class = result.test_report.per_class_mae
    counts = result.train_class_counts
    c = len(per_class)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(np.arange(c), per_class, color="tab:blue", alpha=0.8)
    ax.set_xlabel("class")
    ax.set_ylabel("test MAE", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(np.arange(c), counts, color="tab:red", lw=1.2, marker=".")
    ax2.set_yscale("log")
    ax2.set_ylabel("train count (log)", color="tab:red")
    ax.set_title("per-class test MAE vs training frequency")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_distributions(result, path, max_panels: int = 12) -> None:
    if result.test_report is None:
        return
    tr = result.test_report
    k = min(max_panels, len(tr.predictions))
    if k == 0:
        return
    cols = 4
    rows = (k + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3 * cols, 2.2 * rows), squeeze=False)
    for i in range(rows * cols):
        ax = axes[i // cols][i % cols]
        if i >= k:
            ax.axis("off")
            continue
        probs = tr.probabilities[i]
        ax.fill_between(np.arange(len(probs)), probs, color="tab:blue", alpha=0.6)
        ax.axvline(tr.true_ages[i], color="tab:red", lw=1.2)
        ax.set_title(f"true {int(tr.true_ages[i])}  pred {tr.predictions[i]:.1f}", fontsize=8)
        ax.set_yticks([])
    fig.suptitle("predicted test distributions (red line: true age)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_run_figures(result, run_dir) -> dict[str, str]:
    paths = {}
    curves = os.path.join(run_dir, "training_curves.png")
    render_training_curves(result, curves)
    paths["training_curves"] = curves
    if result.test_report is not None:
        per_class = os.path.join(run_dir, "per_class_mae.png")
        render_per_class_mae(result, per_class)
        paths["per_class_mae"] = per_class
        if result.config.distribution_samples > 0 and len(result.test_report.predictions) > 0:
            dists = os.path.join(run_dir, "distributions.png")
            render_distributions(result, dists, result.config.distribution_samples)
            paths["distributions_figure"] = dists
    return paths
