"""Figures for cost reports, training runs and latency benchmarks (rendered to files)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_cost_report(report, path) -> Path:
    """Per-stage parameters and FLOPs side by side as horizontal bars."""
    totals = report.stage_totals()
    stages = list(totals)
    params = np.array([totals[s][0] for s in stages]) / 1e6
    flops = np.array([totals[s][1] for s in stages]) / 1e9
    with plt.rc_context(STYLE):
        fig, (ax_p, ax_f) = plt.subplots(1, 2, figsize=(8, 0.4 * len(stages) + 1.6), sharey=True)
        y = np.arange(len(stages))
        ax_p.barh(y, params, color="tab:blue")
        ax_f.barh(y, flops, color="tab:orange")
        ax_p.set_yticks(y, stages)
        ax_p.invert_yaxis()
        ax_p.set_xlabel("parameters (M)")
        ax_f.set_xlabel(f"FLOPs (G, {report.convention})")
        ax_p.set_title(f"total {report.params / 1e6:.2f}M", loc="left")
        ax_f.set_title(f"total {report.flops / 1e9:.3f}G", loc="left")
        if report.title:
            fig.suptitle(report.title)
        return _save(fig, path)


def plot_family_comparison(reports: dict, path) -> Path:
    """Parameters against FLOPs, one labelled point per architecture."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 4))
        for name, rep in reports.items():
            ax.scatter(rep.flops / 1e9, rep.params / 1e6, s=30)
            ax.annotate(name, (rep.flops / 1e9, rep.params / 1e6), textcoords="offset points",
                        xytext=(4, 3), fontsize=8)
        conv = next(iter(reports.values())).convention if reports else ""
        ax.set_xlabel(f"FLOPs (G, {conv})")
        ax.set_ylabel("parameters (M)")
        return _save(fig, path)


def plot_training_history(rows: list[dict], path) -> Path:
    """Loss, validation accuracy and learning rate per epoch from metrics rows."""
    epochs = [r["epoch"] for r in rows]
    with plt.rc_context(STYLE):
        fig, (ax_l, ax_a, ax_r) = plt.subplots(1, 3, figsize=(10, 3))
        ax_l.plot(epochs, [r["train_loss"] for r in rows])
        ax_l.set_ylabel("train loss")
        ax_a.plot(epochs, [r["val_acc"] for r in rows], color="tab:green")
        ax_a.set_ylabel("validation accuracy")
        ax_a.set_ylim(0, 1)
        ax_r.plot(epochs, [r["lr"] for r in rows], color="tab:red")
        ax_r.set_ylabel("learning rate")
        for ax in (ax_l, ax_a, ax_r):
            ax.set_xlabel("epoch")
        return _save(fig, path)


def plot_latency(stats, path, title: str = "") -> Path:
    samples_ms = np.asarray(stats.samples) * 1e3
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.hist(samples_ms, bins=min(30, max(5, len(samples_ms) // 3)), color="tab:gray")
        for value, label, style in ((stats.p50, "p50", "-"), (stats.p95, "p95", "--")):
            ax.axvline(value * 1e3, color="k", linestyle=style, linewidth=1, label=f"{label} {value * 1e3:.2f} ms")
        ax.set_xlabel("forward latency (ms)")
        ax.set_ylabel("runs")
        ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        return _save(fig, path)
