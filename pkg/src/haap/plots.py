"""SVG figures for training curves and the accuracy/FLOPs trade-off across refinement rounds."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed ids and no date stamp keep reruns byte-identical
plt.rcParams["svg.hashsalt"] = "haap"
_META = {"Date": None, "Creator": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(Path(path), format="svg", metadata=_META)
    plt.close(fig)


def loss_curve(path, runs: dict[str, list[dict]]):
    """One loss line per run, with validation accuracy on a twin axis where recorded."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    acc_ax = ax.twinx()
    for name, metrics in runs.items():
        line, = ax.plot([m["step"] for m in metrics], [m["loss"] for m in metrics], lw=1, label=f"{name} loss")
        val = [(m["step"], m["val_acc"]) for m in metrics if m.get("val_acc") is not None]
        if val:
            acc_ax.plot(*zip(*val), ls="--", color=line.get_color(), label=f"{name} val acc")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    acc_ax.set_ylabel("validation word accuracy")
    acc_ax.set_ylim(0, 1)
    handles = ax.get_legend_handles_labels()[0] + acc_ax.get_legend_handles_labels()[0]
    if handles:
        ax.legend(handles=handles, fontsize=7, loc="center right")
    _save(fig, path)


def accuracy_flops_vs_ir(path, rounds: list[int], series: dict[str, tuple[list[float], list[int]]]):
    """Accuracy (left) and GFLOPs (right) against the number of refinement rounds."""
    fig, (acc_ax, fl_ax) = plt.subplots(1, 2, figsize=(8, 3.2))
    for name, (acc, fl) in series.items():
        acc_ax.plot(rounds, [100 * a for a in acc], marker="o", label=name)
        fl_ax.plot(rounds, [f / 1e9 for f in fl], marker="s", label=name)
    for ax, ylabel in ((acc_ax, "word accuracy (%)"), (fl_ax, "GFLOPs per image")):
        ax.set_xlabel("refinement rounds")
        ax.set_ylabel(ylabel)
        ax.set_xticks(rounds)
        ax.legend(fontsize=7)
    _save(fig, path)
