"""Run reporting: delimited logs and matplotlib figures rendered to files.

Every writer that emits a CSV has a sibling that draws the same data as a
PNG next to it, so a run directory is inspectable without loading anything
into Python.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = [
    "write_iteration_csv",
    "plot_loss_curves",
    "write_metrics_json",
    "write_metrics_csv",
    "plot_metrics_bar",
    "sibling_png",
]

_ITER_FIELDS = ("t", "phi", "biharmonic", "penalty", "inverted")


def write_iteration_csv(path, records) -> None:
    """Write per-iteration records as CSV with a fixed column order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_ITER_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for rec in records:
            writer.writerow({k: rec[k] for k in _ITER_FIELDS})


def plot_loss_curves(path, records) -> None:
    """Render phi / energy curves and the inverted-tet count to a PNG."""
    records = list(records)
    ts = [r["t"] for r in records]
    fig, (ax_loss, ax_inv) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax_loss.plot(ts, [r["phi"] for r in records], label="render loss")
    ax_loss.plot(ts, [r["biharmonic"] for r in records], label="biharmonic")
    penalties = [r["penalty"] for r in records]
    if any(p > 0 for p in penalties):
        ax_loss.plot(ts, penalties, label="inversion penalty")
    ax_loss.set_yscale("log")
    ax_loss.set_ylabel("energy (log)")
    ax_loss.legend(loc="best", fontsize=8)
    ax_loss.grid(True, alpha=0.3)
    ax_inv.plot(ts, [r["inverted"] for r in records], color="tab:red")
    ax_inv.set_xlabel("iteration")
    ax_inv.set_ylabel("inverted tets")
    ax_inv.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_metrics_json(path, report) -> None:
    data = report.as_dict() if hasattr(report, "as_dict") else dict(report)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_metrics_csv(path, report) -> None:
    """Single-row CSV of the metric report, columns sorted by name."""
    data = report.as_dict() if hasattr(report, "as_dict") else dict(report)
    keys = sorted(data)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        writer.writerow([data[k] for k in keys])


def plot_metrics_bar(path, report) -> None:
    """Bar chart of the numeric metric values, one bar per metric."""
    data = report.as_dict() if hasattr(report, "as_dict") else dict(report)
    items = [
        (k, float(v))
        for k, v in sorted(data.items())
        if isinstance(v, (int, float)) and not isinstance(v, bool)
    ]
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(items)), 4))
    names = [k for k, _ in items]
    values = [v for _, v in items]
    ax.bar(range(len(items)), values, color="tab:blue")
    ax.set_xticks(range(len(items)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    for i, v in enumerate(values):
        ax.annotate(f"{v:.4g}", (i, v), ha="center", va="bottom", fontsize=7)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sibling_png(csv_path) -> str:
    """The figure path conventionally paired with a CSV path."""
    root, _ = os.path.splitext(str(csv_path))
    return root + ".png"
