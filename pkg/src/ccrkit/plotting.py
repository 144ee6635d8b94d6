"""SVG line charts (mean with sample-std error bars) of aggregated experiment records."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiments import Aggregate, aggregate_runs  # noqa: E402

# deterministic SVG output: fixed id salt, no timestamp
plt.rcParams["svg.hashsalt"] = "ccrkit"
plt.rcParams["svg.fonttype"] = "none"

# experiment -> (x axis, series axes, x label)
FIGURES = {
    "wer": ("test_wer", ("variant", "train_wer"), "test WER"),
    "clip": ("clip_n", ("variant", "mode"), "words clipped at test time"),
    "surveillance": ("candidates", ("variant", "mode"), "surveillance call-signs"),
    "ablation": ("test_wer", ("variant",), "test WER"),
    "missing": ("train_wer", ("variant",), "train WER"),
    "filter": ("pairs", ("filter", "dims", "mode"), "coordinate-command pairs per command"),
}


def _label(axes: Sequence[str], values: Sequence) -> str:
    parts = []
    for a, v in zip(axes, values):
        if v is None:
            continue
        parts.append(f"train WER {v:.2f}" if a == "train_wer" else str(v))
    return ", ".join(parts)


def plot_lines(aggs: Sequence[Aggregate], x_axis: str, series: Sequence[str], path, xlabel: str,
               title: str = "") -> Path:
    groups: dict[tuple, list[Aggregate]] = defaultdict(list)
    for a in aggs:
        groups[tuple(a.get(s) for s in series)].append(a)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for key in sorted(groups, key=lambda k: tuple(str(v) for v in k)):
        pts = sorted(groups[key], key=lambda a: a.get(x_axis))
        xs = [a.get(x_axis) for a in pts]
        ys = [a.mean for a in pts]
        err = [a.std or 0.0 for a in pts]
        ax.errorbar(xs, ys, yerr=err, marker="o", markersize=3, capsize=2, linewidth=1,
                    label=_label(series, key))
    ax.set_xlabel(xlabel)
    ax.set_ylabel("call-sign accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, linewidth=0.3, alpha=0.6)
    if title:
        ax.set_title(title)
    if groups:
        ax.legend(fontsize=6, ncol=2 if len(groups) > 6 else 1)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_experiments(records, out_dir) -> list[Path]:
    """One SVG per experiment present in ``records``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    aggs = aggregate_runs(records)
    written = []
    for name, (x_axis, series, xlabel) in FIGURES.items():
        sub = [a for a in aggs if a.get("experiment") == name]
        if sub:
            written.append(plot_lines(sub, x_axis, series, out_dir / f"{name}.svg", xlabel, name))
    return written
