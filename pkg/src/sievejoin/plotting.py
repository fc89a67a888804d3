"""Figures for benchmark reports.  Rendering is file-only (Agg backend)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

ENGINE_COLORS = {"hash": "#4c72b0", "sieve": "#dd8452", "nested": "#55a868", "bloomjoin2": "#8172b3"}


def _style():
    plt.rcParams.update({
        "font.size": 9,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "legend.frameon": False,
    })


def new_figure(width: float = 6.0, height: float | None = None):
    _style()
    if height is None:
        height = width * (math.sqrt(5) - 1) / 2
    return plt.subplots(figsize=(width, height))


def _grouped_bars(ax, labels: Sequence[str], series: dict[str, Sequence[float]], log: bool = False):
    n = max(len(series), 1)
    width = 0.8 / n
    for i, (engine, vals) in enumerate(series.items()):
        xs = [j + (i - (n - 1) / 2) * width for j in range(len(labels))]
        ax.bar(xs, vals, width, label=engine, color=ENGINE_COLORS.get(engine))
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    if log:
        ax.set_yscale("symlog", linthresh=1)
    ax.legend()


def _series(means: list[dict], field: str) -> tuple[list[str], dict[str, list[float]]]:
    labels = list(dict.fromkeys(m["instance"] for m in means))
    engines = list(dict.fromkeys(m["engine"] for m in means))
    lookup = {(m["instance"], m["engine"]): m.get(field, 0.0) for m in means}
    return labels, {e: [float(lookup.get((lab, e), 0.0) or 0.0) for lab in labels] for e in engines}


def render_report_figures(means: list[dict], out_dir: str | Path) -> list[Path]:
    """Intermediate-result and timing charts, one bar group per instance."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for field, ylabel, fname in (
        ("intermediate_total", "intermediate tuples", "intermediate.png"),
        ("total_us", "mean time per run (µs)", "timing.png"),
    ):
        labels, series = _series(means, field)
        fig, ax = new_figure(max(6.0, 0.6 * len(labels) + 2))
        _grouped_bars(ax, labels, series, log=True)
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        path = out / fname
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
