"""Render sweep CSVs as figure grids.

The plotter does zero numeric work: every plotted value is read
verbatim from the CSV, points below the y-floor are dropped (matching
the benchmark's truncated y-axis), and output is deterministic SVG so
renders can be compared byte for byte.
"""

from __future__ import annotations

import csv
import sys
from dataclasses import dataclass, field
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

METRICS = ("ndcg_at_10", "recall_at_10")
X_COLUMN = "mean_calls_D"

# Fixed salt and stripped timestamps keep the SVG bytes reproducible.
matplotlib.rcParams["svg.hashsalt"] = "bimetric-plots"

_PALETTE = ["#1f77b4", "#d62728", "#ff7f0e", "#2ca02c", "#9467bd",
            "#8c564b", "#7f7f7f"]
_MARKERS = ["o", "s", "^", "D", "v", "P", "X"]


@dataclass(frozen=True)
class PlotSpec:
    csv_paths: tuple
    metric: str
    out_path: str
    floor: float = 0.0
    style_map: Optional[dict] = field(default=None)

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if not self.csv_paths:
            raise ValueError("at least one CSV path is required")


def read_rows(paths, metric, require=()):
    rows = []
    for path in paths:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for column in (metric, X_COLUMN, *require):
                if column not in header:
                    raise ValueError(f"{path}: missing column {column!r}")
            rows.extend(reader)
    if not rows:
        raise ValueError("no data rows in the given CSVs")
    return rows


def _style(name, index, style_map):
    if style_map and name in style_map:
        return dict(style_map[name])
    return {"color": _PALETTE[index % len(_PALETTE)],
            "marker": _MARKERS[index % len(_MARKERS)]}


def _curve(rows, metric):
    pts = sorted((float(r[X_COLUMN]), float(r[metric])) for r in rows)
    return [p[0] for p in pts], [p[1] for p in pts]


def _save(fig, out_path):
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def render_grid(spec: PlotSpec) -> str:
    """One subplot per dataset tag, one curve per method."""
    _save(build_grid(spec), spec.out_path)
    return spec.out_path


def build_grid(spec: PlotSpec):
    rows = read_rows(spec.csv_paths, spec.metric)
    datasets = sorted({r["dataset"] for r in rows})
    methods = sorted({r["method"] for r in rows})
    for tag in datasets:
        for method in methods:
            cell = [r for r in rows
                    if r["dataset"] == tag and r["method"] == method]
            if cell and len(cell) < 2:
                raise ValueError(
                    f"dataset {tag!r} method {method!r} has a single budget "
                    "point; need at least 2 per curve")

    cols = min(3, len(datasets))
    nrows = (len(datasets) + cols - 1) // cols
    fig, axes = plt.subplots(nrows, cols, squeeze=False,
                             figsize=(4.2 * cols, 3.2 * nrows))
    for slot, tag in enumerate(datasets):
        ax = axes[slot // cols][slot % cols]
        for idx, method in enumerate(methods):
            cell = [r for r in rows
                    if r["dataset"] == tag and r["method"] == method]
            if not cell:
                continue
            xs, ys = _curve(cell, spec.metric)
            keep = [(x, y) for x, y in zip(xs, ys) if y >= spec.floor]
            if not keep:
                print(f"warning: dataset {tag} method {method} is entirely "
                      f"below the floor {spec.floor}; curve omitted",
                      file=sys.stderr)
                continue
            ax.plot([x for x, _ in keep], [y for _, y in keep],
                    label=method, **_style(method, idx, spec.style_map))
        ax.set_title(tag)
        ax.set_xlabel("expensive distance calls")
        ax.set_ylabel(spec.metric)
        if spec.floor > 0:
            ax.set_ylim(bottom=spec.floor)
        ax.legend(loc="lower right", fontsize=8)
    for slot in range(len(datasets), nrows * cols):
        axes[slot // cols][slot % cols].axis("off")
    fig.tight_layout()
    return fig


def render_ablation(spec: PlotSpec) -> str:
    """Single subplot, one curve per second-stage start mode."""
    _save(build_ablation(spec), spec.out_path)
    return spec.out_path


def build_ablation(spec: PlotSpec):
    rows = read_rows(spec.csv_paths, spec.metric, require=("start_mode",))
    modes = sorted({r["start_mode"] for r in rows if r["start_mode"]})
    if not modes:
        raise ValueError("no start_mode values found")
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for idx, mode in enumerate(modes):
        cell = [r for r in rows if r["start_mode"] == mode]
        xs, ys = _curve(cell, spec.metric)
        keep = [(x, y) for x, y in zip(xs, ys) if y >= spec.floor]
        if not keep:
            print(f"warning: start mode {mode} is entirely below the floor "
                  f"{spec.floor}; curve omitted", file=sys.stderr)
            continue
        ax.plot([x for x, _ in keep], [y for _, y in keep],
                label=mode, **_style(mode, idx, spec.style_map))
    ax.set_xlabel("expensive distance calls")
    ax.set_ylabel(spec.metric)
    if spec.floor > 0:
        ax.set_ylim(bottom=spec.floor)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    return fig
