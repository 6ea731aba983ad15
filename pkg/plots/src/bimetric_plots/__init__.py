"""Deterministic SVG rendering of bimetric sweep CSVs."""

from .render import (PlotSpec, build_ablation, build_grid, render_ablation,
                     render_grid)

__version__ = "0.1.0"
