"""Convergence-figure rendering for experiment CSVs."""

from .render import PlotError, PlotSpec, fit_slope, render

__version__ = "0.1.0"
