"""Plotting frontend for the finite-volume gradient-flow solver.

Consumes only the documented CSV/JSON output files; no solver logic."""

from .io import ReportSeries, SchemaError, read_report_csv, read_report_json, read_trajectory_csv
from .plots import fitted_slope, plot_convergence, plot_snapshots

__all__ = [
    "ReportSeries",
    "SchemaError",
    "fitted_slope",
    "plot_convergence",
    "plot_snapshots",
    "read_report_csv",
    "read_report_json",
    "read_trajectory_csv",
]
