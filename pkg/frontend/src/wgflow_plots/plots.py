"""Convergence and snapshot figures from solver output files."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import ReportSeries, TrajectoryData, read_report_csv, read_trajectory_csv


def fitted_slope(tau: np.ndarray, error: np.ndarray) -> float:
    """Least-squares slope of log(error) against log(tau).

    On a clean power law this equals every pairwise convergence rate.
    """
    if len(tau) < 2:
        raise ValueError("need at least two levels to fit a slope")
    return float(np.polyfit(np.log(tau), np.log(error), 1)[0])


def plot_convergence(inputs: list[str], out_path: str) -> dict[str, float]:
    """Log-log error-versus-step plot with per-series slope annotations.

    Returns the fitted slope per series (also drawn on the figure).
    """
    series = [s if isinstance(s, ReportSeries) else read_report_csv(s) for s in inputs]
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    slopes: dict[str, float] = {}
    for s in series:
        slope = fitted_slope(s.tau, s.error)
        slopes[s.name] = slope
        ax.loglog(s.tau, s.error, "o-", label=f"{s.name} (slope {slope:.2f})")
    ax.set_xlabel("time step")
    ax.set_ylabel("space-time L1 error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return slopes


def _match_time(data: TrajectoryData, t: float) -> int:
    for i, s in enumerate(data.times):
        if abs(s - t) <= 1e-9 * max(1.0, abs(t)) + 1e-12:
            return i
    available = ", ".join(f"{s:g}" for s in data.times)
    raise ValueError(f"time {t:g} not in trajectory; available times: {available}")


def plot_snapshots(
    input_path: str,
    times: list[float],
    out_dir: str,
    phase: int | None = None,
) -> list[str]:
    """One density figure per requested time: 1D profiles or 2D heatmaps.

    For multiphase files ``phase`` selects the saturation field (default:
    first phase). Returns the written file paths.
    """
    data = read_trajectory_csv(input_path)
    if data.has_phases:
        phase_key = data.phases[0] if phase is None else int(phase)
        if phase_key not in data.phases:
            raise ValueError(f"phase {phase_key} not in file; available: {data.phases}")
    else:
        phase_key = data.phases[0] if data.phases else -1
    os.makedirs(out_dir, exist_ok=True)
    written = []
    stem = os.path.basename(input_path).rsplit(".", 1)[0]
    for t in times:
        idx = _match_time(data, t)
        vals = data.values[(idx, phase_key)]
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        if data.y is None:
            order = np.argsort(data.x)
            ax.plot(data.x[order], vals[order], "-", lw=1.5)
            ax.set_xlabel("x")
            ax.set_ylabel("density")
        else:
            xs = np.unique(data.x)
            ys = np.unique(data.y)
            if len(xs) * len(ys) == len(vals):
                grid = np.full((len(ys), len(xs)), np.nan)
                ix = np.searchsorted(xs, data.x)
                iy = np.searchsorted(ys, data.y)
                grid[iy, ix] = vals
                pcm = ax.pcolormesh(xs, ys, grid, shading="nearest")
            else:  # irregular layout: fall back to a scatter rendering
                pcm = ax.scatter(data.x, data.y, c=vals, s=12, marker="s")
            fig.colorbar(pcm, ax=ax)
            ax.set_xlabel("x")
            ax.set_ylabel("y")
            ax.set_aspect("equal")
        suffix = f"-phase{phase_key}" if data.has_phases else ""
        ax.set_title(f"t = {data.times[idx]:g}")
        path = os.path.join(out_dir, f"{stem}{suffix}-t{data.times[idx]:g}.png")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written
