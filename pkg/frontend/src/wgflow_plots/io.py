"""Readers for the solver's CSV/JSON output schemas.

Convergence reports: ``level,h,tau,error,rate`` (rate empty on the first
level). Trajectories: ``step,time,cell,x[,y][,phase],rho``. Values are
passed through unmodified; no resampling happens here.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np


class SchemaError(ValueError):
    """The file does not follow the documented output schema."""


@dataclass
class ReportSeries:
    name: str
    h: np.ndarray
    tau: np.ndarray
    error: np.ndarray
    rate: list  # None for levels without a rate


def read_report_csv(path: str, name: str | None = None) -> ReportSeries:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"level", "h", "tau", "error", "rate"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise SchemaError(f"{path}: expected columns {sorted(required)}, "
                              f"got {reader.fieldnames}")
        h, tau, err, rate = [], [], [], []
        for row in reader:
            try:
                h.append(float(row["h"]))
                tau.append(float(row["tau"]))
                err.append(float(row["error"]))
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{path}: bad numeric row {row}") from exc
            rate.append(float(row["rate"]) if row["rate"] not in ("", None) else None)
    if not h:
        raise SchemaError(f"{path}: no levels found")
    series_name = name or path.rsplit("/", 1)[-1].removesuffix(".csv")
    return ReportSeries(name=series_name, h=np.array(h), tau=np.array(tau),
                        error=np.array(err), rate=rate)


def read_report_json(path: str) -> ReportSeries:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        levels = payload["levels"]
        h = np.array([lv["h"] for lv in levels], dtype=float)
        tau = np.array([lv["tau"] for lv in levels], dtype=float)
        err = np.array([lv["error"] for lv in levels], dtype=float)
        rate = [lv.get("rate") for lv in levels]
        name = payload.get("preset", path)
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: malformed report JSON") from exc
    return ReportSeries(name=name, h=h, tau=tau, error=err, rate=rate)


@dataclass
class TrajectoryData:
    path: str
    times: list[float]
    x: np.ndarray
    y: np.ndarray | None
    phases: list[int]
    # values[(time_index, phase)] -> density array over cells
    values: dict = field(default_factory=dict)

    @property
    def has_phases(self) -> bool:
        return len(self.phases) > 1 or (self.phases and self.phases != [-1])


def read_trajectory_csv(path: str) -> TrajectoryData:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if not {"step", "time", "cell", "x", "rho"}.issubset(cols):
            raise SchemaError(f"{path}: expected trajectory columns, got {cols}")
        has_y = "y" in cols
        has_phase = "phase" in cols
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: empty trajectory")

    times: list[float] = []
    coords: dict[int, tuple] = {}
    raw: dict[tuple, dict[int, float]] = {}
    for row in rows:
        try:
            t = float(row["time"])
            cell = int(row["cell"])
            phase = int(row["phase"]) if has_phase else -1
            rho = float(row["rho"])
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: bad row {row}") from exc
        if not times or all(abs(t - s) > 1e-12 * max(1.0, abs(s)) for s in times):
            times.append(t)
        t_idx = min(range(len(times)), key=lambda i: abs(times[i] - t))
        coords[cell] = (float(row["x"]), float(row["y"]) if has_y else None)
        raw.setdefault((t_idx, phase), {})[cell] = rho

    n_cells = max(coords) + 1
    x = np.full(n_cells, np.nan)
    y = np.full(n_cells, np.nan) if has_y else None
    for cell, (cx, cy) in coords.items():
        x[cell] = cx
        if has_y:
            y[cell] = cy
    phases = sorted({p for (_, p) in raw})
    data = TrajectoryData(path=path, times=times, x=x, y=y, phases=phases)
    for key, cell_map in raw.items():
        vals = np.full(n_cells, np.nan)
        for cell, rho in cell_map.items():
            vals[cell] = rho
        data.values[key] = vals
    return data
