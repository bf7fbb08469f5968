import math
import os

import numpy as np
import pytest

from wgflow_plots import (
    SchemaError,
    fitted_slope,
    plot_convergence,
    plot_snapshots,
    read_report_csv,
    read_trajectory_csv,
)
from wgflow_plots.cli import main


def write_report(path, taus, errors, hs=None):
    hs = hs or taus
    with open(path, "w") as fh:
        fh.write("level,h,tau,error,rate\n")
        prev = None
        for k, (h, tau, err) in enumerate(zip(hs, taus, errors)):
            rate = ""
            if prev is not None:
                rate = f"{(math.log(prev[1]) - math.log(err)) / (math.log(prev[0]) - math.log(tau)):.6f}"
            fh.write(f"{k},{h},{tau},{err!r},{rate}\n")
            prev = (tau, err)


def write_trajectory_1d(path, times, x, profiles):
    with open(path, "w") as fh:
        fh.write("step,time,cell,x,rho\n")
        for n, t in enumerate(times):
            for k in range(len(x)):
                fh.write(f"{n},{t},{k},{x[k]},{profiles[n][k]:.10e}\n")


def write_trajectory_2d(path, times, xs, ys, field, phases=None):
    with open(path, "w") as fh:
        cols = "step,time,cell,x,y,phase,rho" if phases else "step,time,cell,x,y,rho"
        fh.write(cols + "\n")
        for n, t in enumerate(times):
            cell = 0
            for j, y in enumerate(ys):
                for i, x in enumerate(xs):
                    if phases:
                        for p in phases:
                            fh.write(f"{n},{t},{cell},{x},{y},{p},{field(n, x, y, p):.8e}\n")
                    else:
                        fh.write(f"{n},{t},{cell},{x},{y},{field(n, x, y, 0):.8e}\n")
                    cell += 1


class TestConvergencePlot:
    def test_synthetic_quadratic_slope(self, tmp_path):
        taus = [0.1 / 2**k for k in range(5)]
        errors = [t**2 for t in taus]
        path = str(tmp_path / "report.csv")
        write_report(path, taus, errors)
        out = str(tmp_path / "fig.png")
        slopes = plot_convergence([path], out)
        assert os.path.exists(out)
        (slope,) = slopes.values()
        assert slope == pytest.approx(2.0, abs=0.01)

    def test_slope_matches_tabulated_rates(self, tmp_path):
        # on a clean power law the annotation equals every tabulated rate
        taus = [0.05 / 2**k for k in range(4)]
        errors = [0.3 * t**1.87 for t in taus]
        path = str(tmp_path / "report.csv")
        write_report(path, taus, errors)
        series = read_report_csv(path)
        slope = fitted_slope(series.tau, series.error)
        for rate in series.rate[1:]:
            assert slope == pytest.approx(rate, abs=0.01)

    def test_multiple_series(self, tmp_path):
        paths = []
        for i, power in enumerate((1.0, 2.0)):
            taus = [0.1 / 2**k for k in range(4)]
            p = str(tmp_path / f"s{i}.csv")
            write_report(p, taus, [t**power for t in taus])
            paths.append(p)
        out = str(tmp_path / "multi.png")
        slopes = plot_convergence(paths, out)
        assert len(slopes) == 2
        assert os.path.exists(out)

    def test_malformed_csv(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        with pytest.raises(SchemaError):
            read_report_csv(str(bad))

    def test_values_round_trip_unmodified(self, tmp_path):
        taus = [0.1, 0.05, 0.025]
        errors = [1.234567890123e-2, 3.210987654321e-3, 8.7654321e-4]
        path = str(tmp_path / "report.csv")
        write_report(path, taus, errors)
        series = read_report_csv(path)
        assert np.allclose(series.error, errors, rtol=0, atol=0)


class TestSnapshotPlots:
    def test_1d_profiles(self, tmp_path):
        x = np.linspace(0.01, 0.99, 50)
        times = [0.0, 0.02, 0.04, 0.06]
        profiles = [np.exp(-50 * (x - 0.5) ** 2) * (1 + n) for n in range(len(times))]
        path = str(tmp_path / "diffusion-evbdf2.csv")
        write_trajectory_1d(path, times, x, profiles)
        out = str(tmp_path / "figs")
        written = plot_snapshots(path, [0.02, 0.04, 0.06], out)
        assert len(written) == 3
        assert all(os.path.exists(p) for p in written)

    def test_single_cell_degenerate(self, tmp_path):
        path = str(tmp_path / "tiny.csv")
        write_trajectory_1d(path, [0.0], np.array([0.5]), [np.array([1.0])])
        written = plot_snapshots(path, [0.0], str(tmp_path / "figs"))
        assert len(written) == 1

    def test_2d_heatmap(self, tmp_path):
        xs = np.linspace(0.05, 0.95, 10)
        ys = np.linspace(0.05, 0.95, 10)
        path = str(tmp_path / "pm2d.csv")
        write_trajectory_2d(path, [0.0, 1e-3], xs, ys,
                            lambda n, x, y, p: 1.0 + n + x * y)
        written = plot_snapshots(path, [1e-3], str(tmp_path / "figs"))
        assert len(written) == 1

    def test_multiphase_heatmaps(self, tmp_path):
        xs = np.linspace(0.05, 0.95, 6)
        ys = np.linspace(0.05, 1.95, 12)
        times = [0.0, 8.0, 16.0, 24.0, 48.0, 120.0]
        path = str(tmp_path / "multiphase.csv")
        write_trajectory_2d(path, times, xs, ys,
                            lambda n, x, y, p: (y / 2 if p == 0 else 1 - y / 2),
                            phases=[0, 1])
        written = plot_snapshots(path, times[1:], str(tmp_path / "figs"), phase=1)
        assert len(written) == 5
        assert all("phase1" in p for p in written)

    def test_missing_time_lists_available(self, tmp_path):
        x = np.linspace(0.0, 1.0, 5)
        path = str(tmp_path / "t.csv")
        write_trajectory_1d(path, [0.0, 0.5], x, [x, 2 * x])
        with pytest.raises(ValueError, match="available times"):
            plot_snapshots(path, [0.25], str(tmp_path / "figs"))

    def test_trajectory_values_unmodified(self, tmp_path):
        x = np.linspace(0.0, 1.0, 7)
        vals = np.array([0.123456789, 1.0, 2.5, 0.0, 7.7, 3.14159, 9.9])
        path = str(tmp_path / "t.csv")
        write_trajectory_1d(path, [0.0], x, [vals])
        data = read_trajectory_csv(path)
        assert np.allclose(data.values[(0, -1)], vals, rtol=1e-10, atol=0)


class TestCli:
    def test_convergence_command(self, tmp_path, capsys):
        taus = [0.1 / 2**k for k in range(4)]
        path = str(tmp_path / "r.csv")
        write_report(path, taus, [t**2 for t in taus])
        out = str(tmp_path / "fig.png")
        assert main(["convergence", "--in", path, "--out", out]) == 0
        assert "slope 2.00" in capsys.readouterr().out

    def test_snapshots_command(self, tmp_path):
        x = np.linspace(0.0, 1.0, 8)
        path = str(tmp_path / "t.csv")
        write_trajectory_1d(path, [0.0, 0.1], x, [x, x**2])
        assert main(["snapshots", "--in", path, "--times", "0.1",
                     "--out", str(tmp_path / "figs")]) == 0

    def test_error_exit(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("nope\n")
        assert main(["convergence", "--in", str(bad), "--out",
                     str(tmp_path / "x.png")]) == 1
