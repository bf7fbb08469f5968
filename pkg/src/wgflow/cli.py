"""Command-line interface.

Subcommands: ``run`` (single trajectory), ``converge`` (level sweep with
optional reference check), the three demos, ``extrapolate`` (standalone
density extrapolation between two CSV files) and ``oracle-check``
(self-tests of the closed-form references).

Exit codes: 0 success, 2 usage error, 3 solver failure, 4 reference-check
mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import harness, oracles
from .energies import fokker_planck_energy, porous_medium_energy
from .extrapolation import extrapolate
from .mesh import build_cartesian_mesh, build_interval_mesh
from .schemes import SchemeConfig, run_flow
from .solver import StepFailure

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOLVER = 3
EXIT_CHECK = 4

_SOLVER_KEYS = (
    "barrier_init",
    "barrier_shrink",
    "barrier_floor",
    "newton_tol",
    "max_newton",
    "fraction_to_boundary",
    "max_backtracks",
    "stage_tol_factor",
)


def _split_solver_overrides(cfg: dict) -> tuple[dict, dict]:
    solver = {k: cfg.pop(k) for k in list(cfg) if k in _SOLVER_KEYS}
    return cfg, solver


def _gather_config(args, extras: list[str]) -> dict:
    cfg: dict = {}
    if getattr(args, "config", None):
        cfg.update(harness.load_config(args.config))
    cfg = harness.apply_overrides(cfg, extras)
    return cfg


def cmd_run(args, extras) -> int:
    cfg = _gather_config(args, extras)
    cfg, solver_overrides = _split_solver_overrides(cfg)
    problem = cfg.pop("problem", "fp1d")
    scheme = cfg.pop("scheme", "evbdf2")
    tau = float(cfg.pop("tau", 0.01))
    T = float(cfg.pop("T", cfg.pop("t", 0.05)))
    g = float(cfg.pop("g", 1.0))
    delta = float(cfg.pop("delta", 2.0))
    scheme_kwargs = {
        k: cfg.pop(k)
        for k in ("alpha", "hj_mode", "extrapolation_base", "init_substeps",
                  "vim_fresh_potential", "normalize_mass")
        if k in cfg
    }

    if problem == "fp1d":
        mesh, energy, rho0, _ = harness.fp1d_problem(int(cfg.pop("n_cells", 50)), g)
    elif problem == "fp2d":
        mesh, energy, rho0, _ = harness.fp2d_problem(int(cfg.pop("nx", 16)), g)
    elif problem == "pm2d":
        mesh, energy, rho0, _ = harness.pm2d_problem(
            int(cfg.pop("nx", 16)), delta, harness.PM_T0.get(delta, 1e-4)
        )
    elif problem == "diffusion1d":
        mesh = build_interval_mesh(int(cfg.pop("n_cells", 50)), (0.0, 1.0))
        energy = fokker_planck_energy(mesh)
        rho0 = np.exp(-50.0 * (mesh.centers[:, 0] - 0.5) ** 2)
    elif problem == "pm1d":
        mesh = build_interval_mesh(int(cfg.pop("n_cells", 50)), (0.0, 1.0))
        energy = porous_medium_energy(mesh, delta, V=lambda p: -p[0])
        rho0 = np.where(mesh.centers[:, 0] <= 0.3, 1.0, 0.0)
    else:
        print(f"error: unknown problem {problem!r}", file=sys.stderr)
        return EXIT_USAGE
    if cfg:
        print(f"error: unknown config keys {sorted(cfg)}", file=sys.stderr)
        return EXIT_USAGE

    os.makedirs(args.out, exist_ok=True)
    config = SchemeConfig(scheme=scheme, tau=tau, T=T, **scheme_kwargs)
    traj = run_flow(mesh, energy, rho0, config, harness._solver_config(solver_overrides))
    harness.trajectory_to_csv(mesh, traj, os.path.join(args.out, "trajectory.csv"))
    summary = harness.trajectory_summary(mesh, traj, config)
    summary["problem"] = problem
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    if not traj.complete:
        print(f"solver failure: {traj.failure}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"wrote {args.out}/trajectory.csv ({len(traj.times)} states)")
    return EXIT_OK


def cmd_converge(args, extras) -> int:
    cfg = _gather_config(args, extras)
    cfg, solver_overrides = _split_solver_overrides(cfg)
    delta = float(cfg.pop("delta", args.delta))
    g = float(cfg.pop("g", 1.0))
    levels = cfg.pop("levels", args.levels)
    workers = int(cfg.pop("workers", args.workers))
    if cfg:
        print(f"error: unknown config keys {sorted(cfg)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        report = harness.run_convergence(
            args.preset,
            delta=delta,
            g=g,
            levels=levels,
            workers=workers,
            solver_overrides=solver_overrides,
        )
    except StepFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.join(args.out, report.preset)
    report.to_csv(stem + ".csv")
    report.to_json(stem + ".json")
    for lv in report.levels:
        rate = "--" if lv.rate is None else f"{lv.rate:.3f}"
        print(f"level {lv.level}: h={lv.h:.5g} tau={lv.tau:.5g} "
              f"error={lv.error:.4e} rate={rate}")
    print(f"wrote {stem}.csv and {stem}.json ({report.wall_time_s:.1f}s)")
    if args.check:
        failures = harness.check_report(report, delta=delta)
        if failures:
            for f in failures:
                print(f"CHECK FAIL: {f}", file=sys.stderr)
            return EXIT_CHECK
        print("reference check passed")
    return EXIT_OK


def _demo_exit(summary: dict, expect_failures: tuple[str, ...] = ()) -> int:
    schemes = summary.get("schemes", {})
    for scheme, info in schemes.items():
        if info["status"] != "ok" and scheme not in expect_failures:
            print(f"solver failure in {scheme}: {info['failure']}", file=sys.stderr)
            return EXIT_SOLVER
    return EXIT_OK


def cmd_demo_diffusion(args, extras) -> int:
    cfg = _gather_config(args, extras)
    cfg, solver_overrides = _split_solver_overrides(cfg)
    summary = harness.demo_diffusion(args.out, solver_overrides=solver_overrides)
    print(f"wrote diffusion demo outputs to {args.out}")
    return _demo_exit(summary)


def cmd_demo_pm(args, extras) -> int:
    cfg = _gather_config(args, extras)
    cfg, solver_overrides = _split_solver_overrides(cfg)
    summary = harness.demo_porous_medium(args.out, solver_overrides=solver_overrides)
    for scheme, info in summary["schemes"].items():
        tag = "ok" if info["status"] == "ok" else f"failed at step {info['failure']['step']}"
        print(f"{scheme}: {tag}")
    print(f"wrote porous-medium demo outputs to {args.out}")
    # the naive multistep scheme is expected to fail on this problem
    return _demo_exit(summary, expect_failures=("bdf2-naive",))


def cmd_demo_multiphase(args, extras) -> int:
    cfg = _gather_config(args, extras)
    cfg, solver_overrides = _split_solver_overrides(cfg)
    kwargs = {}
    for key in ("nx", "ny", "tau", "T", "scheme"):
        if key in cfg:
            kwargs[key] = cfg.pop(key)
    if cfg:
        print(f"error: unknown config keys {sorted(cfg)}", file=sys.stderr)
        return EXIT_USAGE
    summary = harness.demo_multiphase(args.out, solver_overrides=solver_overrides, **kwargs)
    if summary["status"] != "ok":
        print(f"solver failure: {summary['failure']}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"wrote multiphase demo outputs to {args.out}")
    return EXIT_OK


def _read_density_csv(path: str, n_cells: int) -> np.ndarray:
    rho = np.full(n_cells, np.nan)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        try:
            cell_col, rho_col = header.index("cell"), header.index("rho")
        except ValueError as exc:
            raise ValueError(f"{path}: header must contain 'cell' and 'rho'") from exc
        for line in fh:
            parts = line.strip().split(",")
            if parts == [""]:
                continue
            rho[int(parts[cell_col])] = float(parts[rho_col])
    if np.any(np.isnan(rho)):
        raise ValueError(f"{path}: missing rows for some of the {n_cells} cells")
    return rho


def cmd_extrapolate(args, extras) -> int:
    cfg = _gather_config(args, extras)
    cfg, solver_overrides = _split_solver_overrides(cfg)
    if cfg:
        print(f"error: unknown config keys {sorted(cfg)}", file=sys.stderr)
        return EXIT_USAGE
    a, b = (float(v) for v in args.interval.split(","))
    mesh = build_interval_mesh(args.cells, (a, b))
    try:
        mu = _read_density_csv(args.mu, mesh.n_cells)
        nu = _read_density_csv(args.nu, mesh.n_cells)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        rho = extrapolate(mesh, mu, nu, args.alpha,
                          harness._solver_config(solver_overrides))
    except (StepFailure, ValueError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    with open(args.out_file, "w", encoding="utf-8") as fh:
        fh.write("cell,x,rho\n")
        for k in range(mesh.n_cells):
            fh.write(f"{k},{mesh.centers[k,0]:.10g},{rho[k]:.10e}\n")
    print(f"wrote {args.out_file}")
    return EXIT_OK


def cmd_oracle_check(args, extras) -> int:
    checks: list[tuple[str, bool, str]] = []

    val = oracles.fp_exact(0.0, 0.0, 1.0)
    expected = np.pi + np.pi * np.exp(-0.5)
    checks.append(("fp_exact(0,0,1)", abs(val - expected) < 1e-12,
                   f"{val:.6f} vs {expected:.6f}"))

    from scipy.integrate import quad

    mass0 = quad(lambda x: oracles.fp_exact(0.0, x, 1.0), 0, 1, epsabs=1e-13)[0]
    masses = [quad(lambda x: oracles.fp_exact(t, x, 1.0), 0, 1, epsabs=1e-13)[0]
              for t in (0.1, 0.25)]
    drift = max(abs(m - mass0) for m in masses)
    checks.append(("fp_exact mass constancy", drift < 1e-10, f"drift {drift:.2e}"))

    r_sup = oracles.barenblatt_support_radius(1e-4, 2.0, 2)
    mass = quad(
        lambda r: 2 * np.pi * r * oracles.barenblatt(1e-4, np.array([r, 0.0]), 2.0, 2,
                                                     x0=np.zeros(2)),
        0.0, r_sup, epsabs=1e-12,
    )[0]
    checks.append(("barenblatt unit mass", abs(mass - 1.0) < 1e-8, f"mass {mass:.10f}"))

    rng = np.random.default_rng(7)
    q0 = np.sort(rng.normal(size=64))
    q1 = np.sort(rng.normal(size=64))
    ex = oracles.metric_extrapolation_1d(q0, q1, 4.0 / 3.0)
    mono = bool(np.all(np.diff(ex) >= -1e-14))
    checks.append(("monotone extrapolation output", mono, "ordered"))
    w_ratio = oracles.w2_1d(q1, ex) <= (1.0 / 3.0) * oracles.w2_1d(q0, q1) + 1e-12
    checks.append(("extrapolation dissipativity", bool(w_ratio), "bounded"))

    failures = 0
    for name, ok, detail in checks:
        status = "PASS" if ok else "FAIL"
        print(f"[{status}] {name}: {detail}")
        failures += 0 if ok else 1
    return EXIT_OK if failures == 0 else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wgflow",
        description="Finite-volume solver for Wasserstein gradient flows",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--config", default=None, help="flat key=value config file")

    p_run = sub.add_parser("run", help="run a single trajectory")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_conv = sub.add_parser("converge", help="run a convergence preset")
    common(p_conv)
    p_conv.add_argument("--preset", required=True, choices=harness.PRESET_NAMES)
    p_conv.add_argument("--delta", type=float, default=2.0)
    p_conv.add_argument("--levels", type=int, default=None,
                        help="restrict to the first K levels")
    p_conv.add_argument("--workers", type=int, default=1)
    p_conv.add_argument("--check", action="store_true",
                        help="compare against embedded reference values")
    p_conv.set_defaults(func=cmd_converge)

    for name, fn in (("demo-diffusion", cmd_demo_diffusion),
                     ("demo-pm", cmd_demo_pm),
                     ("demo-multiphase", cmd_demo_multiphase)):
        p = sub.add_parser(name, help=f"run the {name[5:]} demo")
        common(p)
        p.set_defaults(func=fn)

    p_ex = sub.add_parser("extrapolate", help="extrapolate a density pair")
    common(p_ex)
    p_ex.add_argument("--mu", required=True, help="CSV with the time-0 density")
    p_ex.add_argument("--nu", required=True, help="CSV with the time-1 density")
    p_ex.add_argument("--alpha", type=float, default=4.0 / 3.0)
    p_ex.add_argument("--cells", type=int, required=True)
    p_ex.add_argument("--interval", default="0,1", help="a,b domain endpoints")
    p_ex.add_argument("--out-file", default="extrapolated.csv")
    p_ex.set_defaults(func=cmd_extrapolate)

    p_oc = sub.add_parser("oracle-check", help="self-test the closed-form references")
    common(p_oc)
    p_oc.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    bad = [e for e in extras if not (e.startswith("--") and "=" in e)]
    if bad:
        parser.print_usage(sys.stderr)
        print(f"error: unrecognized arguments {bad}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, extras)
    except StepFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
