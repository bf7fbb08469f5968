"""Time-stepping drivers and trajectory assembly.

Four schemes over a common inner-step machinery:

- ``ljko``: first-order linearized JKO steps (also used to produce the
  second starting density of the two-history schemes),
- ``evbdf2``: geodesic extrapolation of the last two densities to time
  ``alpha`` followed by an inner step of length ``tau*(1-beta)``,
- ``vim``: a half-length inner step followed by extrapolation at time 2,
- ``bdf2-naive``: direct stationary-point attempt of the two-history
  multistep objective (may fail; failures are recorded, not raised).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import energies as en
from .extrapolation import extrapolate_with_details
from .mesh import Mesh
from .solver import (
    SolverConfig,
    StepFailure,
    StepProblem,
    StepSolution,
    solve_bdf2_naive,
    solve_step,
)

SCHEMES = ("ljko", "evbdf2", "vim", "bdf2-naive")


@dataclass
class SchemeConfig:
    scheme: str = "evbdf2"
    tau: float = 0.01
    T: float = 0.1
    alpha: float = 4.0 / 3.0
    init_substeps: int = 1      # LJKO sub-steps of tau/N0 used to produce rho_1
    hj_mode: str = "euler"
    extrapolation_base: str = "nu"
    vim_fresh_potential: bool = False
    normalize_mass: bool = False

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.tau <= 0 or self.T < self.tau:
            raise ValueError("need tau > 0 and T >= tau")
        beta = self.alpha - 1.0
        if not (1.0 < self.alpha <= 2.0) or not (1.0 - beta) > 0:
            raise ValueError(f"alpha must lie in (1, 2) with 1 - beta > 0, got {self.alpha}")
        if self.init_substeps < 1:
            raise ValueError("init_substeps must be >= 1")

    @property
    def n_steps(self) -> int:
        n = round(self.T / self.tau)
        if abs(n * self.tau - self.T) > 1e-9 * max(self.T, 1.0):
            raise ValueError(f"horizon T={self.T} is not a multiple of tau={self.tau}")
        return n


@dataclass
class StepDiagnostics:
    step: int
    time: float
    mass: float
    energy: float
    iterations: int
    residual: float
    status: str = "ok"


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    densities: list[np.ndarray] = field(default_factory=list)
    diagnostics: list[StepDiagnostics] = field(default_factory=list)
    status: str = "ok"
    failure: Optional[dict] = None

    def __len__(self) -> int:
        return len(self.densities)

    @property
    def complete(self) -> bool:
        return self.status == "ok"


def ljko_step(
    mesh: Mesh,
    energy,
    rho_prev: np.ndarray,
    tau: float,
    solver_config: SolverConfig | None = None,
    initial_guess=None,
) -> StepSolution:
    """One linearized JKO step of length ``tau``."""
    problem = StepProblem(mesh=mesh, base=rho_prev, step_scale=tau, objective=energy)
    return solve_step(problem, solver_config, initial_guess=initial_guess)


def evbdf2_step(
    mesh: Mesh,
    energy,
    rho_nm1: np.ndarray,
    rho_nm2: np.ndarray,
    tau: float,
    alpha: float,
    solver_config: SolverConfig | None = None,
    hj_mode: str = "euler",
    base_mode: str = "nu",
    initial_guess=None,
) -> tuple[StepSolution, np.ndarray]:
    """Extrapolate the last two densities, then take the shortened inner step.

    Returns the step solution and the extrapolated base density.
    """
    beta = alpha - 1.0
    rho_alpha = extrapolate_with_details(
        mesh, rho_nm2, rho_nm1, alpha, solver_config, hj_mode, base_mode
    ).rho
    problem = StepProblem(
        mesh=mesh, base=rho_alpha, step_scale=tau * (1.0 - beta), objective=energy
    )
    if initial_guess is None:
        initial_guess = (rho_alpha, None)
    sol = solve_step(problem, solver_config, initial_guess=initial_guess)
    return sol, rho_alpha


def vim_step(
    mesh: Mesh,
    energy,
    rho_nm1: np.ndarray,
    tau: float,
    solver_config: SolverConfig | None = None,
    fresh_potential: bool = False,
    hj_mode: str = "euler",
    base_mode: str = "nu",
) -> tuple[StepSolution, StepSolution]:
    """Half-length inner step, then extrapolation at time 2.

    The midpoint potential of the extrapolation is recycled from the half
    step (sign-flipped, re-gauged to zero mean) unless ``fresh_potential``
    forces a new linear solve. Returns (full step result, half step result).
    """
    half = ljko_step(mesh, energy, rho_nm1, tau / 2.0, solver_config,
                     initial_guess=(rho_nm1, None))
    if fresh_potential:
        potential = None
    else:
        phi = -half.phi
        potential = phi - mesh.cell_integral(phi) / mesh.total_volume
    sol = extrapolate_with_details(
        mesh, rho_nm1, half.rho, 2.0, solver_config, hj_mode, base_mode, potential=potential
    )
    return sol, half


def total_variation(mesh: Mesh, rho: np.ndarray) -> float:
    """Discrete total variation: sum of inter-cell jumps over internal edges."""
    rho = mesh.check_cell_field(rho)
    K, L = mesh.edge_cells[:, 0], mesh.edge_cells[:, 1]
    return float(np.sum(np.abs(rho[L] - rho[K])))


def run_flow(
    mesh: Mesh,
    energy,
    rho0: np.ndarray,
    config: SchemeConfig,
    solver_config: SolverConfig | None = None,
) -> Trajectory:
    """Run the configured scheme from ``rho0`` up to the horizon.

    Two-history schemes produce the second starting density by LJKO
    sub-steps. Any step failure truncates the trajectory and records a
    structured failure report (this is the expected way the naive multistep
    scheme reports non-convergence).
    """
    solver_config = solver_config or SolverConfig()
    rho0 = mesh.check_cell_field(rho0).copy()
    if config.normalize_mass:
        rho0 = rho0 / mesh.cell_integral(rho0)
    traj = Trajectory()
    traj.times.append(0.0)
    traj.densities.append(rho0)
    traj.diagnostics.append(
        StepDiagnostics(
            step=0,
            time=0.0,
            mass=mesh.cell_integral(rho0),
            energy=_safe_energy(mesh, energy, rho0),
            iterations=0,
            residual=0.0,
        )
    )

    n_steps = config.n_steps
    tau, alpha = config.tau, config.alpha
    warm: Optional[tuple[np.ndarray, np.ndarray]] = None

    def record(step: int, sol: StepSolution) -> None:
        traj.times.append(step * tau)
        traj.densities.append(sol.rho)
        traj.diagnostics.append(
            StepDiagnostics(
                step=step,
                time=step * tau,
                mass=mesh.cell_integral(sol.rho),
                energy=_safe_energy(mesh, energy, sol.rho),
                iterations=sol.iterations,
                residual=sol.residual,
            )
        )

    def fail(step: int, exc: StepFailure) -> Trajectory:
        traj.status = "failed"
        traj.failure = {
            "step": step,
            "time": step * tau,
            "scheme": config.scheme,
            "message": str(exc),
            "residual": exc.residual,
            "iterations": exc.iterations,
        }
        return traj

    try:
        if config.scheme in ("evbdf2", "bdf2-naive"):
            # second starting density via LJKO sub-steps
            rho1 = rho0
            sub_tau = tau / config.init_substeps
            iters = 0
            for _ in range(config.init_substeps):
                sol = ljko_step(mesh, energy, rho1, sub_tau, solver_config)
                rho1, iters = sol.rho, iters + sol.iterations
            sol.iterations = iters
            record(1, sol)
            warm = (sol.rho, sol.phi)
    except StepFailure as exc:
        return fail(1, exc)

    if config.scheme == "ljko":
        for n in range(1, n_steps + 1):
            try:
                sol = ljko_step(mesh, energy, traj.densities[-1], tau, solver_config, warm)
            except StepFailure as exc:
                return fail(n, exc)
            record(n, sol)
            warm = (sol.rho, sol.phi)
    elif config.scheme == "vim":
        for n in range(1, n_steps + 1):
            try:
                sol, _half = vim_step(
                    mesh,
                    energy,
                    traj.densities[-1],
                    tau,
                    solver_config,
                    fresh_potential=config.vim_fresh_potential,
                    hj_mode=config.hj_mode,
                    base_mode=config.extrapolation_base,
                )
            except StepFailure as exc:
                return fail(n, exc)
            record(n, sol)
    elif config.scheme == "evbdf2":
        for n in range(2, n_steps + 1):
            try:
                sol, _rho_alpha = evbdf2_step(
                    mesh,
                    energy,
                    traj.densities[-1],
                    traj.densities[-2],
                    tau,
                    alpha,
                    solver_config,
                    hj_mode=config.hj_mode,
                    base_mode=config.extrapolation_base,
                )
            except StepFailure as exc:
                return fail(n, exc)
            record(n, sol)
    elif config.scheme == "bdf2-naive":
        warm3: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None
        for n in range(2, n_steps + 1):
            try:
                sol = solve_bdf2_naive(
                    mesh,
                    traj.densities[-1],
                    traj.densities[-2],
                    tau,
                    alpha,
                    energy,
                    solver_config,
                    initial_guess=warm3,
                )
            except StepFailure as exc:
                return fail(n, exc)
            record(n, sol)
            warm3 = (sol.rho, sol.phi, sol.phi_extra)
    return traj


def _safe_energy(mesh: Mesh, energy, rho: np.ndarray) -> float:
    if np.any(rho <= 0):
        # diagnostics on initial data may touch empty cells; the entropy
        # integrand extends by continuity, the power law by its formula
        rho = np.asarray(rho, dtype=float)
        return mesh.cell_integral(energy.E(np.maximum(rho, 0.0)) + energy.V * rho)
    return en.evaluate(energy, rho, mesh)
