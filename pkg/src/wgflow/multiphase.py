"""Incompressible immiscible multiphase flow as a coupled gradient flow.

Each phase carries a saturation field evolving by a viscosity-weighted
transport metric; the phases are coupled through a per-cell total
saturation constraint (sum to one), gravity potentials and, for two-phase
systems, a capillary energy with the pressure law
``pi_1(s_1) = lambda (1 - s_1)^(-1/2)`` whose antiderivative is
``Pi(s_1) = -2 lambda sqrt(1 - s_1)``.

One time step minimizes

    sum_i (1/tau) A_i((s_i + s_i_prev)/2; s_i_prev - s_i) + E(s)

over nonnegative saturations summing to one per cell, where ``A_i`` uses
the edge mobility ``(L w)/mu_i``. The optimality system adds one multiplier
per cell (a reference pressure) and is solved by the same log-barrier
Newton machinery as the single-phase steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .extrapolation import extrapolate
from .mesh import Mesh
from .solver import SolverConfig, StepFailure, _barrier_schedule, _sparse_solve

_SAT_FLOOR = 1e-10


@dataclass
class PhaseSystem:
    """Saturations and material constants of an N+1 phase system."""

    mesh: Mesh
    densities: list[float]        # fluid density per phase
    viscosities: list[float]      # viscosity per phase
    saturations: list[np.ndarray]
    gravity: np.ndarray           # gravity vector, length mesh.dim
    lambda_bc: float = 0.0        # capillary strength; used for two phases

    def __post_init__(self) -> None:
        self.gravity = np.asarray(self.gravity, dtype=float)
        if not (len(self.densities) == len(self.viscosities) == len(self.saturations)):
            raise ValueError("phase property lists must have equal length")
        if self.n_phases < 2:
            raise ValueError("need at least two phases")
        if self.lambda_bc != 0.0 and self.n_phases != 2:
            raise ValueError("the capillary model is defined for two phases")
        self.saturations = [self.mesh.check_cell_field(s) for s in self.saturations]

    @property
    def n_phases(self) -> int:
        return len(self.saturations)

    def masses(self) -> list[float]:
        return [self.mesh.cell_integral(s) for s in self.saturations]

    def saturation_sum_error(self) -> float:
        total = sum(self.saturations)
        return float(np.max(np.abs(total - 1.0)))

    def with_saturations(self, sats: list[np.ndarray]) -> "PhaseSystem":
        return PhaseSystem(
            mesh=self.mesh,
            densities=list(self.densities),
            viscosities=list(self.viscosities),
            saturations=sats,
            gravity=self.gravity,
            lambda_bc=self.lambda_bc,
        )


@dataclass
class MultiphaseEnergy:
    """Gravity potentials plus the two-phase capillary term."""

    potentials: list[np.ndarray]  # Psi_i sampled at cell centers
    lambda_bc: float

    def capillary(self, s1: np.ndarray) -> np.ndarray:
        return -2.0 * self.lambda_bc * np.sqrt(1.0 - s1)

    def capillary_pressure(self, s1: np.ndarray) -> np.ndarray:
        return self.lambda_bc / np.sqrt(1.0 - s1)

    def capillary_pressure_slope(self, s1: np.ndarray) -> np.ndarray:
        return 0.5 * self.lambda_bc * (1.0 - s1) ** (-1.5)

    def value(self, mesh: Mesh, sats: list[np.ndarray]) -> float:
        total = sum(mesh.cell_integral(psi * s) for psi, s in zip(self.potentials, sats))
        if self.lambda_bc:
            total += mesh.cell_integral(self.capillary(sats[1]))
        return total

    def grad_phase(self, i: int, sats: list[np.ndarray]) -> np.ndarray:
        g = self.potentials[i].copy()
        if self.lambda_bc and i == 1:
            g += self.capillary_pressure(sats[1])
        return g

    def hess_phase(self, i: int, sats: list[np.ndarray]) -> np.ndarray:
        if self.lambda_bc and i == 1:
            return self.capillary_pressure_slope(sats[1])
        return np.zeros_like(sats[i])


def multiphase_energy(system: PhaseSystem) -> MultiphaseEnergy:
    """Energy of the system: Psi_i(x) = -rho_i g.x plus capillary coupling."""
    mesh = system.mesh
    pots = [
        np.array([-rho_i * float(np.dot(system.gravity, x[: mesh.dim])) for x in mesh.centers])
        for rho_i in system.densities
    ]
    return MultiphaseEnergy(potentials=pots, lambda_bc=system.lambda_bc)


def multiphase_kkt_residual(
    system: PhaseSystem,
    energy: MultiphaseEnergy,
    prev: list[np.ndarray],
    sats: list[np.ndarray],
    phis: list[np.ndarray],
    pressure: np.ndarray,
    tau: float,
    barrier: float,
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Residuals (per-phase stationarity, per-phase continuity, constraint)."""
    mesh = system.mesh
    Fs, Fphi = [], []
    for i in range(system.n_phases):
        mu_i = system.viscosities[i]
        g_i = mesh.gradient(phis[i])
        W_i = mesh.reconstruct(0.5 * (sats[i] + prev[i]))
        Fs.append(
            -phis[i] / tau
            - mesh.reconstruct_adjoint(g_i * g_i) / (4.0 * tau * mu_i)
            + energy.grad_phase(i, sats)
            - barrier / sats[i]
            - pressure
        )
        Fphi.append(prev[i] - sats[i] + mesh.divergence((W_i / mu_i) * g_i))
    Fp = 1.0 - sum(sats)
    return Fs, Fphi, Fp


def multiphase_ljko_step(
    mesh: Mesh,
    system: PhaseSystem,
    tau: float,
    solver_config: SolverConfig | None = None,
    base_saturations: Optional[list[np.ndarray]] = None,
    step_scale: Optional[float] = None,
) -> PhaseSystem:
    """One constrained inner step of the coupled flow.

    ``base_saturations`` overrides the transport bases (used by the
    extrapolated stepping mode, where they may violate the per-cell sum
    constraint); ``step_scale`` overrides the action divisor (default tau).
    """
    config = solver_config or SolverConfig()
    energy = multiphase_energy(system)
    N = system.n_phases
    n = mesh.n_cells
    prev = base_saturations if base_saturations is not None else system.saturations
    prev = [mesh.check_cell_field(s) for s in prev]
    s_scale = tau if step_scale is None else step_scale

    sats = [np.maximum(s, _SAT_FLOOR) for s in prev]
    masses = [mesh.cell_integral(s) for s in prev]
    sats = [s * (m / mesh.cell_integral(s)) for s, m in zip(sats, masses)]
    phis = [np.zeros(n) for _ in range(N)]
    pressure = np.zeros(n)

    D, G, R, Rs = mesh.div_mat, mesh.grad_mat, mesh.recon_mat, mesh.recon_adj_mat
    I = sp.identity(n, format="csr")
    rho_typ = 1.0  # saturations are volume fractions
    newton_tol = config.newton_tol * rho_typ
    total_iters = 0

    def residual_norm(Fs, Fphi, Fp) -> float:
        parts = [np.max(np.abs(F)) for F in Fs + Fphi] + [np.max(np.abs(Fp))]
        return float(max(parts))

    mus = _barrier_schedule(config, rho_typ)
    for stage, mu in enumerate(mus):
        last = stage == len(mus) - 1
        tol = newton_tol if last else max(newton_tol, config.stage_tol_factor * mu)
        Fs, Fphi, Fp = multiphase_kkt_residual(
            system, energy, prev, sats, phis, pressure, s_scale, mu
        )
        res = residual_norm(Fs, Fphi, Fp)
        for _ in range(config.max_newton):
            if res <= tol:
                break
            blocks = [[None] * (2 * N + 1) for _ in range(2 * N + 1)]
            for i in range(N):
                mu_i = system.viscosities[i]
                g_i = mesh.gradient(phis[i])
                W_i = mesh.reconstruct(0.5 * (sats[i] + prev[i]))
                blocks[i][i] = sp.diags(energy.hess_phase(i, sats) + mu / sats[i] ** 2)
                blocks[i][N + i] = (
                    -(1.0 / s_scale) * (I + (0.5 / mu_i) * Rs @ sp.diags(g_i) @ G)
                ).tocsr()
                blocks[i][2 * N] = (-I).tocsr()
                blocks[N + i][i] = (-I + (0.5 / mu_i) * D @ sp.diags(g_i) @ R).tocsr()
                blocks[N + i][N + i] = ((1.0 / mu_i) * D @ sp.diags(W_i) @ G).tocsr()
                blocks[2 * N][i] = (-I).tocsr()
            J = sp.bmat(blocks, format="csr")
            # one shared gauge constant: shifting every potential by c and
            # the pressure by -c/s leaves the system invariant
            m_cell = mesh.cell_measures
            null_right = np.concatenate(
                [np.zeros(N * n), np.tile(np.ones(n), N), -(1.0 / s_scale) * np.ones(n)]
            )
            null_left = np.concatenate([np.zeros(N * n), np.tile(m_cell, N), -m_cell])
            J_aug = sp.bmat(
                [[J, sp.csr_matrix(null_left.reshape(-1, 1))],
                 [sp.csr_matrix(null_right.reshape(1, -1)), None]],
                format="csc",
            )
            rhs = -np.concatenate(Fs + Fphi + [Fp, [0.0]])
            delta = _sparse_solve(J_aug, rhs)
            ds = [delta[i * n : (i + 1) * n] for i in range(N)]
            dphi = [delta[(N + i) * n : (N + i + 1) * n] for i in range(N)]
            dp = delta[2 * N * n : 2 * N * n + n]

            t = 1.0
            kappa = max(config.fraction_to_boundary, 1.0 - mu / rho_typ)
            for i in range(N):
                neg = ds[i] < 0
                if np.any(neg):
                    t = min(t, kappa * float(np.min(sats[i][neg] / -ds[i][neg])))
            accepted = False
            for _bt in range(config.max_backtracks):
                s_new = [s + t * d for s, d in zip(sats, ds)]
                if all(np.all(s > 0) for s in s_new):
                    p_new = [p + t * d for p, d in zip(phis, dphi)]
                    pr_new = pressure + t * dp
                    Fsn, Fphin, Fpn = multiphase_kkt_residual(
                        system, energy, prev, s_new, p_new, pr_new, s_scale, mu
                    )
                    res_new = residual_norm(Fsn, Fphin, Fpn)
                    if res_new <= (1.0 - 1e-4 * t) * res:
                        sats, phis, pressure = s_new, p_new, pr_new
                        Fs, Fphi, Fp, res = Fsn, Fphin, Fpn, res_new
                        accepted = True
                        break
                t *= 0.5
            total_iters += 1
            if not accepted:
                raise StepFailure(
                    f"no Newton progress at barrier {mu:.2e} (residual {res:.3e})",
                    res,
                    total_iters,
                )
        else:
            raise StepFailure(
                f"Newton budget exhausted at barrier {mu:.2e} (residual {res:.3e})",
                res,
                total_iters,
            )

    for i in range(N):
        drift = abs(mesh.cell_integral(sats[i]) - masses[i])
        if drift > 1e-9 * max(abs(masses[i]), 1e-300):
            raise StepFailure(f"phase {i} mass drift {drift:.3e}", res, total_iters)
    return system.with_saturations(sats)


@dataclass
class MultiphaseTrajectory:
    times: list[float] = field(default_factory=list)
    states: list[PhaseSystem] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    status: str = "ok"
    failure: Optional[dict] = None

    @property
    def complete(self) -> bool:
        return self.status == "ok"


def heavy_phase_center(system: PhaseSystem, axis: int = -1) -> float:
    """Center of mass of the densest phase along an axis (default: last)."""
    mesh = system.mesh
    i_heavy = int(np.argmax(system.densities))
    coord = mesh.centers[:, axis if axis >= 0 else mesh.dim - 1]
    s = system.saturations[i_heavy]
    return mesh.cell_integral(s * coord) / mesh.cell_integral(s)


def run_multiphase(
    mesh: Mesh,
    system: PhaseSystem,
    tau: float,
    T: float,
    solver_config: SolverConfig | None = None,
    scheme: str = "ljko",
    alpha: float = 4.0 / 3.0,
    snapshot_every: int = 1,
) -> MultiphaseTrajectory:
    """March the coupled flow to the horizon, keeping periodic snapshots.

    ``scheme`` is "ljko" (default) or "evbdf2"; the latter extrapolates
    each phase independently and shortens the inner step, accepting that
    the extrapolated base may leave the simplex.
    """
    if scheme not in ("ljko", "evbdf2"):
        raise ValueError(f"unknown multiphase scheme {scheme!r}")
    energy = multiphase_energy(system)
    traj = MultiphaseTrajectory()
    traj.times.append(0.0)
    traj.states.append(system)
    traj.energies.append(energy.value(mesh, system.saturations))
    n_steps = round(T / tau)
    if abs(n_steps * tau - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"horizon T={T} is not a multiple of tau={tau}")

    state = system
    history: Optional[PhaseSystem] = None
    for step in range(1, n_steps + 1):
        try:
            if scheme == "evbdf2" and history is not None:
                beta = alpha - 1.0
                bases = [
                    extrapolate(mesh, s_old, s_new, alpha, solver_config)
                    for s_old, s_new in zip(history.saturations, state.saturations)
                ]
                new_state = multiphase_ljko_step(
                    mesh,
                    state,
                    tau,
                    solver_config,
                    base_saturations=bases,
                    step_scale=tau * (1.0 - beta),
                )
            else:
                new_state = multiphase_ljko_step(mesh, state, tau, solver_config)
        except StepFailure as exc:
            traj.status = "failed"
            traj.failure = {
                "step": step,
                "time": step * tau,
                "message": str(exc),
                "residual": exc.residual,
                "iterations": exc.iterations,
            }
            return traj
        history, state = state, new_state
        if step % snapshot_every == 0 or step == n_steps:
            traj.times.append(step * tau)
            traj.states.append(state)
            traj.energies.append(energy.value(mesh, state.saturations))
    return traj
