"""Finite-volume solver for Wasserstein gradient flows.

Two-point flux approximation meshes, a linearized-JKO interior-point
solver, second-order extrapolated time stepping and a convergence harness.
"""

from .energies import Energy, LinearEnergy, fokker_planck_energy, porous_medium_energy
from .extrapolation import extrapolate, hj_euler_step
from .hminus import action, laplacian_apply, solve_potential
from .mesh import (
    Mesh,
    MeshError,
    build_cartesian_mesh,
    build_interval_mesh,
    divergence,
    gradient,
    inner_product,
    load_mesh_file,
    reconstruct,
    reconstruct_adjoint,
    save_mesh_file,
)
from .schemes import SchemeConfig, Trajectory, run_flow
from .solver import SolverConfig, StepFailure, StepProblem, StepSolution, solve_step

__all__ = [
    "Energy",
    "LinearEnergy",
    "Mesh",
    "MeshError",
    "SchemeConfig",
    "SolverConfig",
    "StepFailure",
    "StepProblem",
    "StepSolution",
    "Trajectory",
    "action",
    "build_cartesian_mesh",
    "build_interval_mesh",
    "divergence",
    "extrapolate",
    "fokker_planck_energy",
    "gradient",
    "hj_euler_step",
    "inner_product",
    "laplacian_apply",
    "load_mesh_file",
    "porous_medium_energy",
    "reconstruct",
    "reconstruct_adjoint",
    "run_flow",
    "save_mesh_file",
    "solve_potential",
    "solve_step",
]

__version__ = "0.1.0"
