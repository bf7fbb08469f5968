"""Discrete energy functionals E_T(rho) = sum_K E(rho_K) m_K + <V, rho>.

Two families are provided: the entropy ``E(r) = r log r`` driving
Fokker-Planck dynamics and the power law ``E(r) = r^delta/(delta-1)``
driving porous-medium dynamics, each with an external potential sampled
pointwise at cell centers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import Mesh


@dataclass
class Energy:
    """Separable convex energy: per-cell integrand plus external potential.

    ``E``, ``dE`` and ``d2E`` act elementwise on positive density arrays;
    ``V`` holds the potential values at the cell centers.
    """

    E: Callable[[np.ndarray], np.ndarray]
    dE: Callable[[np.ndarray], np.ndarray]
    d2E: Callable[[np.ndarray], np.ndarray]
    V: np.ndarray
    name: str = "energy"

    def is_linear(self) -> bool:
        return False


def _sample_potential(mesh: Mesh, V: Callable[[np.ndarray], float] | None) -> np.ndarray:
    if V is None:
        return np.zeros(mesh.n_cells)
    vals = np.array([float(V(x[: mesh.dim])) for x in mesh.centers])
    if not np.all(np.isfinite(vals)):
        raise ValueError("external potential is not finite at all cell centers")
    return vals


def fokker_planck_energy(mesh: Mesh, V: Callable[[np.ndarray], float] | None = None) -> Energy:
    """Entropy energy ``E(r) = r log r`` (with ``E(0) = 0``) plus drift ``V``."""

    def E(r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        pos = r > 0
        out[pos] = r[pos] * np.log(r[pos])
        return out

    def dE(r: np.ndarray) -> np.ndarray:
        return np.log(r) + 1.0

    def d2E(r: np.ndarray) -> np.ndarray:
        return 1.0 / r

    return Energy(E=E, dE=dE, d2E=d2E, V=_sample_potential(mesh, V), name="fokker-planck")


def porous_medium_energy(
    mesh: Mesh, delta: float, V: Callable[[np.ndarray], float] | None = None
) -> Energy:
    """Power-law energy ``E(r) = r^delta/(delta-1)`` for ``delta > 1``."""
    delta = float(delta)
    if delta <= 1.0:
        raise ValueError(f"porous-medium exponent must be > 1, got {delta}")

    def E(r: np.ndarray) -> np.ndarray:
        return np.asarray(r, dtype=float) ** delta / (delta - 1.0)

    def dE(r: np.ndarray) -> np.ndarray:
        return delta * np.asarray(r, dtype=float) ** (delta - 1.0) / (delta - 1.0)

    def d2E(r: np.ndarray) -> np.ndarray:
        return delta * np.asarray(r, dtype=float) ** (delta - 2.0)

    return Energy(E=E, dE=dE, d2E=d2E, V=_sample_potential(mesh, V), name=f"porous-medium-{delta:g}")


@dataclass
class LinearEnergy:
    """Linear objective ``-<phi_target, rho>`` used by the extrapolation step."""

    phi_target: np.ndarray
    name: str = "linear"

    def is_linear(self) -> bool:
        return True


def _check_positive(rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("density must be elementwise positive for energy evaluation")
    return rho


def evaluate(energy, rho: np.ndarray, mesh: Mesh) -> float:
    """Value of the discrete energy at a positive density."""
    if energy.is_linear():
        return -mesh.ip_cells(energy.phi_target, np.asarray(rho, dtype=float))
    rho = _check_positive(rho)
    return mesh.cell_integral(energy.E(rho) + energy.V * rho)


def gradient(energy, rho: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Per-cell gradient w.r.t. the cell inner product: E'(rho_K) + V_K."""
    if energy.is_linear():
        return -energy.phi_target
    rho = _check_positive(rho)
    return energy.dE(rho) + energy.V


def hessian_diag(energy, rho: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Per-cell second derivative E''(rho_K) (zero for linear objectives)."""
    if energy.is_linear():
        return np.zeros_like(np.asarray(rho, dtype=float))
    rho = _check_positive(rho)
    return energy.d2E(rho)
