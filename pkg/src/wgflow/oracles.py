"""Closed-form solutions and 1D quantile-based references.

Contains the exact drift-diffusion solution used by the 1D/2D convergence
studies, the self-similar porous-medium profile, and the quantile toolbox
(1D optimal-transport distance, monotone-projection extrapolation via
pool-adjacent-violators, free-flow extrapolation by sorting).
"""

from __future__ import annotations

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import gamma as gamma_fn

from .mesh import Mesh


def fp_exact(t: float, x, g: float = 1.0):
    """Exact drift-diffusion density on [0, 1] with potential V(x) = -g x.

    Separated solution of d(rho)/dt = rho'' - g rho' with no-flux walls:
    a decaying cosine mode on top of the exponential steady state.
    """
    x = np.asarray(x, dtype=float)
    decay = np.exp(-((np.pi**2) + g**2 / 4.0) * t + g * x / 2.0)
    mode = np.pi * np.cos(np.pi * x) + (g / 2.0) * np.sin(np.pi * x)
    steady = np.pi * np.exp(g * (x - 0.5))
    out = decay * mode + steady
    return out if out.ndim else float(out)


def barenblatt_mass_constant(delta: float, d: int) -> float:
    """Height constant that normalizes the self-similar profile to unit mass."""
    if delta <= 1.0:
        raise ValueError("delta must exceed 1")
    lam = 1.0 / (d * (delta - 1.0) + 2.0)
    p = 1.0 / (delta - 1.0)
    c_delta = ((delta - 1.0) / delta) ** p
    denom = c_delta * np.pi ** (d / 2.0) / gamma_fn(d / 2.0) * (2.0 / lam) ** (d / 2.0)
    denom *= beta_fn(d / 2.0, p + 1.0)
    return float((1.0 / denom) ** (1.0 / (p + d / 2.0)))


def barenblatt(t: float, x, delta: float, d: int = 2, x0=None, M: float | None = None):
    """Self-similar porous-medium density of unit total mass.

    ``x`` is a point or an array of points with ``d`` coordinates in the
    trailing axis (plain scalars are fine for d = 1); ``x0`` is the mass
    center. ``M`` overrides the height constant (mass rescaling only; any
    positive value still yields an exact solution).
    """
    if t <= 0:
        raise ValueError("the self-similar profile requires t > 0")
    if delta <= 1.0:
        raise ValueError("delta must exceed 1")
    lam = 1.0 / (d * (delta - 1.0) + 2.0)
    if M is None:
        M = barenblatt_mass_constant(delta, d)
    x = np.asarray(x, dtype=float)
    if x0 is None:
        x0 = np.zeros(d)
    x0 = np.asarray(x0, dtype=float)
    if d == 1 and x.ndim <= 1:
        r2 = (x - x0.reshape(())) ** 2 if x0.ndim == 0 or x0.size == 1 else (x - x0) ** 2
        r2 = np.asarray(r2, dtype=float)
    else:
        r2 = np.sum((x - x0) ** 2, axis=-1)
    prefac = t ** (-d * lam) * ((delta - 1.0) / delta) ** (1.0 / (delta - 1.0))
    core = np.maximum(M - 0.5 * lam * r2 / t ** (2.0 * lam), 0.0)
    out = prefac * core ** (1.0 / (delta - 1.0))
    return out if np.ndim(out) else float(out)


def barenblatt_support_radius(t: float, delta: float, d: int = 2, M: float | None = None) -> float:
    """Radius of the support of the self-similar profile at time ``t``."""
    lam = 1.0 / (d * (delta - 1.0) + 2.0)
    if M is None:
        M = barenblatt_mass_constant(delta, d)
    return float(np.sqrt(2.0 * M / lam) * t**lam)


# -- 1D quantile toolbox ---------------------------------------------------------


def _ordered_cells(mesh: Mesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if mesh.dim != 1:
        raise ValueError("quantiles are defined for 1D meshes only")
    order = np.argsort(mesh.centers[:, 0])
    centers = mesh.centers[order, 0]
    widths = mesh.cell_measures[order]
    lefts = centers - widths / 2.0
    return order, lefts, widths


def quantiles_1d(mesh: Mesh, rho: np.ndarray, m: int = 10_000) -> np.ndarray:
    """Quantile samples of the piecewise-constant density at midpoint levels.

    The density is mass-normalized; the pseudo-inverse CDF is sampled at the
    ``m`` levels ``(j + 1/2)/m``.
    """
    rho = mesh.check_cell_field(rho)
    if np.any(rho < 0):
        raise ValueError("density must be nonnegative")
    order, lefts, widths = _ordered_cells(mesh)
    masses = rho[order] * widths
    total = float(masses.sum())
    if total <= 0:
        raise ValueError("density must carry positive mass")
    cum = np.concatenate([[0.0], np.cumsum(masses)])
    levels = (np.arange(m) + 0.5) / m * total
    # 'right' skips zero-mass cells: their cumulative mass is flat
    idx = np.searchsorted(cum, levels, side="right") - 1
    idx = np.clip(idx, 0, len(masses) - 1)
    frac = (levels - cum[idx]) / masses[idx]
    return lefts[idx] + frac * widths[idx]


def density_from_quantiles(mesh: Mesh, q: np.ndarray, total_mass: float) -> np.ndarray:
    """Bin quantile samples back into cell densities carrying ``total_mass``."""
    order, lefts, widths = _ordered_cells(mesh)
    bins = np.concatenate([lefts, [lefts[-1] + widths[-1]]])
    q = np.clip(np.asarray(q, dtype=float), bins[0], bins[-1])
    counts, _ = np.histogram(q, bins=bins)
    rho = np.zeros(mesh.n_cells)
    rho[order] = counts * (total_mass / len(q)) / widths
    return rho


def w2_1d(q0: np.ndarray, q1: np.ndarray) -> float:
    """1D optimal-transport distance: L2 norm of the quantile difference."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    if q0.shape != q1.shape:
        raise ValueError(f"quantile sample counts differ: {q0.shape} vs {q1.shape}")
    return float(np.sqrt(np.mean((q1 - q0) ** 2)))


def pav(z: np.ndarray) -> np.ndarray:
    """Monotone (nondecreasing) L2 projection by pool-adjacent-violators.

    Uniform weights; returns the projected sequence.
    """
    z = np.asarray(z, dtype=float)
    vals: list[float] = []
    counts: list[int] = []
    for x in z:
        vals.append(float(x))
        counts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            merged = (vals[-2] * counts[-2] + vals[-1] * counts[-1]) / (counts[-2] + counts[-1])
            vals[-2] = merged
            counts[-2] += counts[-1]
            vals.pop()
            counts.pop()
    return np.repeat(vals, counts)


def metric_extrapolation_1d(q0: np.ndarray, q1: np.ndarray, alpha: float) -> np.ndarray:
    """Quantiles of the variational (sticky) extrapolation at time ``alpha``.

    Since ``alpha - beta = 1``, the objective
    ``alpha |G - q1|^2 - beta |G - q0|^2`` equals
    ``|G - (alpha q1 - beta q0)|^2`` up to a constant, so the minimizer over
    monotone G is the isotonic projection of the linear extrapolation.
    """
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    if q0.shape != q1.shape:
        raise ValueError(f"quantile sample counts differ: {q0.shape} vs {q1.shape}")
    beta = alpha - 1.0
    return pav(alpha * q1 - beta * q0)


def free_flow_1d(q0: np.ndarray, q1: np.ndarray, alpha: float) -> np.ndarray:
    """Quantiles of the free-flow extrapolation: particles keep straight paths.

    Sorting the linearly extrapolated samples recovers the quantile function
    of the pushforward measure.
    """
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    if q0.shape != q1.shape:
        raise ValueError(f"quantile sample counts differ: {q0.shape} vs {q1.shape}")
    beta = alpha - 1.0
    return np.sort(alpha * q1 - beta * q0)
