"""Interior-point Newton solver for linearized JKO-type steps.

A step problem minimizes, over positive densities,

    (1/s) A((rho + base)/2; base - rho) + G(rho)

with ``A`` the weighted H^-1 action, ``s`` the step scale and ``G`` either a
separable convex energy or a linear objective. The barrier-perturbed
optimality system is, per cell,

    (i)  base - rho + div((L (rho+base)/2) . grad phi) = 0
    (ii) -phi/s - (1/(4 s)) L*|grad phi|^2 + G'(rho) - mu/rho = 0

(the 1/4 comes from differentiating the reconstructed mobility in rho).

The solve follows a decreasing barrier path. Within each stage Newton works
in the primal-feasible form: the dual potential is recomputed exactly from
the current density (one weighted-Laplacian solve, making the continuity
residual vanish identically and keeping the mass exact), the density update
comes from the full saddle Jacobian, and the line search backtracks on the
true barrier objective, which stays reliable in the nearly-flat directions
a linear objective leaves uncontrolled. A fraction-to-boundary rule keeps
the density strictly positive.

The same barrier machinery attempts stationary points of the nonconvex
two-history multistep problem (``solve_bdf2_naive``) via damped root
finding on the full three-field system, for which non-convergence is an
expected, reportable outcome.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import energies as en
from .mesh import Mesh

_RHO_FLOOR = 1e-10  # initial-guess floor, in units of mean density


@dataclass
class SolverConfig:
    """Interior-point schedule and Newton tolerances.

    All density-like quantities (``barrier_init``, ``barrier_floor``,
    ``newton_tol``) are multiples of the mean density mass/volume.
    """

    barrier_init: float = 1e-1
    barrier_shrink: float = 0.1
    barrier_floor: float = 1e-11
    newton_tol: float = 1e-10
    max_newton: int = 200
    fraction_to_boundary: float = 0.95
    max_backtracks: int = 40
    stage_tol_factor: float = 1e-2
    warm_start_barrier: float = 1e-9  # continuation start for interior warm starts

    def __post_init__(self) -> None:
        if not (0 < self.barrier_shrink < 1):
            raise ValueError("barrier_shrink must lie in (0, 1)")
        if not (0 < self.fraction_to_boundary < 1):
            raise ValueError("fraction_to_boundary must lie in (0, 1)")
        for name in ("barrier_init", "barrier_floor", "newton_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_newton < 1:
            raise ValueError("max_newton must be >= 1")


@dataclass
class StepProblem:
    """One convex inner step: base measure, step scale and objective."""

    mesh: Mesh
    base: np.ndarray
    step_scale: float
    objective: object  # Energy or LinearEnergy

    def __post_init__(self) -> None:
        self.base = self.mesh.check_cell_field(self.base)
        if np.any(self.base < 0):
            raise ValueError("base density must be nonnegative")
        if self.mesh.cell_integral(self.base) <= 0:
            raise ValueError("base density must carry positive mass")
        if self.step_scale <= 0:
            raise ValueError("step scale must be positive")


@dataclass
class StepSolution:
    rho: np.ndarray
    phi: np.ndarray
    iterations: int
    residual: float
    barrier: float
    phi_extra: Optional[np.ndarray] = None  # second dual of the naive multistep


class StepFailure(RuntimeError):
    """Newton did not converge; carries the last residual and iterate stats."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def kkt_residual(
    problem: StepProblem, rho: np.ndarray, phi: np.ndarray, barrier: float
) -> tuple[np.ndarray, np.ndarray]:
    """Barrier-perturbed optimality residuals (stationarity, continuity).

    Standalone so that solutions can be re-checked independently of any
    solver state.
    """
    mesh, s = problem.mesh, problem.step_scale
    gphi = mesh.gradient(phi)
    W = mesh.reconstruct(0.5 * (rho + problem.base))
    grad_G = en.gradient(problem.objective, rho, mesh)
    F1 = -phi / s - mesh.reconstruct_adjoint(gphi * gphi) / (4.0 * s) + grad_G - barrier / rho
    F2 = problem.base - rho + mesh.divergence(W * gphi)
    return F1, F2


def _residual_norm(F1: np.ndarray, F2: np.ndarray) -> float:
    m1 = float(np.max(np.abs(F1))) if F1.size else 0.0
    m2 = float(np.max(np.abs(F2))) if F2.size else 0.0
    return max(m1, m2)


def _barrier_schedule(config: SolverConfig, rho_typ: float) -> list[float]:
    mus = []
    mu = config.barrier_init * rho_typ
    floor = config.barrier_floor * rho_typ
    while True:
        mus.append(mu)
        if mu <= floor:
            break
        mu *= config.barrier_shrink
    return mus


def _sparse_solve(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Direct sparse solve with two-sided equilibration.

    Barrier systems mix entries across ~20 orders of magnitude (mu/rho^2
    against mesh weights); scaling rows and columns by their maxima keeps
    the factorization away from spurious zero pivots.
    """
    A = A.tocsr()
    absA = abs(A)
    row_max = absA.max(axis=1).toarray().ravel()
    dr = 1.0 / np.sqrt(np.where(row_max > 0, row_max, 1.0))
    As = sp.diags(dr) @ A @ sp.diags(dr)
    col_max = abs(As).max(axis=0).toarray().ravel()
    dc = 1.0 / np.sqrt(np.where(col_max > 0, col_max, 1.0))
    As = (As @ sp.diags(dc)).tocsc()
    y = spla.spsolve(As, dr * b)
    x = dr * dc * y
    if not np.all(np.isfinite(x)):
        raise StepFailure("saddle system solve produced non-finite values", np.inf, 0)
    return x


class _InnerSolves:
    """Weighted-Laplacian solves for the exact dual potential of an iterate."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        K, L = mesh.edge_cells[:, 0], mesh.edge_cells[:, 1]
        self._rows = np.concatenate([K, L, K, L])
        self._cols = np.concatenate([K, L, L, K])

    def potential(self, weight_edge: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, float]:
        """Mean-zero phi with h + div(weight_edge . grad phi) = 0.

        Also returns the magnitude of the iterative-refinement correction,
        which estimates the rounding error left in phi by the conditioning
        of the weighted Laplacian.
        """
        mesh = self.mesh
        n = mesh.n_cells
        if n == 1:
            return np.zeros(1), 0.0
        c = weight_edge * mesh.edge_measures / mesh.edge_distances
        vals = np.concatenate([c, c, -c, -c])
        A = sp.csr_matrix((vals, (self._rows, self._cols)), shape=(n, n))
        rhs = h * mesh.cell_measures
        A_red = A[1:, 1:].tocsc()
        phi = np.zeros(n)
        try:
            lu = spla.splu(A_red)
        except RuntimeError as exc:
            raise StepFailure(f"singular mobility in dual potential solve: {exc}", np.inf, 0)
        sol = lu.solve(rhs[1:])
        correction = lu.solve(rhs[1:] - A_red @ sol)
        sol += correction
        phi[1:] = sol
        if not np.all(np.isfinite(phi)):
            raise StepFailure("singular mobility in dual potential solve", np.inf, 0)
        phi -= mesh.cell_integral(phi) / mesh.total_volume
        noise = float(np.max(np.abs(correction))) if correction.size else 0.0
        return phi, noise


def _barrier_merit(problem: StepProblem, rho: np.ndarray, mu: float,
                   inner: _InnerSolves) -> tuple[float, np.ndarray, float]:
    """Barrier objective, exact mean-zero dual potential and its noise."""
    mesh, s = problem.mesh, problem.step_scale
    W = mesh.reconstruct(0.5 * (rho + problem.base))
    if mesh.n_edges and np.min(W) <= 0:
        return np.inf, np.zeros(mesh.n_cells), 0.0
    phi, noise = inner.potential(W, problem.base - rho)
    act = 0.5 * mesh.ip_cells(problem.base - rho, phi)
    val = act / s + en.evaluate(problem.objective, rho, mesh)
    val -= mu * mesh.cell_integral(np.log(rho))
    return val, phi, noise


def solve_step(
    problem: StepProblem,
    config: SolverConfig | None = None,
    initial_guess: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> StepSolution:
    """Solve one convex inner step by barrier continuation + Newton.

    Returns the positive density, its dual potential (gauged so the full
    stationarity equation holds), the total Newton iteration count and the
    final optimality residual. Raises :class:`StepFailure` on
    non-convergence or loss of positivity.

    A strictly positive ``initial_guess`` density (typically the previous
    step of a flow) lets the continuation start near the barrier floor; if
    that short path fails, the full schedule from the default iterate is
    retried, so correctness never depends on the warm start.
    """
    config = config or SolverConfig()
    mesh = problem.mesh
    mass = mesh.cell_integral(problem.base)
    rho_typ = mass / mesh.total_volume

    warm = None
    if initial_guess is not None:
        cand = mesh.check_cell_field(np.asarray(initial_guess[0], dtype=float))
        if np.min(cand) > 0:
            warm = cand
    if warm is not None:
        short = [mu for mu in _barrier_schedule(config, rho_typ)
                 if mu <= config.warm_start_barrier * rho_typ]
        if short:
            try:
                return _solve_barrier_path(problem, config, warm, short)
            except StepFailure:
                pass
    rho0 = np.maximum(problem.base, _RHO_FLOOR * rho_typ)
    return _solve_barrier_path(problem, config, rho0, _barrier_schedule(config, rho_typ))


def _solve_barrier_path(
    problem: StepProblem,
    config: SolverConfig,
    rho_init: np.ndarray,
    mus: list[float],
) -> StepSolution:
    mesh, s = problem.mesh, problem.step_scale
    n = mesh.n_cells
    mass = mesh.cell_integral(problem.base)
    rho_typ = mass / mesh.total_volume
    vol = mesh.total_volume
    rho = rho_init * (mass / mesh.cell_integral(rho_init))

    D, G, R, Rs = mesh.div_mat, mesh.grad_mat, mesh.recon_mat, mesh.recon_adj_mat
    I = sp.identity(n, format="csr")
    inner = _InnerSolves(mesh)
    newton_tol = config.newton_tol * rho_typ
    total_iters = 0

    def projected_residual(rho_c, phi_c, mu_c) -> float:
        gphi_c = mesh.gradient(phi_c)
        F1_c = (
            -phi_c / s
            - mesh.reconstruct_adjoint(gphi_c * gphi_c) / (4.0 * s)
            + en.gradient(problem.objective, rho_c, mesh)
            - mu_c / rho_c
        )
        return float(np.max(np.abs(F1_c - mesh.cell_integral(F1_c) / vol)))

    converged: Optional[tuple[np.ndarray, np.ndarray, float, float]] = None
    try:
      for stage, mu in enumerate(mus):
        last = stage == len(mus) - 1
        tol = newton_tol if last else max(newton_tol, config.stage_tol_factor * mu)
        # merit carries the stage barrier; refresh when mu changes
        fval, phi, phi_noise = _barrier_merit(problem, rho, mu, inner)
        for _ in range(config.max_newton):
            gphi = mesh.gradient(phi)
            grad_G = en.gradient(problem.objective, rho, mesh)
            F1 = -phi / s - mesh.reconstruct_adjoint(gphi * gphi) / (4.0 * s) + grad_G - mu / rho
            # projected stationarity: the mass multiplier is the mean of F1
            c_mult = mesh.cell_integral(F1) / vol
            res = float(np.max(np.abs(F1 - c_mult)))
            # attainable accuracy: the dual potential carries rounding error
            # from its conditioned solve, amplified by 1/s in F1; below that
            # floor further Newton steps only chase noise
            noise_floor = 10.0 * phi_noise / s + 100.0 * np.finfo(float).eps * float(
                np.max(np.abs(phi) / s + np.abs(grad_G) + mu / rho)
            )
            if res <= max(tol, noise_floor):
                break
            W = mesh.reconstruct(0.5 * (rho + problem.base))
            h11 = en.hessian_diag(problem.objective, rho, mesh) + mu / rho**2
            Dg = sp.diags(gphi)
            Lw = (D @ sp.diags(W) @ G).tocsr()
            P = (Rs @ Dg @ G).tocsr()
            Q = (D @ Dg @ R).tocsr()
            J12 = (-(1.0 / s) * (I + 0.5 * P)).tocsr()
            J21 = (-I + 0.5 * Q).tocsr()
            J = sp.bmat([[sp.diags(h11), J12], [J21, Lw]], format="csc")
            delta = _sparse_solve(J, -np.concatenate([F1, np.zeros(n)]))
            drho = delta[:n]
            slope = mesh.ip_cells(F1, drho)  # = <grad f, drho>, mass-neutral in c_mult

            t = 1.0
            neg = drho < 0
            if np.any(neg):
                t = min(t, config.fraction_to_boundary * float(np.min(rho[neg] / -drho[neg])))
            # allowance for the rounding floor of the merit: near the optimum
            # the predicted decrease ~res^2 drops below float resolution and
            # plain Armijo would reject genuine (capped) Newton steps; the
            # residual guard keeps that allowance from admitting blowups the
            # merit cannot resolve (deep-barrier terms vanish in float)
            merit_floor = 1e-13 * (abs(fval) + 1.0)
            accepted = False
            for _bt in range(config.max_backtracks):
                rho_new = rho + t * drho
                if np.all(rho_new > 0):
                    # keep the mass exact: the update is mass-neutral only up
                    # to rounding, which accumulates over many iterations
                    rho_new = rho_new * (mass / mesh.cell_integral(rho_new))
                    f_new, phi_new, noise_new = _barrier_merit(problem, rho_new, mu, inner)
                    if f_new <= fval + 1e-4 * t * slope + merit_floor:
                        res_new = projected_residual(rho_new, phi_new, mu)
                        if res_new <= max(100.0 * res, tol):
                            rho, fval, phi, phi_noise = rho_new, f_new, phi_new, noise_new
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
        converged = (rho.copy(), phi.copy(), mu, res)
    except StepFailure:
        # deep barrier stages can be unsolvable in double precision when the
        # density spans vacuum cells (Jacobian scales like mu/rho^2); fall
        # back to the deepest converged stage if it is already tight enough
        if converged is None or converged[2] > 1e-6 * rho_typ:
            raise
        rho, phi, mu_done, res = converged
    else:
        mu_done = mus[-1]

    # absorb the mass multiplier into the potential so that the full
    # unconstrained stationarity holds componentwise (F1 depends on -phi/s,
    # so adding s*c to phi subtracts the constant c from F1)
    gphi = mesh.gradient(phi)
    grad_G = en.gradient(problem.objective, rho, mesh)
    F1 = -phi / s - mesh.reconstruct_adjoint(gphi * gphi) / (4.0 * s) + grad_G - mu_done / rho
    phi = phi + s * (mesh.cell_integral(F1) / vol)
    F1f, F2f = kkt_residual(problem, rho, phi, mu_done)
    res = _residual_norm(F1f, F2f)

    mass_out = mesh.cell_integral(rho)
    if abs(mass_out - mass) > 1e-9 * abs(mass):
        raise StepFailure(
            f"mass drift {abs(mass_out - mass):.3e} exceeds 1e-9 relative", res, total_iters
        )
    return StepSolution(rho=rho, phi=phi, iterations=total_iters, residual=res, barrier=mu_done)


# -- naive two-history multistep (nonconvex) -----------------------------------


def bdf2_kkt_residual(
    mesh: Mesh,
    energy,
    rho_prev: np.ndarray,
    rho_prevprev: np.ndarray,
    s: float,
    alpha: float,
    rho: np.ndarray,
    phi1: np.ndarray,
    phi2: np.ndarray,
    barrier: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Optimality residuals of the naive multistep objective.

    ``phi1`` is the dual of the action from ``rho_prev``, ``phi2`` the dual
    of the (negatively weighted) action from ``rho_prevprev``.
    """
    beta = alpha - 1.0
    g1, g2 = mesh.gradient(phi1), mesh.gradient(phi2)
    W1 = mesh.reconstruct(0.5 * (rho + rho_prev))
    W2 = mesh.reconstruct(0.5 * (rho + rho_prevprev))
    Fr = (
        (alpha / s) * (-phi1 - mesh.reconstruct_adjoint(g1 * g1) / 4.0)
        - (beta / s) * (-phi2 - mesh.reconstruct_adjoint(g2 * g2) / 4.0)
        + en.gradient(energy, rho, mesh)
        - barrier / rho
    )
    F1 = rho_prev - rho + mesh.divergence(W1 * g1)
    F2 = rho_prevprev - rho + mesh.divergence(W2 * g2)
    return Fr, F1, F2


def solve_bdf2_naive(
    mesh: Mesh,
    rho_prev: np.ndarray,
    rho_prevprev: np.ndarray,
    tau: float,
    alpha: float,
    energy,
    config: SolverConfig | None = None,
    initial_guess: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None,
) -> StepSolution:
    """Attempt a stationary point of the naive multistep problem.

    Newton is run on the full three-field optimality system. The objective
    is nonconvex (and can be unbounded below when the older density has
    empty cells), so failure is an expected outcome and is reported through
    :class:`StepFailure`.
    """
    config = config or SolverConfig()
    beta = alpha - 1.0
    if not (1.0 < alpha <= 2.0) or not (1.0 - beta) > 0:
        raise ValueError(f"alpha must lie in (1, 2) with 1 - beta > 0, got {alpha}")
    s = (1.0 - beta) * tau
    rho_prev = mesh.check_cell_field(rho_prev)
    rho_prevprev = mesh.check_cell_field(rho_prevprev)
    n = mesh.n_cells
    mass = mesh.cell_integral(rho_prev)
    rho_typ = mass / mesh.total_volume

    if initial_guess is not None:
        rho = np.maximum(np.asarray(initial_guess[0], dtype=float), _RHO_FLOOR * rho_typ)
        phi1 = np.asarray(initial_guess[1], dtype=float).copy()
        phi2 = np.asarray(initial_guess[2], dtype=float).copy()
    else:
        rho = np.maximum(rho_prev, _RHO_FLOOR * rho_typ)
        phi1 = np.zeros(n)
        phi2 = np.zeros(n)
    rho = rho * (mass / mesh.cell_integral(rho))

    D, G, R, Rs = mesh.div_mat, mesh.grad_mat, mesh.recon_mat, mesh.recon_adj_mat
    I = sp.identity(n, format="csr")
    newton_tol = config.newton_tol * rho_typ
    total_iters = 0

    mus = _barrier_schedule(config, rho_typ)
    for stage, mu in enumerate(mus):
        last = stage == len(mus) - 1
        tol = newton_tol if last else max(newton_tol, config.stage_tol_factor * mu)
        Fr, F1, F2 = bdf2_kkt_residual(
            mesh, energy, rho_prev, rho_prevprev, s, alpha, rho, phi1, phi2, mu
        )
        res = max(_residual_norm(Fr, F1), float(np.max(np.abs(F2))) if F2.size else 0.0)
        for _ in range(config.max_newton):
            if res <= tol:
                break
            g1, g2 = mesh.gradient(phi1), mesh.gradient(phi2)
            W1 = mesh.reconstruct(0.5 * (rho + rho_prev))
            W2 = mesh.reconstruct(0.5 * (rho + rho_prevprev))
            h11 = en.hessian_diag(energy, rho, mesh) + mu / rho**2
            A11 = sp.diags(h11)
            A12 = (-(alpha / s) * (I + 0.5 * Rs @ sp.diags(g1) @ G)).tocsr()
            A13 = ((beta / s) * (I + 0.5 * Rs @ sp.diags(g2) @ G)).tocsr()
            A21 = (-I + 0.5 * D @ sp.diags(g1) @ R).tocsr()
            A22 = (D @ sp.diags(W1) @ G).tocsr()
            A31 = (-I + 0.5 * D @ sp.diags(g2) @ R).tocsr()
            A33 = (D @ sp.diags(W2) @ G).tocsr()
            J = sp.bmat(
                [[A11, A12, A13], [A21, A22, None], [A31, None, A33]], format="csr"
            )
            # the potentials are fixed only up to one shared constant: J has
            # the right null vector (0, 1, (alpha/beta) 1) and left null
            # vector (0, m, -m); border the system to pin the gauge
            zero_n = np.zeros(n)
            m_cell = mesh.cell_measures
            null_right = np.concatenate([zero_n, np.ones(n), (alpha / beta) * np.ones(n)])
            null_left = np.concatenate([zero_n, m_cell, -m_cell])
            J_aug = sp.bmat(
                [[J, sp.csr_matrix(null_left.reshape(-1, 1))],
                 [sp.csr_matrix(null_right.reshape(1, -1)), None]],
                format="csc",
            )
            rhs = -np.concatenate([Fr, F1, F2, [0.0]])
            try:
                delta = _sparse_solve(J_aug, rhs)
            except StepFailure as exc:
                raise StepFailure(
                    f"singular multistep system at barrier {mu:.2e}", res, total_iters
                ) from exc
            drho, dphi1, dphi2 = delta[:n], delta[n : 2 * n], delta[2 * n : 3 * n]

            t = 1.0
            neg = drho < 0
            if np.any(neg):
                kappa = max(config.fraction_to_boundary, 1.0 - mu / rho_typ)
                t = min(t, kappa * float(np.min(rho[neg] / -drho[neg])))
            accepted = False
            for _bt in range(config.max_backtracks):
                rho_new = rho + t * drho
                if np.all(rho_new > 0):
                    p1n, p2n = phi1 + t * dphi1, phi2 + t * dphi2
                    Frn, F1n, F2n = bdf2_kkt_residual(
                        mesh, energy, rho_prev, rho_prevprev, s, alpha, rho_new, p1n, p2n, mu
                    )
                    res_new = max(
                        _residual_norm(Frn, F1n), float(np.max(np.abs(F2n))) if F2n.size else 0.0
                    )
                    if res_new <= (1.0 - 1e-4 * t) * res:
                        rho, phi1, phi2 = rho_new, p1n, p2n
                        Fr, F1, F2, res = Frn, F1n, F2n, res_new
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

    mass_out = mesh.cell_integral(rho)
    if abs(mass_out - mass) > 1e-9 * abs(mass):
        raise StepFailure(
            f"mass drift {abs(mass_out - mass):.3e} exceeds 1e-9 relative", res, total_iters
        )
    return StepSolution(
        rho=rho, phi=phi1, iterations=total_iters, residual=res, barrier=mus[-1], phi_extra=phi2
    )
