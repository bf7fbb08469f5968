import numpy as np
import pytest

from wgflow.hminus import (
    SingularMobilityError,
    UnboundedDualError,
    action,
    action_with_potential,
    action_primal_form,
    laplacian_apply,
    solve_potential,
)
from wgflow.mesh import build_cartesian_mesh, build_interval_mesh


def dense_pinned_solve(mesh, weight, h):
    """Dense reference: assemble the weighted graph Laplacian, pin one cell."""
    n = mesh.n_cells
    w_edge = mesh.reconstruct(weight)
    A = np.zeros((n, n))
    for e in range(mesh.n_edges):
        K, L = mesh.edge_cells[e]
        c = w_edge[e] * mesh.edge_measures[e] / mesh.edge_distances[e]
        A[K, K] += c
        A[L, L] += c
        A[K, L] -= c
        A[L, K] -= c
    rhs = h * mesh.cell_measures
    phi = np.zeros(n)
    phi[1:] = np.linalg.solve(A[1:, 1:], rhs[1:])
    phi -= mesh.cell_integral(phi) / mesh.total_volume
    return phi


def balanced_field(mesh, rng):
    h = rng.normal(size=mesh.n_cells)
    return h - mesh.cell_integral(h) / mesh.total_volume


class TestSolvePotential:
    def test_zero_source(self, any_mesh):
        phi = solve_potential(any_mesh, np.ones(any_mesh.n_cells), np.zeros(any_mesh.n_cells))
        assert np.allclose(phi, 0.0, atol=1e-14)

    def test_linearity(self, any_mesh, rng):
        w = 1.0 + rng.uniform(size=any_mesh.n_cells)
        h = balanced_field(any_mesh, rng)
        phi1 = solve_potential(any_mesh, w, h)
        phi3 = solve_potential(any_mesh, w, 3.0 * h)
        assert np.allclose(phi3, 3.0 * phi1, rtol=1e-11, atol=1e-13)

    def test_three_cell_dense_oracle(self):
        mesh = build_interval_mesh(3, (0.0, 1.0))
        w = np.ones(3)
        h = np.array([0.4, 0.0, -0.4])
        phi = solve_potential(mesh, w, h)
        ref = dense_pinned_solve(mesh, w, h)
        assert np.allclose(phi, ref, atol=1e-12)

    def test_small_mesh_equivalence(self, rng):
        for mesh in (build_interval_mesh(5, (0.0, 1.0)),
                     build_interval_mesh(6, (0.0, 2.0)),
                     build_cartesian_mesh(2, 3, (0.0, 1.0, 0.0, 1.0))):
            w = 0.5 + rng.uniform(size=mesh.n_cells)
            h = balanced_field(mesh, rng)
            phi = solve_potential(mesh, w, h)
            ref = dense_pinned_solve(mesh, w, h)
            assert np.max(np.abs(phi - ref)) <= 1e-10

    def test_mean_zero_gauge(self, any_mesh, rng):
        w = 1.0 + rng.uniform(size=any_mesh.n_cells)
        h = balanced_field(any_mesh, rng)
        phi = solve_potential(any_mesh, w, h)
        assert abs(any_mesh.cell_integral(phi)) <= 1e-12 * any_mesh.total_volume

    def test_unbalanced_source_rejected(self, any_mesh):
        h = np.ones(any_mesh.n_cells)
        with pytest.raises(UnboundedDualError):
            solve_potential(any_mesh, np.ones(any_mesh.n_cells), h)

    def test_nonpositive_weight_rejected(self):
        mesh = build_interval_mesh(3, (0.0, 1.0))
        w = np.array([1.0, -1.0, 1.0])
        h = np.array([0.3, 0.0, -0.3])
        with pytest.raises(SingularMobilityError):
            solve_potential(mesh, w, h)


class TestAction:
    def test_zero_source(self, any_mesh):
        assert action(any_mesh, np.ones(any_mesh.n_cells), np.zeros(any_mesh.n_cells)) == 0.0

    def test_nonnegative(self, any_mesh, rng):
        w = 0.5 + rng.uniform(size=any_mesh.n_cells)
        h = balanced_field(any_mesh, rng)
        assert action(any_mesh, w, h) >= 0.0

    def test_quadratic_scaling(self, any_mesh, rng):
        w = 0.5 + rng.uniform(size=any_mesh.n_cells)
        h = balanced_field(any_mesh, rng)
        a1 = action(any_mesh, w, h)
        a2 = action(any_mesh, w, 2.0 * h)
        assert a2 == pytest.approx(4.0 * a1, rel=1e-10)

    def test_optimal_value_identity(self, any_mesh, rng):
        w = 0.5 + rng.uniform(size=any_mesh.n_cells)
        h = balanced_field(any_mesh, rng)
        val, phi = action_with_potential(any_mesh, w, h)
        primal = action_primal_form(any_mesh, w, h, phi)
        half = 0.5 * any_mesh.ip_cells(h, phi)
        scale = max(1.0, abs(val))
        assert abs(val - primal) <= 1e-10 * scale
        assert abs(val - half) <= 1e-10 * scale

    def test_monotone_in_weight(self, any_mesh, rng):
        h = balanced_field(any_mesh, rng)
        w2 = 0.5 + rng.uniform(size=any_mesh.n_cells)
        w1 = w2 + rng.uniform(size=any_mesh.n_cells)  # w1 >= w2 > 0
        assert action(any_mesh, w1, h) <= action(any_mesh, w2, h) + 1e-12


class TestLaplacianApply:
    def test_constant_in_kernel(self, any_mesh):
        w = np.ones(any_mesh.n_cells)
        out = laplacian_apply(any_mesh, w, np.full(any_mesh.n_cells, 4.2))
        assert np.allclose(out, 0.0, atol=1e-13)

    def test_self_adjoint(self, any_mesh, rng):
        w = 0.5 + rng.uniform(size=any_mesh.n_cells)
        phi = rng.normal(size=any_mesh.n_cells)
        psi = rng.normal(size=any_mesh.n_cells)
        lhs = any_mesh.ip_cells(laplacian_apply(any_mesh, w, phi), psi)
        rhs = any_mesh.ip_cells(phi, laplacian_apply(any_mesh, w, psi))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-13)

    def test_positive_semidefinite(self, any_mesh, rng):
        w = 0.5 + rng.uniform(size=any_mesh.n_cells)
        phi = rng.normal(size=any_mesh.n_cells)
        assert any_mesh.ip_cells(laplacian_apply(any_mesh, w, phi), phi) >= -1e-13

    def test_consistency_with_potential_solve(self, any_mesh, rng):
        w = 0.5 + rng.uniform(size=any_mesh.n_cells)
        h = balanced_field(any_mesh, rng)
        phi = solve_potential(any_mesh, w, h)
        assert np.allclose(laplacian_apply(any_mesh, w, phi), h, atol=1e-10)
