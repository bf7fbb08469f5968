import numpy as np
import pytest

from wgflow.mesh import build_cartesian_mesh
from wgflow.multiphase import (
    PhaseSystem,
    heavy_phase_center,
    multiphase_energy,
    multiphase_ljko_step,
    run_multiphase,
)

GRAVITY = np.array([0.0, -9.81])


def two_phase_system(mesh, lambda_bc=0.05, gravity=GRAVITY, layered=True, rng=None):
    y = mesh.centers[:, 1]
    if layered:
        s0 = np.where(y > 1.5, 1.0, 0.0)
    else:
        s0 = rng.uniform(0.2, 0.8, size=mesh.n_cells)
    return PhaseSystem(
        mesh=mesh,
        densities=[1.0, 0.87],
        viscosities=[1.0, 100.0],
        saturations=[s0, 1.0 - s0],
        gravity=gravity,
        lambda_bc=lambda_bc,
    )


@pytest.fixture
def mesh():
    return build_cartesian_mesh(6, 12, (0.0, 1.0, 0.0, 2.0))


class TestEnergy:
    def test_capillary_pressure_is_energy_slope(self, mesh):
        system = two_phase_system(mesh)
        energy = multiphase_energy(system)
        eps = 1e-7
        for s1 in (0.1, 0.5, 0.9):
            fd = (energy.capillary(np.array([s1 + eps]))
                  - energy.capillary(np.array([s1 - eps]))) / (2 * eps)
            assert energy.capillary_pressure(np.array([s1]))[0] == pytest.approx(
                fd[0], rel=1e-6
            )

    def test_capillary_convexity(self, mesh):
        system = two_phase_system(mesh)
        energy = multiphase_energy(system)
        s = np.linspace(0.05, 0.95, 40)
        vals = energy.capillary(s)
        second = vals[:-2] - 2 * vals[1:-1] + vals[2:]
        assert np.all(second > 0)

    def test_gravity_potentials(self, mesh):
        system = two_phase_system(mesh)
        energy = multiphase_energy(system)
        y = mesh.centers[:, 1]
        assert np.allclose(energy.potentials[0], 9.81 * y)
        assert np.allclose(energy.potentials[1], 0.87 * 9.81 * y)

    def test_capillary_needs_two_phases(self, mesh):
        with pytest.raises(ValueError):
            PhaseSystem(
                mesh=mesh,
                densities=[1.0, 0.9, 0.8],
                viscosities=[1.0, 1.0, 1.0],
                saturations=[np.full(mesh.n_cells, 1 / 3)] * 3,
                gravity=GRAVITY,
                lambda_bc=0.05,
            )


class TestStep:
    def test_uniform_no_gravity_fixed_point(self, mesh):
        s0 = np.full(mesh.n_cells, 0.4)
        system = PhaseSystem(
            mesh=mesh,
            densities=[1.0, 0.87],
            viscosities=[1.0, 100.0],
            saturations=[s0, 1.0 - s0],
            gravity=np.zeros(2),
            lambda_bc=0.05,
        )
        out = multiphase_ljko_step(mesh, system, tau=1.0)
        assert np.max(np.abs(out.saturations[0] - s0)) <= 1e-7

    def test_conservation_random_data(self, mesh, rng):
        system = two_phase_system(mesh, layered=False, rng=rng)
        masses = system.masses()
        out = multiphase_ljko_step(mesh, system, tau=0.5)
        for m_new, m_old in zip(out.masses(), masses):
            assert abs(m_new - m_old) <= 1e-8 * abs(m_old)
        assert out.saturation_sum_error() <= 1e-8
        for s in out.saturations:
            assert np.all(s > 0)
            assert np.all(s < 1 + 1e-8)

    def test_energy_decreases(self, mesh):
        system = two_phase_system(mesh)
        energy = multiphase_energy(system)
        before = energy.value(mesh, system.saturations)
        out = multiphase_ljko_step(mesh, system, tau=1.0)
        after = energy.value(mesh, out.saturations)
        assert after <= before + 1e-10 * max(1.0, abs(before))


class TestRun:
    def test_single_step_run(self, mesh):
        system = two_phase_system(mesh)
        traj = run_multiphase(mesh, system, tau=1.0, T=1.0)
        assert traj.complete
        assert len(traj.states) == 2

    def test_segregation_and_monotone_energy(self, mesh):
        system = two_phase_system(mesh)
        traj = run_multiphase(mesh, system, tau=1.0, T=6.0)
        assert traj.complete, traj.failure
        assert all(b <= a + 1e-9 for a, b in zip(traj.energies, traj.energies[1:]))
        centers = [heavy_phase_center(st) for st in traj.states]
        assert all(b < a for a, b in zip(centers, centers[1:]))
        for st in traj.states:
            assert st.saturation_sum_error() <= 1e-8

    def test_extrapolated_stepping_mode(self, mesh):
        system = two_phase_system(mesh)
        traj = run_multiphase(mesh, system, tau=1.0, T=3.0, scheme="evbdf2")
        assert traj.complete, traj.failure
        centers = [heavy_phase_center(st) for st in traj.states]
        assert centers[-1] < centers[0]

    def test_invalid_scheme(self, mesh):
        system = two_phase_system(mesh)
        with pytest.raises(ValueError):
            run_multiphase(mesh, system, tau=1.0, T=2.0, scheme="rk4")

    def test_bad_horizon(self, mesh):
        system = two_phase_system(mesh)
        with pytest.raises(ValueError):
            run_multiphase(mesh, system, tau=0.3, T=1.0)
