import numpy as np
import pytest

from wgflow.energies import evaluate, fokker_planck_energy, porous_medium_energy
from wgflow.hminus import action
from wgflow.mesh import build_interval_mesh
from wgflow.schemes import (
    SchemeConfig,
    evbdf2_step,
    ljko_step,
    run_flow,
    total_variation,
    vim_step,
)

ALPHA = 4.0 / 3.0


@pytest.fixture
def mesh():
    return build_interval_mesh(16, (0.0, 1.0))


@pytest.fixture
def entropy(mesh):
    return fokker_planck_energy(mesh)


class TestSchemeConfig:
    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            SchemeConfig(scheme="leapfrog")

    def test_invalid_horizon(self):
        with pytest.raises(ValueError):
            SchemeConfig(scheme="ljko", tau=0.1, T=0.05)

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            SchemeConfig(scheme="evbdf2", tau=0.01, T=0.1, alpha=2.5)

    def test_n_steps_requires_multiple(self):
        cfg = SchemeConfig(scheme="ljko", tau=0.03, T=0.1)
        with pytest.raises(ValueError):
            cfg.n_steps

    def test_n_steps(self):
        assert SchemeConfig(scheme="ljko", tau=0.02, T=0.1).n_steps == 5


class TestSingleSteps:
    def test_ljko_preserves_stationary_state(self, mesh, entropy):
        state = np.full(mesh.n_cells, 1.7)
        sol = ljko_step(mesh, entropy, state, 0.05)
        assert np.max(np.abs(sol.rho - state)) <= 1e-8

    def test_evbdf2_preserves_stationary_state(self, mesh, entropy):
        state = np.full(mesh.n_cells, 1.7)
        sol, rho_alpha = evbdf2_step(mesh, entropy, state, state, 0.05, ALPHA)
        assert np.max(np.abs(rho_alpha - state)) <= 1e-7
        assert np.max(np.abs(sol.rho - state)) <= 1e-7

    def test_vim_preserves_stationary_state(self, mesh, entropy):
        state = np.full(mesh.n_cells, 1.7)
        sol, half = vim_step(mesh, entropy, state, 0.05)
        assert np.max(np.abs(sol.rho - state)) <= 1e-7

    def test_vim_fresh_potential_matches_reuse(self, mesh):
        energy = fokker_planck_energy(mesh, V=lambda p: -p[0])
        x = mesh.centers[:, 0]
        rho = 1.0 + 0.5 * np.sin(np.pi * x) ** 2
        reused, _ = vim_step(mesh, energy, rho, 0.01, fresh_potential=False)
        fresh, _ = vim_step(mesh, energy, rho, 0.01, fresh_potential=True)
        assert np.max(np.abs(reused.rho - fresh.rho)) <= 1e-6

    def test_evbdf2_competitor_inequality(self, mesh):
        # the inner-step minimizer must beat the extrapolated base
        energy = fokker_planck_energy(mesh, V=lambda p: -p[0])
        x = mesh.centers[:, 0]
        rho0 = 1.0 + 0.4 * np.cos(np.pi * x) ** 2
        tau = 0.02
        rho1 = ljko_step(mesh, energy, rho0, tau).rho
        sol, rho_alpha = evbdf2_step(mesh, energy, rho1, rho0, tau, ALPHA)
        beta = ALPHA - 1.0
        s = tau * (1.0 - beta)
        lhs = action(mesh, 0.5 * (sol.rho + rho_alpha), rho_alpha - sol.rho) / s \
            + evaluate(energy, sol.rho, mesh)
        rhs = evaluate(energy, rho_alpha, mesh)
        assert lhs <= rhs + 1e-9 * max(1.0, abs(rhs))


class TestRunFlow:
    def test_ljko_single_step_trajectory(self, mesh, entropy):
        x = mesh.centers[:, 0]
        rho0 = 1.0 + 0.2 * np.sin(2 * np.pi * x)
        cfg = SchemeConfig(scheme="ljko", tau=0.01, T=0.01)
        traj = run_flow(mesh, entropy, rho0, cfg)
        assert traj.complete
        assert len(traj) == 2

    def test_energy_monotone_along_ljko(self, mesh, entropy):
        x = mesh.centers[:, 0]
        rho0 = 1.0 + 0.8 * np.sin(2 * np.pi * x) ** 2
        cfg = SchemeConfig(scheme="ljko", tau=0.01, T=0.05)
        traj = run_flow(mesh, entropy, rho0, cfg)
        energies = [d.energy for d in traj.diagnostics]
        assert all(b <= a + 1e-10 for a, b in zip(energies, energies[1:]))

    @pytest.mark.parametrize("scheme", ["ljko", "evbdf2", "vim", "bdf2-naive"])
    def test_mass_conserved_along_trajectory(self, mesh, scheme):
        energy = fokker_planck_energy(mesh, V=lambda p: -p[0])
        x = mesh.centers[:, 0]
        rho0 = 1.0 + 0.3 * np.cos(np.pi * x)
        cfg = SchemeConfig(scheme=scheme, tau=0.01, T=0.04)
        traj = run_flow(mesh, energy, rho0, cfg)
        assert traj.complete, traj.failure
        masses = [d.mass for d in traj.diagnostics]
        for m in masses[1:]:
            assert abs(m - masses[0]) <= 1e-9 * masses[0]

    @pytest.mark.parametrize("scheme", ["evbdf2", "vim", "bdf2-naive"])
    def test_stationary_trajectories(self, mesh, entropy, scheme):
        rho0 = np.full(mesh.n_cells, 1.3)
        cfg = SchemeConfig(scheme=scheme, tau=0.02, T=0.08)
        traj = run_flow(mesh, entropy, rho0, cfg)
        assert traj.complete, traj.failure
        assert np.max(np.abs(traj.densities[-1] - rho0)) <= 1e-7

    def test_mass_normalization_option(self, mesh, entropy):
        rho0 = np.full(mesh.n_cells, 4.0)
        cfg = SchemeConfig(scheme="ljko", tau=0.01, T=0.01, normalize_mass=True)
        traj = run_flow(mesh, entropy, rho0, cfg)
        assert traj.diagnostics[0].mass == pytest.approx(1.0)

    def test_naive_multistep_failure_is_structured(self):
        # indicator datum under the porous-medium drift: the two-history
        # objective is unbounded below and the stationary-point search is
        # expected to break down
        mesh = build_interval_mesh(50, (0.0, 1.0))
        energy = porous_medium_energy(mesh, 2.0, V=lambda p: -p[0])
        rho0 = np.where(mesh.centers[:, 0] <= 0.3, 1.0, 0.0)
        cfg = SchemeConfig(scheme="bdf2-naive", tau=0.002, T=0.02)
        traj = run_flow(mesh, energy, rho0, cfg)
        assert traj.status == "failed"
        assert traj.failure is not None
        assert traj.failure["scheme"] == "bdf2-naive"
        assert "residual" in traj.failure

    def test_vim_oscillates_more_than_evbdf2(self):
        # pure diffusion of a sharp Gaussian: the midpoint scheme's
        # extrapolation against the walls produces oscillations
        mesh = build_interval_mesh(50, (0.0, 1.0))
        energy = fokker_planck_energy(mesh)
        x = mesh.centers[:, 0]
        rho0 = np.exp(-50.0 * (x - 0.5) ** 2)
        tv = {}
        for scheme in ("vim", "evbdf2"):
            cfg = SchemeConfig(scheme=scheme, tau=0.01, T=0.02)
            traj = run_flow(mesh, energy, rho0, cfg)
            assert traj.complete
            tv[scheme] = total_variation(mesh, traj.densities[-1])
        assert tv["vim"] > tv["evbdf2"]


class TestTotalVariation:
    def test_monotone_profile(self):
        mesh = build_interval_mesh(10, (0.0, 1.0))
        rho = np.linspace(0.0, 1.0, 10)
        assert total_variation(mesh, rho) == pytest.approx(1.0)

    def test_constant_profile(self, mesh):
        assert total_variation(mesh, np.ones(mesh.n_cells)) == 0.0
