import itertools

import numpy as np
import pytest
from scipy.integrate import quad

from wgflow.mesh import build_interval_mesh
from wgflow.oracles import (
    barenblatt,
    barenblatt_mass_constant,
    barenblatt_support_radius,
    density_from_quantiles,
    fp_exact,
    free_flow_1d,
    metric_extrapolation_1d,
    pav,
    quantiles_1d,
    w2_1d,
)


class TestFpExact:
    def test_value_at_origin(self):
        expected = np.pi + np.pi * np.exp(-0.5)
        assert fp_exact(0.0, 0.0, 1.0) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("t", [0.0, 0.1, 0.25])
    def test_mass_constancy(self, t):
        mass0 = quad(lambda x: fp_exact(0.0, x, 1.0), 0.0, 1.0, epsabs=1e-13)[0]
        mass = quad(lambda x: fp_exact(t, x, 1.0), 0.0, 1.0, epsabs=1e-13)[0]
        assert abs(mass - mass0) <= 1e-10

    def test_driftless_long_time_limit(self):
        x = np.linspace(0.0, 1.0, 11)
        assert np.allclose(fp_exact(50.0, x, 0.0), np.pi, atol=1e-12)

    def test_pde_residual_finite_differences(self):
        g, dt, dx = 1.0, 1e-5, 1e-4
        for t, x in [(0.05, 0.3), (0.1, 0.7), (0.2, 0.5)]:
            d_t = (fp_exact(t + dt, x, g) - fp_exact(t - dt, x, g)) / (2 * dt)
            d_xx = (
                fp_exact(t, x + dx, g) - 2 * fp_exact(t, x, g) + fp_exact(t, x - dx, g)
            ) / dx**2
            d_x = (fp_exact(t, x + dx, g) - fp_exact(t, x - dx, g)) / (2 * dx)
            residual = d_t - d_xx + g * d_x  # d_t = d_xx + div(rho dV/dx), dV/dx = -g
            assert abs(residual) <= 1e-6


class TestBarenblatt:
    def test_unit_mass_2d(self):
        t = 1e-4
        r_sup = barenblatt_support_radius(t, 2.0, 2)
        mass = quad(
            lambda r: 2 * np.pi * r * barenblatt(t, np.array([r, 0.0]), 2.0, 2, x0=np.zeros(2)),
            0.0,
            r_sup,
            epsabs=1e-12,
        )[0]
        assert abs(mass - 1.0) <= 1e-8

    @pytest.mark.parametrize("delta", [2.0, 3.0])
    def test_unit_mass_1d(self, delta):
        t = 1e-3
        r_sup = barenblatt_support_radius(t, delta, 1)
        mass = quad(
            lambda x: barenblatt(t, x, delta, d=1, x0=0.0), -r_sup, r_sup, epsabs=1e-12
        )[0]
        assert abs(mass - 1.0) <= 1e-8

    def test_maximum_at_center(self):
        x0 = np.array([0.5, 0.5])
        pts = np.column_stack([np.linspace(0, 1, 33), np.linspace(0, 1, 33)])
        vals = barenblatt(1e-3, pts, 2.0, 2, x0=x0)
        center = barenblatt(1e-3, x0, 2.0, 2, x0=x0)
        assert center >= np.max(vals) - 1e-15

    def test_support_radius_scaling(self):
        lam = 1.0 / (2 * (2.0 - 1.0) + 2.0)
        r1 = barenblatt_support_radius(1e-4, 2.0, 2)
        r2 = barenblatt_support_radius(2e-4, 2.0, 2)
        assert r2 / r1 == pytest.approx(2.0**lam, rel=1e-10)

    def test_time_must_be_positive(self):
        with pytest.raises(ValueError):
            barenblatt(0.0, np.zeros(2), 2.0, 2)


class TestQuantiles:
    def test_uniform_density(self):
        mesh = build_interval_mesh(10, (0.0, 1.0))
        q = quantiles_1d(mesh, np.ones(10), m=1000)
        levels = (np.arange(1000) + 0.5) / 1000
        assert np.allclose(q, levels, atol=1e-12)

    def test_point_mass(self):
        mesh = build_interval_mesh(5, (0.0, 1.0))
        rho = np.zeros(5)
        rho[2] = 1.0
        q = quantiles_1d(mesh, rho, m=100)
        assert np.all((q >= 0.4) & (q <= 0.6))

    def test_round_trip(self, rng):
        mesh = build_interval_mesh(20, (0.0, 1.0))
        rho = rng.uniform(0.1, 2.0, size=20)
        total = mesh.cell_integral(rho)
        q = quantiles_1d(mesh, rho, m=10_000)
        back = density_from_quantiles(mesh, q, total)
        masses = rho * mesh.cell_measures
        masses_back = back * mesh.cell_measures
        assert np.max(np.abs(masses - masses_back)) <= 1e-3 * total

    def test_zero_mass_rejected(self):
        mesh = build_interval_mesh(4, (0.0, 1.0))
        with pytest.raises(ValueError):
            quantiles_1d(mesh, np.zeros(4))


class TestW2:
    def test_identical(self, rng):
        q = np.sort(rng.normal(size=50))
        assert w2_1d(q, q) == 0.0

    def test_translation(self, rng):
        q = np.sort(rng.normal(size=50))
        assert w2_1d(q, q + 0.37) == pytest.approx(0.37, rel=1e-12)

    def test_uniform_dilation(self):
        m = 200_000
        u = (np.arange(m) + 0.5) / m
        assert w2_1d(u, 2 * u) == pytest.approx(1.0 / np.sqrt(3.0), rel=1e-5)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            w2_1d(np.zeros(3), np.zeros(4))


def brute_force_monotone_projection(z):
    """Enumerate all block partitions; the projection is blockwise means."""
    m = len(z)
    best, best_val = None, np.inf
    for cuts in itertools.product([0, 1], repeat=m - 1):
        blocks, start = [], 0
        for i, cut in enumerate(cuts):
            if cut:
                blocks.append((start, i + 1))
                start = i + 1
        blocks.append((start, m))
        cand = np.concatenate([np.full(b - a, np.mean(z[a:b])) for a, b in blocks])
        if np.all(np.diff(cand) >= -1e-14):
            val = float(np.sum((cand - z) ** 2))
            if val < best_val - 1e-15:
                best, best_val = cand, val
    return best


class TestMetricExtrapolation:
    def test_identical_pair_unchanged(self, rng):
        q = np.sort(rng.normal(size=30))
        assert np.allclose(metric_extrapolation_1d(q, q, 4.0 / 3.0), q)

    def test_monotone_input_is_linear_extrapolation(self):
        q0 = np.linspace(0.0, 1.0, 15)
        q1 = q0 + 0.1
        alpha = 4.0 / 3.0
        expected = alpha * q1 - (alpha - 1.0) * q0
        assert np.allclose(metric_extrapolation_1d(q0, q1, alpha), expected)

    def test_output_monotone(self, rng):
        for _ in range(20):
            q0 = np.sort(rng.normal(size=40))
            q1 = np.sort(rng.normal(size=40))
            out = metric_extrapolation_1d(q0, q1, 1.8)
            assert np.all(np.diff(out) >= -1e-14)

    @pytest.mark.parametrize("m", [2, 5, 8, 12])
    def test_pav_equals_brute_force(self, m, rng):
        for _ in range(6):
            z = rng.normal(size=m)
            assert np.allclose(pav(z), brute_force_monotone_projection(z), atol=1e-12)

    def test_dissipativity(self, rng):
        alpha = 4.0 / 3.0
        beta = alpha - 1.0
        for _ in range(25):
            q0 = np.sort(rng.normal(size=60))
            q1 = np.sort(rng.normal(size=60))
            out = metric_extrapolation_1d(q0, q1, alpha)
            assert w2_1d(q1, out) <= beta * w2_1d(q0, q1) + 1e-12


class TestFreeFlow:
    def test_matches_metric_when_no_crossing(self):
        q0 = np.linspace(0.0, 1.0, 12)
        q1 = 1.2 * q0 + 0.05
        alpha = 1.5
        assert np.allclose(
            free_flow_1d(q0, q1, alpha), metric_extrapolation_1d(q0, q1, alpha)
        )

    def test_dissipativity(self, rng):
        alpha = 4.0 / 3.0
        beta = alpha - 1.0
        for _ in range(25):
            q0 = np.sort(rng.normal(size=60))
            q1 = np.sort(rng.normal(size=60))
            out = free_flow_1d(q0, q1, alpha)
            assert w2_1d(q1, out) <= beta * w2_1d(q0, q1) + 1e-12

    def test_crossing_pair(self):
        # two equal masses at -1 and 1 collapse to the origin; free flow lets
        # them swap while the variational extrapolation keeps them stuck
        q0 = np.array([-1.0, 1.0])
        q1 = np.array([0.0, 0.0])
        assert np.allclose(free_flow_1d(q0, q1, 2.0), [-1.0, 1.0])
        assert np.allclose(metric_extrapolation_1d(q0, q1, 2.0), [0.0, 0.0])


# -- randomized property checks ----------------------------------------------------

from hypothesis import given, settings
from hypothesis import strategies as st

finite_floats = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)


@given(st.lists(finite_floats, min_size=1, max_size=25))
@settings(max_examples=60, deadline=None)
def test_pav_projection_properties(z):
    z = np.array(z)
    out = pav(z)
    # monotone, idempotent, and no farther from z than any sorted candidate
    assert np.all(np.diff(out) >= -1e-12)
    assert np.allclose(pav(out), out, atol=1e-12)
    assert np.sum((out - z) ** 2) <= np.sum((np.sort(z) - z) ** 2) + 1e-12


@given(st.lists(finite_floats, min_size=2, max_size=20),
       st.lists(finite_floats, min_size=2, max_size=20),
       st.floats(min_value=1.01, max_value=2.0))
@settings(max_examples=60, deadline=None)
def test_extrapolations_dissipative_on_random_quantiles(a, b, alpha):
    m = min(len(a), len(b))
    q0 = np.sort(np.array(a[:m]))
    q1 = np.sort(np.array(b[:m]))
    beta = alpha - 1.0
    bound = beta * w2_1d(q0, q1) + 1e-9
    assert w2_1d(q1, metric_extrapolation_1d(q0, q1, alpha)) <= bound
    assert w2_1d(q1, free_flow_1d(q0, q1, alpha)) <= bound
