"""Deterministic solver: conservation, positivity, fixed points, the OU
closed form, the transformed (gamma) equation, and transition kernels."""

import numpy as np
import pytest

from fpinfo.errors import PreconditionError
from fpinfo.field import Grid, gaussian_field, mollified_delta
from fpinfo.functionals import relative_functionals
from fpinfo.potential import (Constant, EvenQuartic, Quadratic,
                              SchrodingerPotential, choose_beta, steady_state)
from fpinfo.solver_fd import (bernoulli, build_transition_kernel,
                              build_transition_kernels, evolve, evolve_gamma,
                              _LuFlowAdvancer, _SpectralFlowAdvancer)

GRID = Grid(((-8.0, 8.0),), (1025,))
OU = Quadratic(1.0)


def test_bernoulli_function():
    assert bernoulli(np.array([0.0]))[0] == 1.0
    z = np.array([1e-14, 1.0, -1.0, 30.0])
    np.testing.assert_allclose(bernoulli(z),
                               [1.0, 1 / (np.e - 1), np.e / (np.e - 1),
                                30 / (np.exp(30) - 1)], rtol=1e-12)


def _tabulated_well():
    xs = np.linspace(-8, 8, 401)
    return __import__("fpinfo.potential", fromlist=["Tabulated"]).Tabulated(
        xs, 0.5 * xs**2)


@pytest.mark.parametrize("p", [OU, EvenQuartic(0.05, 0.1), Constant(0.0),
                               _tabulated_well()])
def test_steady_state_is_fixed_point(p):
    nu = steady_state(p, GRID)
    traj = evolve(nu, p, 0.5, dt=1e-3, save_times=[0.5])
    assert np.max(np.abs(traj.fields[-1].values - nu.values)) <= 1e-6


def test_spectral_matches_lu_backend():
    mu0 = gaussian_field(GRID, 0.0, 4.0)
    a = _SpectralFlowAdvancer(OU, GRID)
    b = _LuFlowAdvancer(OU, GRID)
    a.set_state(mu0.values)
    b.set_state(mu0.values)
    a.advance(5e-4, 200)
    b.advance(5e-4, 200)
    assert np.max(np.abs(a.get_state() - b.get_state())) <= 1e-10


def test_heat_equilibration_to_uniform():
    g = Grid(((0.0, 1.0),), (65,))
    bump = mollified_delta(g, 0.3, 3 * g.h[0])
    traj = evolve(bump, Constant(0.0), 2.0, dt=1e-3, save_times=[2.0])
    assert np.max(np.abs(traj.fields[-1].values - 1.0)) <= 1e-6


def test_ou_variance_closed_form():
    mu0 = gaussian_field(GRID, 0.0, 4.0)
    traj = evolve(mu0, OU, 0.5, dt=2.5e-4, save_times=[0.5])
    var = traj.fields[-1].variance()
    # closed form from the box-truncated initial variance, plus dt bias
    s0 = mu0.variance()
    expected = (s0 - 1) * np.exp(-1) + 1
    assert var == pytest.approx(expected, abs=1e-3)
    assert var == pytest.approx(4 * np.exp(-1) + 1 - np.exp(-1), abs=5e-3)


def test_mass_conservation_and_positivity():
    mu0 = gaussian_field(GRID, 1.0, 0.25)
    traj = evolve(mu0, OU, 1.0, dt=5e-4, save_times=np.arange(1, 11) * 0.1)
    for f in traj.fields:
        assert abs(f.mass - 1.0) <= 1e-8
        assert f.values.min() >= 0.0


def test_entropy_dissipation_along_flow(wide_run):
    H = [relative_functionals(f, wide_run["nu"], wide_run["hessV"]).H_rel
         for f in wide_run["traj"].fields[1:]]
    diffs = np.diff(H)
    assert np.all(diffs <= 1e-10)


def test_trajectory_times_start_at_zero():
    mu0 = gaussian_field(GRID, 0.0, 1.0)
    traj = evolve(mu0, OU, 0.2, dt=1e-3, save_times=[0.1, 0.2])
    assert traj.times[0] == 0.0
    np.testing.assert_allclose(traj.times, [0.0, 0.1, 0.2])
    np.testing.assert_allclose(traj.at(0.0).values, mu0.values)


def test_evolve_preconditions():
    mu0 = gaussian_field(GRID, 0.0, 1.0)
    with pytest.raises(PreconditionError):
        evolve(mu0, OU, 1.0, dt=-1e-3)
    with pytest.raises(PreconditionError):
        evolve(mu0, OU, 1.0, dt=1e-3, save_times=[2.0])
    unnormalized = gaussian_field(GRID, 0.0, 1.0)
    unnormalized.values = unnormalized.values * 2
    with pytest.raises(PreconditionError):
        evolve(unnormalized, OU, 1.0, dt=1e-3)


def test_gamma_heat_reduction():
    # constant potential: the gamma equation is the heat equation with
    # Dirichlet walls; an interior bump spreads like the no-flux solution
    # until mass reaches the walls
    g = Grid(((-4.0, 4.0),), (257,))
    bump = mollified_delta(g, 0.0, 0.5)
    sp = SchrodingerPotential(Constant(0.0), 0.0)
    times, snaps = evolve_gamma(bump.values, sp, g, 0.05, dt=1e-4)
    ref = evolve(bump, Constant(0.0), 0.05, dt=1e-4).fields[-1].values
    interior = np.abs(g.axis(0)) <= 2.0
    assert np.max(np.abs(snaps[-1] - ref)[interior]) <= 1e-5


def test_gamma_ground_state_stationary():
    V = OU.value_on(GRID)
    sp = SchrodingerPotential(OU, choose_beta(OU, GRID))
    times, snaps = evolve_gamma(np.exp(-0.5 * V), sp, GRID, 1.0,
                                dt=GRID.h[0] ** 2, save_times=[1.0])
    interior = np.abs(GRID.axis(0)) <= 6.0
    assert np.max(np.abs(snaps[-1] - np.exp(-0.5 * V))[interior]) <= 1e-4


def test_gamma_cross_solver_agreement():
    mu0 = gaussian_field(GRID, 0.0, 4.0)
    V = OU.value_on(GRID)
    sp = SchrodingerPotential(OU, choose_beta(OU, GRID))
    _, snaps = evolve_gamma(np.exp(0.5 * V) * mu0.values, sp, GRID, 0.5,
                            dt=2.5e-4, save_times=[0.5])
    mu_gamma = np.exp(-0.5 * V) * snaps[-1]
    mu_direct = evolve(mu0, OU, 0.5, dt=2.5e-4, save_times=[0.5]).fields[-1].values
    interior = np.abs(GRID.axis(0)) <= 6.0
    assert np.max(np.abs(mu_gamma - mu_direct)[interior]) <= 1e-4


def test_gamma_rejects_unbounded_initial():
    bad = np.ones(GRID.n[0])
    bad[3] = np.inf
    sp = SchrodingerPotential(OU, 0.5)
    with pytest.raises(PreconditionError):
        evolve_gamma(bad, sp, GRID, 0.1, dt=1e-3)


def test_kernel_columns_follow_ou_law(bench):
    k = bench.kernels[0.5]
    x = bench.grid.axis(0)
    w = bench.grid.weights()
    h = bench.grid.h[0]
    masses = k.column_masses()
    np.testing.assert_allclose(masses, 1.0, atol=1e-6)
    assert k.matrix.min() >= 0.0
    for x0 in (-3.0, -1.0, 0.0, 2.0):
        j = np.argmin(np.abs(x - x0))
        col = k.matrix[:, j]
        mean = w @ (col * x)
        assert abs(mean - x[j] * np.exp(-0.5)) <= 2 * h
        var = w @ (col * (x - mean) ** 2)
        assert var == pytest.approx(1 - np.exp(-1), abs=3 * (2 * h) ** 2)


def test_kernel_short_time_recovers_bump():
    g = Grid(((-8.0, 8.0),), (257,))
    h = g.h[0]
    k = build_transition_kernel(OU, g, t=1e-5, dt=1e-5, bandwidth=2 * h)
    j = g.n[0] // 2
    bump = mollified_delta(g, g.axis(0)[j], 2 * h)
    assert np.max(np.abs(k.matrix[:, j] - bump.values)) <= 1e-2 * bump.values.max()


def test_kernel_rejects_bad_times():
    with pytest.raises(PreconditionError):
        build_transition_kernels(OU, GRID, [0.0], dt=1e-3)


def test_evolve_2d_steady_and_conservation():
    g2 = Grid(((-5.0, 5.0), (-5.0, 5.0)), (65, 65))
    p2 = Quadratic(1.0, dim=2)
    nu2 = steady_state(p2, g2)
    traj = evolve(nu2, p2, 0.2, dt=2e-3, save_times=[0.2])
    assert np.max(np.abs(traj.fields[-1].values - nu2.values)) <= 1e-6

    mu0 = gaussian_field(g2, (0.5, -0.3), (0.5, 0.8))
    traj = evolve(mu0, p2, 0.5, dt=2e-3, save_times=[0.25, 0.5])
    for f in traj.fields:
        assert abs(f.mass - 1.0) <= 1e-8
        assert f.values.min() >= 0.0
    # variance relaxes toward 1 on each axis
    assert traj.fields[-1].variance() == pytest.approx(
        (0.5 - 1) * np.exp(-1) + 1 + (0.8 - 1) * np.exp(-1) + 1, abs=5e-3)


def test_gamma_2d_ground_state_stationary():
    g2 = Grid(((-5.0, 5.0), (-5.0, 5.0)), (65, 65))
    p2 = Quadratic(1.0, dim=2)
    V = p2.value_on(g2)
    sp = SchrodingerPotential(p2, choose_beta(p2, g2))
    _, snaps = evolve_gamma(np.exp(-0.5 * V), sp, g2, 0.5, dt=5e-4,
                            save_times=[0.5])
    pts = g2.points()
    interior = np.maximum(np.abs(pts[..., 0]), np.abs(pts[..., 1])) <= 3.5
    # drift floor: O(h^2) discrete ground-state shift plus O(dt) relaxation
    assert np.max(np.abs(snaps[-1] - np.exp(-0.5 * V))[interior]) <= 2e-3
