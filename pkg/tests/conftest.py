"""Shared fixtures: the OU benchmark (quadratic well, unit Gaussian start,
[-8, 8] x 1025) at full resolution for acceptance, and a coarser variant for
unit tests."""

import numpy as np
import pytest

from fpinfo.config import ExperimentConfig
from fpinfo.field import Grid, gaussian_field, joint_from_conditional
from fpinfo.potential import Quadratic, steady_state
from fpinfo.solver_fd import build_transition_kernels, evolve


BENCH_SAVE = np.arange(1, 17) * 0.0625  # contains {0.25, 0.5, 0.75, 1.0}
BENCH_DT = 2.5e-4


def make_config(grid: Grid, potential, var=1.0, mean=0.0, t_end=1.0,
                save_times=None, dt=None, **overrides) -> ExperimentConfig:
    save_times = BENCH_SAVE if save_times is None else np.asarray(save_times, float)
    if dt is None:
        dt = min(grid.h) ** 2
    kwargs = dict(
        potential=potential,
        grid=grid,
        initial_spec={"kind": "gaussian", "mean": [mean] * grid.dim,
                      "var": [var] * grid.dim},
        t_end=t_end,
        dt=dt,
        save_times=save_times,
    )
    kwargs.update(overrides)
    return ExperimentConfig(**kwargs)


class OuBenchmark:
    """Everything the acceptance suite reads off the benchmark problem."""

    def __init__(self, n=1025, dt=BENCH_DT, save_times=BENCH_SAVE):
        self.grid = Grid(((-8.0, 8.0),), (n,))
        self.p = Quadratic(1.0)
        self.nu = steady_state(self.p, self.grid)
        self.V = self.p.value_on(self.grid)
        self.hessV = self.p.hess_on(self.grid)
        self.mu0 = gaussian_field(self.grid, 0.0, 1.0)
        self.save_times = np.asarray(save_times, dtype=float)
        self.dt = dt
        self.kernels = build_transition_kernels(self.p, self.grid,
                                                self.save_times, dt)
        self.traj = evolve(self.mu0, self.p, float(self.save_times[-1]), dt,
                           self.save_times)

    def joint(self, t: float):
        return joint_from_conditional(self.mu0,
                                      self.kernels[float(t)].matrix.T, self.grid)

    def gamma(self, joint):
        return np.exp(0.5 * self.V) * joint.marginalT().values

    # closed-form oracles for the unit-variance OU benchmark
    @staticmethod
    def oracle_I(t):
        return -0.5 * np.log1p(-np.exp(-2 * t))

    @staticmethod
    def oracle_Phi(t):
        return 1.0 / (np.exp(2 * t) - 1.0)

    @staticmethod
    def oracle_d2I(t):
        return 2 * np.exp(2 * t) / (np.exp(2 * t) - 1.0) ** 2


@pytest.fixture(scope="session")
def bench():
    return OuBenchmark()


@pytest.fixture(scope="session")
def bench_coarse():
    return OuBenchmark(n=257)


@pytest.fixture(scope="session")
def wide_run():
    """N(0, 4) start on the benchmark grid, run to t = 2 (dissipation and
    decay-rate checks; the initial state does not qualify for the convexity
    precondition)."""
    grid = Grid(((-8.0, 8.0),), (1025,))
    p = Quadratic(1.0)
    mu0 = gaussian_field(grid, 0.0, 4.0)
    save = np.arange(1, 33) * 0.0625
    traj = evolve(mu0, p, 2.0, BENCH_DT, save)
    return {"grid": grid, "p": p, "mu0": mu0, "traj": traj, "save": save,
            "nu": steady_state(p, grid), "hessV": p.hess_on(grid)}
