"""Stochastic (Feynman-Kac) estimators and the closed-form oracles used to
cross-check the deterministic solver.

The transformed field gamma(x, t) solving d gamma/dt = lap gamma - c gamma
has the path representation

    gamma(x, t) = E_{x/sqrt(2)} [ gamma_0(sqrt(2) W_t) exp(-int_0^t c(sqrt(2) W_r) dr) ],

with W a standard Brownian motion.  The estimator simulates the shifted
weight exp(-int (c + beta)) and multiplies exp(+beta t) back, which changes
nothing mathematically (the shift integrates exactly) but keeps the sampled
exponent nonnegative for the potentials we run.  The time integral uses a
left-endpoint Riemann sum, an O(dt_path) bias.

Estimates are deterministic for a fixed seed: a counter-based Philox
generator drives all paths in one vectorized sweep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, PreconditionError
from .field import DensityField, Grid, quadrature
from .potential import Potential, SchrodingerPotential, eval_c

MIN_PATHS = 1000


@dataclass(frozen=True)
class FkEstimate:
    """Monte Carlo value with its standard error and provenance."""

    value: float
    stderr: float
    paths: int
    dt_path: float
    seed: int

    def __post_init__(self):
        if self.paths < MIN_PATHS:
            raise PreconditionError(f"need at least {MIN_PATHS} paths, got {self.paths}")

    def within(self, other: float, k: float = 3.0, floor: float = 0.0) -> bool:
        return abs(self.value - other) <= max(k * self.stderr, floor)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.uint64(seed)))


def fk_gamma(x, t: float, gamma0, sp: SchrodingerPotential, paths: int = 10000,
             dt_path: float = None, seed: int = 0) -> FkEstimate:
    """Feynman-Kac estimate of gamma(x, t).

    gamma0 is a callable on points shaped (..., dim).  dt_path defaults to
    t / 256.  The estimate at t = 0 is gamma0(x) exactly with zero error.
    """
    if t < 0:
        raise PreconditionError("time must be nonnegative")
    if paths < MIN_PATHS:
        raise PreconditionError(f"need at least {MIN_PATHS} paths, got {paths}")
    dim = sp.base.dim
    x = np.broadcast_to(np.atleast_1d(np.asarray(x, dtype=float)), (dim,))
    if dt_path is None:
        dt_path = t / 256 if t > 0 else 1.0
    if t == 0:
        value = float(np.asarray(gamma0(x)).reshape(-1)[0])
        return FkEstimate(value, 0.0, paths, dt_path, seed)

    nsteps = max(1, int(np.ceil(t / dt_path - 1e-9)))
    dt = t / nsteps
    rng = _rng(seed)
    W = np.tile(x / np.sqrt(2.0), (paths, 1))
    accum = np.zeros(paths)
    root_dt = np.sqrt(dt)
    for _ in range(nsteps):
        accum += eval_c(sp, np.sqrt(2.0) * W) * dt
        W += root_dt * rng.standard_normal((paths, dim))
    samples = np.asarray(gamma0(np.sqrt(2.0) * W)) * np.exp(-accum)
    samples = samples * np.exp(sp.beta * t)
    if not np.all(np.isfinite(samples)):
        raise NumericError("Feynman-Kac weights overflowed")
    value = float(samples.mean())
    stderr = float(samples.std(ddof=1) / np.sqrt(paths))
    return FkEstimate(value, stderr, paths, dt, seed)


def fk_density(x, t: float, mu0, p: Potential, paths: int = 10000,
               dt_path: float = None, seed: int = 0,
               beta: float = None, grid: Grid = None) -> FkEstimate:
    """Density estimate mu(x, t) = exp(-V(x)/2) * fk_gamma with
    gamma0 = exp(V/2) mu0.

    mu0 is a callable.  beta defaults to the smallest shift making c + beta
    nonnegative on the grid (required when c dips negative); pass beta
    explicitly when no grid is at hand.
    """
    if beta is None:
        if grid is None:
            raise PreconditionError("fk_density needs either beta or a grid to choose it")
        from .potential import choose_beta

        beta = choose_beta(p, grid)
    sp = SchrodingerPotential(p, beta)

    def gamma0(pts):
        return np.exp(0.5 * p.value(pts)) * np.asarray(mu0(pts))

    est = fk_gamma(x, t, gamma0, sp, paths=paths, dt_path=dt_path, seed=seed)
    scale = float(np.exp(-0.5 * p.value(np.atleast_1d(np.asarray(x, dtype=float)))))
    return FkEstimate(est.value * scale, est.stderr * scale, est.paths,
                      est.dt_path, est.seed)


def heat_kernel_density(x, t: float, mu0_grid: DensityField) -> float:
    """Quadrature of the Gaussian heat-kernel convolution
    (4 pi t)^{-n/2} exp(-|y - x|^2 / (4t)) against the grid density."""
    if t <= 0:
        raise PreconditionError("heat kernel needs t > 0")
    grid = mu0_grid.grid
    x = np.broadcast_to(np.atleast_1d(np.asarray(x, dtype=float)), (grid.dim,))
    pts = grid.points()
    sq = np.zeros(grid.shape)
    for i in range(grid.dim):
        sq += (pts[..., i] - x[i]) ** 2
    kernel = (4 * np.pi * t) ** (-grid.dim / 2) * np.exp(-sq / (4 * t))
    return quadrature(kernel * mu0_grid.values, grid)


def ou_transition(x, y, t: float, alpha: float = 1.0):
    """Transition density of dX = -alpha X dt + sqrt(2) dW:
    Normal(y e^{-alpha t}, (1 - e^{-2 alpha t}) / alpha) evaluated at x."""
    if t <= 0 or alpha <= 0:
        raise PreconditionError("ou_transition needs t > 0 and alpha > 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    var = (1.0 - np.exp(-2 * alpha * t)) / alpha
    mean = y * np.exp(-alpha * t)
    return np.exp(-((x - mean) ** 2) / (2 * var)) / np.sqrt(2 * np.pi * var)
