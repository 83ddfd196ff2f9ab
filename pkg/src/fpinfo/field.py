"""Grids, density fields, stencils and quadrature.

Everything downstream (solvers, functionals) works on node-centered values
over a uniform rectangular grid in dimension 1 or 2.  Quadrature is the
trapezoid rule, which matches the finite-volume solver's node-centered cell
layout exactly: interior nodes own a full cell of width h, boundary nodes a
half cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.ndimage import binary_dilation

from .errors import DomainError, FpinfoError, PreconditionError

MIN_NODES_PER_AXIS = 33


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid, dim 1 or 2.

    bounds: ((lo, hi),) per axis;  n: node count per axis.
    """

    bounds: tuple
    n: tuple

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in np.atleast_2d(self.bounds))
        n = tuple(int(k) for k in np.atleast_1d(self.n))
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "n", n)
        if len(bounds) != len(n):
            raise FpinfoError("bounds and n must have one entry per axis")
        if len(n) not in (1, 2):
            raise FpinfoError(f"only dim 1 and 2 are supported, got {len(n)}")
        for (lo, hi), k in zip(bounds, n):
            if not hi > lo:
                raise FpinfoError(f"empty axis [{lo}, {hi}]")
            if k < MIN_NODES_PER_AXIS:
                raise FpinfoError(f"need at least {MIN_NODES_PER_AXIS} nodes per axis, got {k}")

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple:
        return self.n

    @property
    def h(self) -> tuple:
        return tuple((hi - lo) / (k - 1) for (lo, hi), k in zip(self.bounds, self.n))

    def axis(self, i: int = 0) -> np.ndarray:
        lo, hi = self.bounds[i]
        return np.linspace(lo, hi, self.n[i])

    def axes(self) -> list:
        return [self.axis(i) for i in range(self.dim)]

    def points(self) -> np.ndarray:
        """All nodes as an array of shape (*shape, dim)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights, shaped like a field on this grid."""
        w = None
        for i in range(self.dim):
            wi = np.full(self.n[i], self.h[i])
            wi[0] *= 0.5
            wi[-1] *= 0.5
            w = wi if w is None else np.multiply.outer(w, wi)
        return w

    def contains(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.dim and self.dim == 1:
            x = x[..., None]
        return all(
            np.all((x[..., i] >= lo) & (x[..., i] <= hi))
            for i, (lo, hi) in enumerate(self.bounds)
        )

    def require_inside(self, x):
        if not self.contains(x):
            raise DomainError(f"point {x} outside grid box {self.bounds}")

    def refine(self, factor: int = 2) -> "Grid":
        """Grid with (n-1)*factor+1 nodes per axis on the same box."""
        return Grid(self.bounds, tuple((k - 1) * factor + 1 for k in self.n))


def quadrature(values: np.ndarray, grid: Grid) -> float:
    """Trapezoid rule over the grid; exact for affine integrands."""
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise FpinfoError(f"field shape {values.shape} != grid shape {grid.shape}")
    return float(np.sum(grid.weights() * values))


@dataclass
class DensityField:
    """Nonnegative node values on a grid, with cached mass.

    log_values, when set, is an analytically known log-density (used for the
    steady state, where exp(-V) may underflow but -V - log Z never does).
    """

    grid: Grid
    values: np.ndarray
    log_values: np.ndarray = None
    meta: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise FpinfoError("values shape does not match grid")
        lo = self.values.min()
        if lo < 0:
            scale = self.values.max()
            if lo < -1e-12 * max(scale, 1.0):
                raise FpinfoError(f"density has negative values (min {lo:g})")
            self.values = np.maximum(self.values, 0.0)

    @property
    def mass(self) -> float:
        return quadrature(self.values, self.grid)

    def normalize(self) -> "DensityField":
        """Rescale to unit mass.  Idempotent: a field already normalized to
        round-off is returned unchanged (bitwise)."""
        m = self.mass
        if m <= 0:
            raise FpinfoError("cannot normalize a field with zero mass")
        if abs(m - 1.0) <= 1e-12:
            return self
        log_values = None if self.log_values is None else self.log_values - np.log(m)
        return DensityField(self.grid, self.values / m, log_values, dict(self.meta))

    def variance(self) -> float:
        """Total variance (sum over axes) under the field as a probability."""
        w = self.grid.weights() * self.values
        m = w.sum()
        pts = self.grid.points()
        var = 0.0
        for i in range(self.grid.dim):
            xi = pts[..., i]
            mean = np.sum(w * xi) / m
            var += np.sum(w * (xi - mean) ** 2) / m
        return float(var)


@dataclass
class LogField:
    """Floored log of a density plus the clip mask.

    clipped marks nodes at the floor; valid marks nodes whose derivative
    stencils see no clipped neighbor (clip mask dilated by the stencil
    radius), which is what Hessian-type integrals should use.
    """

    values: np.ndarray
    clipped: np.ndarray
    _valid: np.ndarray = None

    @property
    def valid(self) -> np.ndarray:
        if self._valid is None:
            if self.clipped.any():
                self._valid = ~binary_dilation(self.clipped, iterations=1)
            else:
                self._valid = ~self.clipped
        return self._valid


def log_field(d, floor_ratio: float = 1e-12) -> LogField:
    """log(max(values, floor_ratio * peak)) with clip bookkeeping.

    Accepts a DensityField or a raw array.  A field carrying analytic
    log_values is used as-is (nothing to clip).
    """
    if not (0.0 < floor_ratio <= 1e-6):
        raise PreconditionError(f"floor_ratio must be in (0, 1e-6], got {floor_ratio}")
    if isinstance(d, DensityField) and d.log_values is not None:
        return LogField(np.array(d.log_values, dtype=float), np.zeros(d.grid.shape, bool))
    values = d.values if isinstance(d, DensityField) else np.asarray(d, dtype=float)
    peak = values.max()
    if peak <= 0:
        raise FpinfoError("log of an all-zero field")
    floor = floor_ratio * peak
    clipped = values <= floor
    return LogField(np.log(np.maximum(values, floor)), clipped)


def diff1_axis(f: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    out = np.empty_like(f, dtype=float)
    out[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    out[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
    out[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    return np.moveaxis(out, 0, axis)


def diff2_axis(f: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    out = np.empty_like(f, dtype=float)
    out[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / (h * h)
    out[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / (h * h)
    out[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / (h * h)
    return np.moveaxis(out, 0, axis)


def diff1(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Gradient via second-order stencils (central interior, one-sided ends).

    Returns shape (*grid.shape, dim).
    """
    if min(grid.n) < 5:
        raise PreconditionError("diff stencils need at least 5 nodes per axis")
    comps = [diff1_axis(f, grid.h[i], axis=i) for i in range(grid.dim)]
    return np.stack(comps, axis=-1)


def diff2(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Hessian via second-order stencils; shape (*grid.shape, dim, dim).

    Mixed partials are nested first derivatives; pure second derivatives use
    the dedicated 3-point (interior) / 4-point (boundary) formulas, exact on
    quadratics.
    """
    if min(grid.n) < 5:
        raise PreconditionError("diff stencils need at least 5 nodes per axis")
    d = grid.dim
    H = np.empty((*grid.shape, d, d), dtype=float)
    for i in range(d):
        H[..., i, i] = diff2_axis(f, grid.h[i], axis=i)
        for j in range(i + 1, d):
            mixed = diff1_axis(diff1_axis(f, grid.h[i], axis=i), grid.h[j], axis=j)
            H[..., i, j] = mixed
            H[..., j, i] = mixed
    return H


def mollified_delta(grid: Grid, x0, bandwidth: float) -> DensityField:
    """Normalized Gaussian bump of the given standard deviation at x0."""
    grid.require_inside(x0)
    hmax = max(grid.h)
    if bandwidth < 2 * hmax - 1e-12:
        raise PreconditionError(
            f"bandwidth {bandwidth} under-resolves the grid (need >= 2h = {2 * hmax})"
        )
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    pts = grid.points()
    sq = np.zeros(grid.shape)
    for i in range(grid.dim):
        sq += (pts[..., i] - x0[i]) ** 2
    values = np.exp(-sq / (2 * bandwidth**2))
    return DensityField(grid, values).normalize()


def gaussian_field(grid: Grid, mean, var) -> DensityField:
    """Normalized isotropic-per-axis Gaussian on the grid.

    mean: scalar or per-axis; var: scalar or per-axis variance.
    """
    mean = np.broadcast_to(np.atleast_1d(np.asarray(mean, float)), (grid.dim,))
    var = np.broadcast_to(np.atleast_1d(np.asarray(var, float)), (grid.dim,))
    if np.any(var <= 0):
        raise FpinfoError("gaussian_field needs positive variances")
    pts = grid.points()
    expo = np.zeros(grid.shape)
    for i in range(grid.dim):
        expo -= (pts[..., i] - mean[i]) ** 2 / (2 * var[i])
    return DensityField(grid, np.exp(expo)).normalize()


def mixture_field(grid: Grid, components) -> DensityField:
    """Normalized mixture: components are (weight, mean, var) triples."""
    total = np.zeros(grid.shape)
    for weight, mean, var in components:
        if weight <= 0:
            raise FpinfoError("mixture weights must be positive")
        total += weight * gaussian_field(grid, mean, var).values
    return DensityField(grid, total).normalize()


@dataclass
class JointDensity:
    """Joint density of (X_0, X_t) on the product of two 1D grids.

    values[i0, it] = density at (x0 node i0, xt node it).  Axis 0 is the
    initial variable, axis 1 the evolved one.
    """

    grid0: Grid
    gridT: Grid
    values: np.ndarray
    meta: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        if self.grid0.dim != 1 or self.gridT.dim != 1:
            raise FpinfoError("joint densities are supported in dimension 1 only")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid0.n[0], self.gridT.n[0]):
            raise FpinfoError("joint values shape must be (n0, nT)")

    @property
    def w0(self) -> np.ndarray:
        return self.grid0.weights()

    @property
    def wT(self) -> np.ndarray:
        return self.gridT.weights()

    @property
    def mass(self) -> float:
        return float(self.w0 @ self.values @ self.wT)

    def marginal0(self) -> DensityField:
        return DensityField(self.grid0, self.values @ self.wT)

    def marginalT(self) -> DensityField:
        return DensityField(self.gridT, self.w0 @ self.values)


def joint_from_conditional(mu0: DensityField, cond: np.ndarray, gridT: Grid,
                           check: bool = True) -> JointDensity:
    """Assemble mu_{0,t}(x0, xt) = mu_0(x0) * cond[x0 row](xt).

    cond has shape (n0, nT): row i0 is the conditional density of X_t given
    X_0 at node i0.
    """
    values = mu0.values[:, None] * cond
    joint = JointDensity(mu0.grid, gridT, values)
    if check:
        m0 = joint.marginal0().values
        err = np.max(np.abs(m0 - mu0.values))
        if err > 1e-6:
            raise FpinfoError(f"joint marginal over x_t misses mu_0 by {err:g}")
        if abs(joint.mass - 1.0) > 1e-6:
            raise FpinfoError(f"joint mass {joint.mass} not within 1e-6 of 1")
    return joint
