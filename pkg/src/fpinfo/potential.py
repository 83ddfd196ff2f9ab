"""Potentials V, their derivatives, the transformed potential c, and the
steady state exp(-V)/Z.

Conventions.  The drift of the flow is -grad V and the diffusion is fixed at
sqrt(2), so the steady density is proportional to exp(-V).  Every family is
offset so that min V = 0; additive constants cancel everywhere except in the
normalizer Z, which is kept explicit.  Evaluators are pure and do not enforce
box bounds -- stochastic paths must be free to wander outside the grid; bound
checks belong to the operations that take a grid.

Positions are arrays of shape (..., dim); in dimension 1 a bare array of
positions is accepted as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import FpinfoError, UnderflowError
from .field import DensityField, Grid, quadrature


class Potential:
    """Base class: value / grad / hess with analytic derivatives."""

    dim: int = 1
    family: str = "base"

    def _points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        if x.shape[-1] != self.dim:
            raise FpinfoError(f"expected points with {self.dim} coordinates")
        return x

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def laplacian(self, x):
        h = self.hess(x)
        return np.trace(h, axis1=-2, axis2=-1)

    # grid-shaped convenience forms
    def value_on(self, grid: Grid) -> np.ndarray:
        return self.value(grid.points())

    def grad_on(self, grid: Grid) -> np.ndarray:
        return self.grad(grid.points())

    def hess_on(self, grid: Grid) -> np.ndarray:
        return self.hess(grid.points())

    def laplacian_on(self, grid: Grid) -> np.ndarray:
        return self.laplacian(grid.points())


class Quadratic(Potential):
    """V(x) = alpha * |x|^2 / 2, the Ornstein-Uhlenbeck well."""

    family = "quadratic"

    def __init__(self, alpha: float = 1.0, dim: int = 1):
        if alpha <= 0:
            raise FpinfoError("quadratic potential needs alpha > 0")
        self.alpha = float(alpha)
        self.dim = int(dim)

    def value(self, x):
        p = self._points(x)
        return 0.5 * self.alpha * np.sum(p * p, axis=-1)

    def grad(self, x):
        return self.alpha * self._points(x)

    def hess(self, x):
        p = self._points(x)
        eye = self.alpha * np.eye(self.dim)
        return np.broadcast_to(eye, p.shape[:-1] + (self.dim, self.dim)).copy()


class EvenQuartic(Potential):
    """V(x) = sum_i a x_i^4 + b x_i^2 with a, b >= 0 (not both zero)."""

    family = "even-quartic"

    def __init__(self, a: float, b: float = 0.0, dim: int = 1):
        if a < 0 or b < 0 or (a == 0 and b == 0):
            raise FpinfoError("even-quartic needs a, b >= 0 and a + b > 0")
        self.a = float(a)
        self.b = float(b)
        self.dim = int(dim)

    def value(self, x):
        p = self._points(x)
        return np.sum(self.a * p**4 + self.b * p**2, axis=-1)

    def grad(self, x):
        p = self._points(x)
        return 4 * self.a * p**3 + 2 * self.b * p

    def hess(self, x):
        p = self._points(x)
        diag = 12 * self.a * p**2 + 2 * self.b
        out = np.zeros(p.shape[:-1] + (self.dim, self.dim))
        for i in range(self.dim):
            out[..., i, i] = diag[..., i]
        return out


class Constant(Potential):
    """V identically zero (the heat-flow case); v0 is absorbed by the offset."""

    family = "constant"

    def __init__(self, v0: float = 0.0, dim: int = 1):
        self.v0 = float(v0)
        self.dim = int(dim)

    def value(self, x):
        p = self._points(x)
        return np.zeros(p.shape[:-1])

    def grad(self, x):
        return np.zeros_like(self._points(x))

    def hess(self, x):
        p = self._points(x)
        return np.zeros(p.shape[:-1] + (self.dim, self.dim))


class Tabulated(Potential):
    """1D potential given at sample points, cubically interpolated.

    First and second derivatives are the analytic derivatives of the
    interpolant, so grad and Laplacian stay consistent with the values.
    """

    family = "tabulated"

    def __init__(self, x_nodes, v_nodes):
        x_nodes = np.asarray(x_nodes, dtype=float)
        v_nodes = np.asarray(v_nodes, dtype=float)
        if x_nodes.ndim != 1 or x_nodes.size < 4:
            raise FpinfoError("tabulated potential needs >= 4 sample points (1D only)")
        self.dim = 1
        offset = v_nodes.min()
        self._spline = CubicSpline(x_nodes, v_nodes - offset)
        self._d1 = self._spline.derivative(1)
        self._d2 = self._spline.derivative(2)
        self.offset = float(offset)

    def value(self, x):
        p = self._points(x)
        return np.maximum(self._spline(p[..., 0]), 0.0)

    def grad(self, x):
        p = self._points(x)
        return self._d1(p[..., 0])[..., None]

    def hess(self, x):
        p = self._points(x)
        return self._d2(p[..., 0])[..., None, None]


def eval_V(p: Potential, x):
    return p.value(x)


def eval_gradV(p: Potential, x):
    return p.grad(x)


def eval_hessV(p: Potential, x):
    return p.hess(x)


@dataclass(frozen=True)
class SchrodingerPotential:
    """c(x) = |grad V|^2 / 4 - lap V / 2, plus a nonnegativity shift beta."""

    base: Potential
    beta: float = 0.0


def c_raw(p: Potential, x) -> np.ndarray:
    g = p.grad(x)
    return 0.25 * np.sum(g * g, axis=-1) - 0.5 * p.laplacian(x)


def eval_c(sp: SchrodingerPotential, x) -> np.ndarray:
    """Shifted transformed potential c(x) + beta."""
    return c_raw(sp.base, x) + sp.beta


def choose_beta(p: Potential, grid: Grid, margin: float = 0.0) -> float:
    """Smallest shift (plus margin) making c + beta >= margin on the grid."""
    cmin = float(np.min(c_raw(p, grid.points())))
    return max(0.0, -cmin) + margin


def steady_state(p: Potential, grid: Grid) -> DensityField:
    """Normalized exp(-V) on the grid, with the normalizer recorded.

    The returned field carries analytic log values -V - log Z, so downstream
    log-derivatives of the steady state never hit the clipping floor even
    where exp(-V) underflows.
    """
    V = p.value_on(grid)
    raw = np.exp(-V)
    Z = quadrature(raw, grid)
    if not np.isfinite(Z) or Z < 1e-300:
        raise UnderflowError(f"steady-state normalizer underflowed (Z = {Z!r})")
    return DensityField(grid, raw / Z, log_values=-V - np.log(Z), meta={"Z": Z})
