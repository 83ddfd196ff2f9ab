"""Information functionals: entropy, Fisher information and its second-order
version, relative forms against a reference density, mutual versions on a
joint, and the structural identities relating them.

Conventions for joint quantities.  The joint lives on a product grid with
axis 0 the initial variable x0 and axis 1 the evolved variable xt.  All
derivatives of conditional log-densities are along xt; the reference density
in the backward ratio mu_{0|t} / nu is a function of the conditioning-free
variable and therefore drops under the xt-derivatives.  Identity checks
integrate every term over one shared validity mask (the joint's clip mask
dilated by the stencil radius): an identity test must compare integrals over
the same domain, otherwise it measures clipping policy instead of the
identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .errors import FpinfoError, FunctionalError, ResolutionError, SupportError
from .field import (DensityField, Grid, JointDensity, LogField, diff1,
                    diff1_axis, diff2, diff2_axis, log_field, quadrature)

DEFAULT_FLOOR = 1e-12
MIN_NODES_PER_SIGMA = 8.0


@dataclass
class InfoValues:
    """Entropy and Fisher-type functionals of one density (plain and
    relative to a reference)."""

    H: float
    J: float
    K: float
    H_rel: float
    J_rel: float
    K_rel: float
    G_rel: float


@dataclass
class MutualValues:
    """Mutual information and its analytic time derivatives on one joint."""

    I: float
    Phi: float
    Psi: float
    d1_analytic: float
    d2_analytic: float
    Phi_from_conditionals: float = None
    excluded_mass: float = 0.0


def entropy(d: DensityField) -> float:
    """Differential entropy -int mu log mu, with 0 log 0 = 0."""
    return -quadrature(xlogy(d.values, d.values), d.grid)


def _check_resolution(d: DensityField):
    w = d.grid.weights() * d.values
    m = w.sum()
    pts = d.grid.points()
    for i in range(d.grid.dim):
        xi = pts[..., i]
        mean = np.sum(w * xi) / m
        sigma = np.sqrt(np.sum(w * (xi - mean) ** 2) / m)
        if sigma / d.grid.h[i] < MIN_NODES_PER_SIGMA:
            raise ResolutionError(
                f"axis {i}: {sigma / d.grid.h[i]:.1f} nodes per standard deviation "
                f"(need >= {MIN_NODES_PER_SIGMA:g})")


def _check_clipped(lf: LogField, what: str):
    frac = lf.clipped.mean()
    if frac > 0.5:
        raise ResolutionError(f"{what}: {100 * frac:.0f}% of nodes at the log floor")


def _masked_quadrature(values: np.ndarray, grid: Grid, mask: np.ndarray) -> float:
    return float(np.sum(np.where(mask, values, 0.0) * grid.weights()))


def _grad_sq(logvals: np.ndarray, grid: Grid) -> np.ndarray:
    g = diff1(logvals, grid)
    return np.sum(g * g, axis=-1)


def _hess_sq(logvals: np.ndarray, grid: Grid) -> np.ndarray:
    Hm = diff2(logvals, grid)
    return np.sum(Hm * Hm, axis=(-2, -1))


def fisher(d: DensityField, floor_ratio: float = DEFAULT_FLOOR) -> float:
    """J = int mu |grad log mu|^2 over non-clipped nodes."""
    _check_resolution(d)
    lf = log_field(d, floor_ratio)
    _check_clipped(lf, "fisher")
    return _masked_quadrature(d.values * _grad_sq(lf.values, d.grid), d.grid, lf.valid)


def second_order_fisher(d: DensityField, floor_ratio: float = DEFAULT_FLOOR) -> float:
    """K = int mu |hess log mu|_HS^2 over non-clipped nodes."""
    _check_resolution(d)
    lf = log_field(d, floor_ratio)
    _check_clipped(lf, "second_order_fisher")
    return _masked_quadrature(d.values * _hess_sq(lf.values, d.grid), d.grid, lf.valid)


def _log_reference(nu: DensityField, floor_ratio: float):
    if nu.log_values is not None:
        return nu.log_values, np.zeros(nu.grid.shape, dtype=bool)
    lf = log_field(nu, floor_ratio)
    return lf.values, lf.clipped


def relative_functionals(d: DensityField, nu: DensityField, hessV: np.ndarray,
                         floor_ratio: float = DEFAULT_FLOOR) -> InfoValues:
    """All functionals of d, absolute and relative to nu.

    hessV is the Hessian field of the potential (shape (*grid, dim, dim)),
    which enters only the curvature-weighted Dirichlet form G_rel.
    """
    if d.grid != nu.grid:
        raise FpinfoError("density and reference live on different grids")
    grid = d.grid
    _check_resolution(d)
    lf = log_field(d, floor_ratio)
    lognu, nu_clipped = _log_reference(nu, floor_ratio)
    if np.any((nu.values <= 0) & ~lf.clipped) and nu.log_values is None:
        raise SupportError("reference density vanishes where the argument has mass")

    ratio = lf.values - lognu
    mask = lf.valid & ~nu_clipped

    Hr = _masked_quadrature(d.values * ratio, grid, ~lf.clipped)
    grads = diff1(ratio, grid)
    Jr = _masked_quadrature(d.values * np.sum(grads * grads, axis=-1), grid, mask)
    Kr = _masked_quadrature(d.values * _hess_sq(ratio, grid), grid, mask)
    hessV = np.asarray(hessV, dtype=float)
    hv_grad = np.einsum("...ij,...j->...i", hessV, grads)
    Gr = _masked_quadrature(d.values * np.sum(hv_grad * grads, axis=-1), grid, mask)

    H = entropy(d)
    J = _masked_quadrature(d.values * _grad_sq(lf.values, grid), grid, lf.valid)
    K = _masked_quadrature(d.values * _hess_sq(lf.values, grid), grid, lf.valid)
    return InfoValues(H=H, J=J, K=K, H_rel=Hr, J_rel=Jr, K_rel=Kr, G_rel=Gr)


def mutual_version(F_cond: np.ndarray, weights: DensityField, F_marg: float) -> float:
    """F(X;Y) = int mu_0(x0) F(. | x0) dx0 - F(Y)."""
    if abs(weights.mass - 1.0) > 1e-6:
        raise FpinfoError("mutual_version weights must be normalized")
    return quadrature(weights.values * np.asarray(F_cond, dtype=float),
                      weights.grid) - F_marg


@dataclass
class _JointWork:
    """Shared discrete fields derived from one joint (all on (n0, nT))."""

    joint: JointDensity
    W: np.ndarray            # quadrature weight times joint value
    muT: np.ndarray          # discrete marginal over x0
    valid: np.ndarray        # shared validity mask
    a1: np.ndarray           # d/dxt log mu_{0|t}
    a2: np.ndarray           # d^2/dxt^2 log mu_{0|t}
    b1: np.ndarray           # d/dxt log(mu_t / nu), shape (nT,)
    b2: np.ndarray           # d^2/dxt^2 log(mu_t / nu), shape (nT,)
    excluded_mass: float

    def sum(self, integrand: np.ndarray) -> float:
        return float(np.sum(np.where(self.valid, integrand, 0.0) * self.W))


def _prepare_joint(joint: JointDensity, nu: DensityField,
                   floor_ratio: float = DEFAULT_FLOOR) -> _JointWork:
    if nu.grid != joint.gridT:
        raise FpinfoError("reference density must live on the joint's x_t grid")
    hT = joint.gridT.h[0]
    muT = joint.marginalT().values
    if np.any((nu.values <= 0) & (muT > 0)) and nu.log_values is None:
        raise SupportError("mu_t carries mass where the reference vanishes")

    lJ = log_field(joint.values, floor_ratio)
    lT = log_field(muT, floor_ratio)
    lognu, nu_clipped = _log_reference(nu, floor_ratio)

    log_cond = lJ.values - lT.values[None, :]
    a1 = diff1_axis(log_cond, hT, axis=1)
    a2 = diff2_axis(log_cond, hT, axis=1)
    lratio = lT.values - lognu
    b1 = diff1_axis(lratio, hT)
    b2 = diff2_axis(lratio, hT)

    valid = lJ.valid & lT.valid[None, :] & ~nu_clipped[None, :]
    W = joint.w0[:, None] * joint.wT[None, :] * joint.values
    excluded = float(np.sum(np.where(valid, 0.0, W)))
    return _JointWork(joint, W, muT, valid, a1, a2, b1, b2, excluded)


def mutual_information(joint: JointDensity) -> float:
    """I(X0; Xt) = H(Xt) - H(Xt | X0) from the joint."""
    mu0 = joint.marginal0()
    muT = joint.marginalT()
    cond = np.where(mu0.values[:, None] > 0,
                    joint.values / np.where(mu0.values[:, None] > 0,
                                            mu0.values[:, None], 1.0), 0.0)
    ent_cond = -(xlogy(cond, cond) @ joint.wT)
    return mutual_version(-ent_cond, mu0, -entropy(muT))


def backward_fisher(joint: JointDensity, nu: DensityField,
                    floor_ratio: float = DEFAULT_FLOOR,
                    check_tol: float = 1e-3) -> float:
    """Phi(X0 | Xt) = int mu_{0,t} | d/dxt log mu_{0|t} |^2.

    Cross-checked against the mutual form J_nu(Xt|X0) - J_nu(Xt) computed on
    the same mask; a relative disagreement beyond check_tol raises.
    """
    work = _prepare_joint(joint, nu, floor_ratio)
    return _backward_fisher_from(work, check_tol)


def _backward_fisher_from(work: _JointWork, check_tol: float = 1e-3) -> float:
    phi = work.sum(work.a1 ** 2)
    j_cond = work.sum((work.a1 + work.b1[None, :]) ** 2)
    j_marg = work.sum(np.broadcast_to(work.b1[None, :] ** 2, work.W.shape))
    phi_routes = j_cond - j_marg
    scale = max(abs(phi), abs(j_cond), 1e-8)
    if abs(phi - phi_routes) > check_tol * scale:
        raise FunctionalError(
            f"backward Fisher information routes disagree: direct {phi:.6g}, "
            f"conditional-minus-marginal {phi_routes:.6g}")
    return phi


def psi(joint: JointDensity, nu: DensityField,
        floor_ratio: float = DEFAULT_FLOOR) -> float:
    """Backward second-order Fisher information
    int mu_{0,t} | d^2/dxt^2 log(mu_{0|t} / nu) |_HS^2  (1D).

    The reference depends on the initial variable only, so its xt-Hessian
    vanishes and the integrand reduces to the conditional's own log-Hessian;
    keeping the ratio notation matches the decomposition identity below.
    """
    work = _prepare_joint(joint, nu, floor_ratio)
    if work.excluded_mass > 0.5:
        raise ResolutionError("more than half the joint mass is below the log floor")
    return work.sum(work.a2 ** 2)


@dataclass
class KvDecomposition:
    """Terms of K_nu(X0; Xt) = Psi + cross and their mismatch."""

    residual: float
    k_mutual: float
    psi: float
    cross: float

    @property
    def relative(self) -> float:
        return self.residual / max(abs(self.k_mutual), 1e-300)


def kv_decomposition_residual(joint: JointDensity, nu: DensityField,
                              floor_ratio: float = DEFAULT_FLOOR) -> KvDecomposition:
    """| K_nu(X0;Xt) - Psi - 2 int mu_t < d2 log(mu_t/nu), E[d2 log mu_{0|t} | xt] > |.

    K_nu(X0;Xt) is assembled as K_nu(Xt|X0) - K_nu(Xt); every integral runs
    over the shared validity mask.
    """
    work = _prepare_joint(joint, nu, floor_ratio)
    k_cond = work.sum((work.a2 + work.b2[None, :]) ** 2)
    k_marg = work.sum(np.broadcast_to(work.b2[None, :] ** 2, work.W.shape))
    k_mutual = k_cond - k_marg
    psi_val = work.sum(work.a2 ** 2)
    cross = 2.0 * work.sum(work.a2 * work.b2[None, :])
    return KvDecomposition(residual=abs(k_mutual - psi_val - cross),
                           k_mutual=k_mutual, psi=psi_val, cross=cross)


@dataclass
class IbpResidual:
    """Both sides of the conditional integration-by-parts identity."""

    residual: float
    square_term: float
    hessian_term: float

    @property
    def relative(self) -> float:
        scale = max(abs(self.square_term), abs(self.hessian_term), 1e-300)
        return self.residual / scale


def integration_by_parts_residual(joint: JointDensity, rho_t: np.ndarray,
                                  floor_ratio: float = DEFAULT_FLOOR) -> IbpResidual:
    """| int mu_t mu_{0|t} rho (d log mu_{0|t})^2 + int mu_t mu_{0|t} rho d2 log mu_{0|t} |.

    rho_t is a field on the x_t grid (independent of x0 by construction).
    The identity needs the conditional family to be normalized and resolved;
    the x0 walls must carry no conditional mass.
    """
    rho_t = np.asarray(rho_t, dtype=float)
    if rho_t.shape != (joint.gridT.n[0],):
        raise FpinfoError("rho_t must be a scalar field on the x_t grid")
    band = (joint.w0[:2] @ joint.values[:2]
            + joint.w0[-2:] @ joint.values[-2:]) @ joint.wT
    if float(band) > 1e-10:
        raise FpinfoError("conditional mass reaches the x0 boundary "
                          f"(outer-band mass {band:.2e})")
    work = _prepare_joint_no_reference(joint, floor_ratio)
    t_sq = work.sum(rho_t[None, :] * work.a1 ** 2)
    t_hess = work.sum(rho_t[None, :] * work.a2)
    return IbpResidual(residual=abs(t_sq + t_hess), square_term=t_sq,
                       hessian_term=t_hess)


def _prepare_joint_no_reference(joint: JointDensity,
                                floor_ratio: float = DEFAULT_FLOOR) -> _JointWork:
    """Joint work fields when no reference density is involved."""
    hT = joint.gridT.h[0]
    muT = joint.marginalT().values
    lJ = log_field(joint.values, floor_ratio)
    lT = log_field(muT, floor_ratio)

    log_cond = lJ.values - lT.values[None, :]
    a1 = diff1_axis(log_cond, hT, axis=1)
    a2 = diff2_axis(log_cond, hT, axis=1)
    valid = lJ.valid & lT.valid[None, :]
    W = joint.w0[:, None] * joint.wT[None, :] * joint.values
    excluded = float(np.sum(np.where(valid, 0.0, W)))
    zero = np.zeros(joint.gridT.n[0])
    return _JointWork(joint, W, muT, valid, a1, a2, zero, zero, excluded)


def mutual_second_derivative(joint: JointDensity, gamma_t: np.ndarray,
                             nu: DensityField,
                             floor_ratio: float = DEFAULT_FLOOR) -> float:
    """Analytic second time derivative of the mutual information:
    2 Psi + 4 int mu_{0,t} (d2 log gamma_t)(d2 log mu_{0|t}).

    gamma_t = exp(V/2) mu_t given as values on the x_t grid.
    """
    work = _prepare_joint(joint, nu, floor_ratio)
    gamma_t = np.asarray(gamma_t, dtype=float)
    if gamma_t.shape != (joint.gridT.n[0],):
        raise FpinfoError("gamma_t must be a field on the x_t grid")
    lg = log_field(gamma_t, floor_ratio)
    d2g = diff2_axis(lg.values, joint.gridT.h[0])
    valid = work.valid & lg.valid[None, :]
    psi_val = work.sum(work.a2 ** 2)
    coupling = float(np.sum(np.where(valid, work.a2 * d2g[None, :], 0.0) * work.W))
    return 2.0 * psi_val + 4.0 * coupling


def mutual_values(joint: JointDensity, nu: DensityField, gamma_t: np.ndarray,
                  floor_ratio: float = DEFAULT_FLOOR,
                  check_tol: float = 1e-3) -> MutualValues:
    """One-pass evaluation of I, Phi, Psi and the analytic derivatives."""
    work = _prepare_joint(joint, nu, floor_ratio)
    if work.excluded_mass > 0.5:
        raise ResolutionError("more than half the joint mass is below the log floor")
    I = mutual_information(joint)
    phi = _backward_fisher_from(work, check_tol)
    j_cond = work.sum((work.a1 + work.b1[None, :]) ** 2)
    j_marg = work.sum(np.broadcast_to(work.b1[None, :] ** 2, work.W.shape))
    psi_val = work.sum(work.a2 ** 2)

    gamma_t = np.asarray(gamma_t, dtype=float)
    lg = log_field(gamma_t, floor_ratio)
    d2g = diff2_axis(lg.values, joint.gridT.h[0])
    valid = work.valid & lg.valid[None, :]
    coupling = float(np.sum(np.where(valid, work.a2 * d2g[None, :], 0.0) * work.W))
    d2 = 2.0 * psi_val + 4.0 * coupling
    return MutualValues(I=I, Phi=phi, Psi=psi_val, d1_analytic=-phi,
                        d2_analytic=d2, Phi_from_conditionals=j_cond - j_marg,
                        excluded_mass=work.excluded_mass)
