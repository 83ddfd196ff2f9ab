"""End-to-end experiment driver: evolve a density, fill the per-time
information report, and verify the derivative identities, log-concavity
preservation, and convexity verdicts.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import FpinfoError, PreconditionError
from .field import DensityField, diff2, joint_from_conditional, log_field
from .functionals import (DEFAULT_FLOOR, mutual_values, relative_functionals)
from .potential import Potential, steady_state
from .solver_fd import FlowTrajectory, build_transition_kernels, evolve

REPORT_COLUMNS = ("t", "H_rel", "J_rel", "K_rel", "G_rel", "I", "Phi", "Psi",
                  "dI_analytic", "d2I_analytic", "gamma_margin")


@dataclass
class InfoReport:
    """Per-save-time record of the information functionals and verdicts."""

    times: np.ndarray
    H_rel: np.ndarray
    J_rel: np.ndarray
    K_rel: np.ndarray
    G_rel: np.ndarray
    I: np.ndarray
    Phi: np.ndarray
    Psi: np.ndarray
    dI_analytic: np.ndarray
    d2I_analytic: np.ndarray
    gamma_margin: np.ndarray
    verdicts: dict = dataclass_field(default_factory=dict)
    meta: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise FpinfoError("report times must be strictly increasing")
        for name in REPORT_COLUMNS[1:]:
            col = np.asarray(getattr(self, name), dtype=float)
            if col.shape != self.times.shape:
                raise FpinfoError(f"column {name} has wrong length")
            setattr(self, name, col)

    def rows(self):
        for i in range(self.times.size):
            yield tuple([self.times[i]]
                        + [getattr(self, name)[i] for name in REPORT_COLUMNS[1:]])

    def column(self, name: str) -> np.ndarray:
        return getattr(self, name)


def min_eig_symmetric(H: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue field of a symmetric (dim x dim) matrix field."""
    if H.shape[-1] == 1:
        return H[..., 0, 0]
    a = H[..., 0, 0]
    c = H[..., 1, 1]
    b = H[..., 0, 1]
    half = 0.5 * (a + c)
    return half - np.sqrt((0.5 * (a - c)) ** 2 + b * b)


def check_relative_log_concavity(d: DensityField, p: Potential,
                                 floor_ratio: float = DEFAULT_FLOOR) -> float:
    """Margin of -hess log mu >= hess(V/2): min over resolved nodes of the
    smallest eigenvalue of (-hess log mu - hess V / 2).

    Nonnegative margin means the density qualifies for the perpetual
    convexity statement.
    """
    lf = log_field(d, floor_ratio)
    hess_log = diff2(lf.values, d.grid)
    gap = -hess_log - 0.5 * p.hess_on(d.grid)
    eigs = min_eig_symmetric(gap)
    valid = lf.valid
    if not valid.any():
        raise FpinfoError("no resolved nodes to evaluate the margin on")
    return float(np.min(np.where(valid, eigs, np.inf)))


def gamma_log_concavity_margin(mu_t: DensityField, p: Potential,
                               floor_ratio: float = DEFAULT_FLOOR) -> float:
    """min over resolved nodes of the smallest eigenvalue of
    -hess log gamma_t, where gamma_t = exp(V/2) mu_t."""
    lf = log_field(mu_t, floor_ratio)
    log_gamma = lf.values + 0.5 * p.value_on(mu_t.grid)
    eigs = min_eig_symmetric(-diff2(log_gamma, mu_t.grid))
    valid = lf.valid
    return float(np.min(np.where(valid, eigs, np.inf)))


def check_gamma_log_concavity(trajectory: FlowTrajectory, p: Potential,
                              floor_ratio: float = DEFAULT_FLOOR) -> np.ndarray:
    """Per-save-time gamma log-concavity margins."""
    return np.array([gamma_log_concavity_margin(f, p, floor_ratio)
                     for f in trajectory.fields])


def run_trajectory(config) -> InfoReport:
    """Evolve the configured density and fill every report column.

    The marginal columns (H_rel ... G_rel, gamma_margin) come from the
    evolved trajectory; the mutual columns (I, Phi, Psi and the analytic
    derivatives) come from the joint assembled as mu_0 times the transition
    kernel columns, whose own marginal keeps the identities internally
    consistent.  Mutual analysis requires dimension 1 and is skipped (NaN
    columns) otherwise.
    """
    p = config.potential
    grid = config.grid
    mu0 = config.initial_field().normalize()
    nu = steady_state(p, grid)
    hessV = p.hess_on(grid)
    V = p.value_on(grid)
    save_times = np.asarray(config.save_times, dtype=float)
    if save_times.size == 0 or np.any(save_times <= 0):
        raise PreconditionError("save times must be positive")

    traj = evolve(mu0, p, config.t_end, config.dt, save_times)
    mutual = config.mutual and grid.dim == 1
    kernels = (build_transition_kernels(p, grid, save_times, config.dt,
                                        config.bandwidth)
               if mutual else {})

    n = save_times.size
    cols = {name: np.full(n, np.nan) for name in REPORT_COLUMNS[1:]}
    for i, t in enumerate(save_times):
        f = traj.at(t)
        iv = relative_functionals(f, nu, hessV, config.floor_ratio)
        cols["H_rel"][i] = iv.H_rel
        cols["J_rel"][i] = iv.J_rel
        cols["K_rel"][i] = iv.K_rel
        cols["G_rel"][i] = iv.G_rel
        cols["gamma_margin"][i] = gamma_log_concavity_margin(f, p, config.floor_ratio)
        if mutual:
            k = kernels[float(t)]
            joint = joint_from_conditional(mu0, k.matrix.T, grid)
            gamma_t = np.exp(0.5 * V) * joint.marginalT().values
            mv = mutual_values(joint, nu, gamma_t, config.floor_ratio)
            cols["I"][i] = mv.I
            cols["Phi"][i] = mv.Phi
            cols["Psi"][i] = mv.Psi
            cols["dI_analytic"][i] = mv.d1_analytic
            cols["d2I_analytic"][i] = mv.d2_analytic

    report = InfoReport(save_times, **cols,
                        meta={"solver": traj.meta, "mutual": mutual,
                              "Z": nu.meta.get("Z")})
    _fill_verdicts(report, mu0, p, config)
    return report


def _fill_verdicts(report: InfoReport, mu0: DensityField, p: Potential, config):
    verdicts = report.verdicts
    margin0 = check_relative_log_concavity(mu0, p, config.floor_ratio)
    verdicts["precondition_margin"] = margin0
    verdicts["gamma_margin_min"] = float(np.min(report.gamma_margin))
    if report.meta.get("mutual"):
        ok, worst = convexity_verdict(report, from_time=float(config.from_time),
                                      tol=config.verdict_tol)
        verdicts["convexity"] = bool(ok)
        verdicts["worst_second_difference"] = worst
        dI = np.diff(report.I)
        verdicts["mutual_information_monotone"] = bool(
            np.all(dI <= 1e-8 * max(1.0, float(np.max(np.abs(report.I)))))
        )
    decay = check_exponential_convergence(report)
    verdicts["H_rel_saturated"] = decay.saturated
    if not decay.saturated:
        verdicts["decay_slope"] = decay.slope
        verdicts["decay_r2"] = decay.r2


@dataclass
class EntropyDerivativeResiduals:
    """Finite-difference vs analytic residuals of the entropy identities."""

    times: np.ndarray
    first_fd: np.ndarray        # central difference of H_rel
    first_analytic: np.ndarray  # -J_rel
    second_fd: np.ndarray
    second_analytic: np.ndarray  # 2 K_rel + 2 G_rel
    max_rel_first: float
    max_rel_second: float
    max_abs_first: float
    max_abs_second: float


def _mid_slice(n: int) -> slice:
    lo = max(1, n // 4)
    hi = max(lo + 1, n - n // 4)
    return slice(lo, hi)


def check_entropy_derivatives(report: InfoReport) -> EntropyDerivativeResiduals:
    """Compare d/dt H_rel with -J_rel and the second difference with
    2 K_rel + 2 G_rel on the interior save times; relative maxima are taken
    mid-trajectory (central half of the samples)."""
    t = report.times
    if t.size < 5:
        raise PreconditionError("need at least 5 save times")
    deltas = np.diff(t)
    delta = deltas[0]
    if not np.allclose(deltas, delta, rtol=1e-9, atol=1e-12):
        raise PreconditionError("entropy derivative check needs uniform save times")
    H, J, K, G = report.H_rel, report.J_rel, report.K_rel, report.G_rel
    first_fd = (H[2:] - H[:-2]) / (2 * delta)
    second_fd = (H[2:] - 2 * H[1:-1] + H[:-2]) / delta**2
    first_an = -J[1:-1]
    second_an = 2 * K[1:-1] + 2 * G[1:-1]
    mid = _mid_slice(first_fd.size)

    def rel(a, b):
        return np.abs(a - b) / np.maximum(np.abs(b), 1e-12)

    return EntropyDerivativeResiduals(
        times=t[1:-1], first_fd=first_fd, first_analytic=first_an,
        second_fd=second_fd, second_analytic=second_an,
        max_rel_first=float(np.max(rel(first_fd[mid], first_an[mid]))),
        max_rel_second=float(np.max(rel(second_fd[mid], second_an[mid]))),
        max_abs_first=float(np.max(np.abs(first_fd - first_an))),
        max_abs_second=float(np.max(np.abs(second_fd - second_an))),
    )


def convexity_verdict(report: InfoReport, from_time: float = 0.0,
                      tol: float = None):
    """True iff every discrete second difference of I(t) at save times >=
    from_time clears -tol, and the analytic second derivative agrees in
    sign.  Returns (verdict, worst second difference)."""
    sel = report.times >= from_time - 1e-12
    t = report.times[sel]
    I = report.I[sel]
    if t.size < 3:
        raise PreconditionError("need at least 3 samples at or after from_time")
    if np.any(np.isnan(I)):
        raise PreconditionError("convexity verdict needs the mutual columns")
    deltas = np.diff(t)
    if not np.allclose(deltas, deltas[0], rtol=1e-9, atol=1e-12):
        raise PreconditionError("convexity verdict needs uniform save times")
    if tol is None:
        tol = 1e-4 * float(np.max(np.abs(report.I)))
    second = (I[2:] - 2 * I[1:-1] + I[:-2]) / deltas[0] ** 2
    worst = float(np.min(second))
    analytic_ok = bool(np.min(report.d2I_analytic[sel]) >= -tol)
    return bool(worst >= -tol and analytic_ok), worst


@dataclass
class DecayFit:
    saturated: bool
    slope: float = np.nan
    r2: float = np.nan
    intercept: float = np.nan


def check_exponential_convergence(report: InfoReport,
                                  saturation: float = 1e-12) -> DecayFit:
    """Least-squares fit of log H_rel against t on the tail half of the
    samples.  Reports saturation instead of fitting when the relative
    entropy has already hit round-off."""
    H = report.H_rel
    t = report.times
    usable = H > saturation
    if usable.sum() < 5:
        return DecayFit(saturated=True)
    t_u, H_u = t[usable], H[usable]
    tail = slice(t_u.size // 2, None)
    x, y = t_u[tail], np.log(H_u[tail])
    if x.size < 3:
        return DecayFit(saturated=True)
    slope, intercept = np.polyfit(x, y, 1)
    fit = slope * x + intercept
    ss_res = float(np.sum((y - fit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(saturated=False, slope=float(slope), r2=r2,
                    intercept=float(intercept))


def first_qualifying_time(trajectory: FlowTrajectory, p: Potential,
                          floor_ratio: float = DEFAULT_FLOOR):
    """Earliest saved time whose density is V/2-relatively log-concave, or
    None.  Used to exercise the convexity-after-T corollary from initial
    states that do not qualify at t = 0."""
    for t, f in zip(trajectory.times, trajectory.fields):
        if check_relative_log_concavity(f, p, floor_ratio) >= 0:
            return float(t)
    return None
