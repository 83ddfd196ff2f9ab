"""Batch front end.

Subcommands: flow (trajectory CSVs + manifest), info (report.csv, verdict
summary, figures), verify (identity suite, one pass/fail line per check),
kernel (transition-kernel dump).  Exit codes: 0 success / all checks pass,
2 config error, 3 solver error, 4 analysis or functional error, 1 verify
suite failure.  FPINFO_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, report as report_io
from .config import ExperimentConfig, load_config
from .errors import ConfigError, FpinfoError, SolverError
from .field import Grid, joint_from_conditional
from .functionals import (integration_by_parts_residual,
                          kv_decomposition_residual)
from .potential import SchrodingerPotential, choose_beta, steady_state
from .solver_fd import build_transition_kernels, evolve
from .solver_fk import fk_density, fk_gamma, heat_kernel_density

log = logging.getLogger("fpinfo")


def _setup_logging():
    level = os.environ.get("FPINFO_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


@contextlib.contextmanager
def _thread_cap(threads: int):
    """Cap BLAS worker threads when threadpoolctl is available."""
    if threads and threads > 0:
        try:
            from threadpoolctl import threadpool_limits
        except ImportError:
            yield
            return
        with threadpool_limits(limits=threads):
            yield
        return
    yield


def _initial_callable(config: ExperimentConfig):
    spec = config.initial_spec
    if spec["kind"] == "gaussian":
        mean = np.asarray(spec["mean"], dtype=float)
        var = np.asarray(spec["var"], dtype=float)
        norm = float(np.prod(np.sqrt(2 * np.pi * var)))

        def pdf(pts):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            expo = -np.sum((pts - mean) ** 2 / (2 * var), axis=-1)
            return np.exp(expo) / norm

        return pdf
    if spec["kind"] == "mixture":
        comps = spec["components"]
        total = sum(w for w, _, _ in comps)

        def pdf(pts):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            out = np.zeros(pts.shape[:-1])
            for w, m, v in comps:
                out += (w / total) * np.exp(-(pts[..., 0] - m) ** 2 / (2 * v)) \
                    / np.sqrt(2 * np.pi * v)
            return out

        return pdf
    field = config.initial_field().normalize()
    from scipy.interpolate import CubicSpline

    spline = CubicSpline(field.grid.axis(0), field.values)
    lo, hi = field.grid.bounds[0]

    def pdf(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x = pts[..., 0]
        return np.where((x >= lo) & (x <= hi), np.maximum(spline(x), 0.0), 0.0)

    return pdf


def _default_probes(config: ExperimentConfig):
    if config.probes:
        return np.asarray(config.probes, dtype=float)
    lo, hi = config.grid.bounds[0]
    return np.linspace(lo / 2, hi / 2, 5)


def _fk_probe_rows(config: ExperimentConfig, t: float):
    mu0 = _initial_callable(config)
    beta = choose_beta(config.potential, config.grid, config.beta_margin)
    rows = []
    for i, x in enumerate(_default_probes(config)):
        est = fk_density(float(x), t, mu0, config.potential,
                         paths=config.fk_paths, dt_path=config.fk_dt_path,
                         seed=config.seed + i, beta=beta)
        rows.append((float(x), t, est))
    return rows


def cmd_flow(config: ExperimentConfig, out_dir: Path) -> int:
    mu0 = config.initial_field().normalize()
    traj = evolve(mu0, config.potential, config.t_end, config.dt,
                  config.save_times)
    report_io.write_trajectory(traj, out_dir)
    if config.solver in ("fk", "both"):
        t_probe = float(config.save_times[len(config.save_times) // 2])
        report_io.write_probes_csv(_fk_probe_rows(config, t_probe),
                                   out_dir / "probes.csv")
    log.info("trajectory written to %s", out_dir)
    return 0


def cmd_info(config: ExperimentConfig, out_dir: Path) -> int:
    rep = analysis.run_trajectory(config)
    report_io.write_report_csv(rep, out_dir / "report.csv")
    report_io.write_verdicts(rep.verdicts, out_dir / "verdicts.txt")
    report_io.render_figures(rep, out_dir)
    if config.solver in ("fk", "both"):
        t_probe = float(config.save_times[len(config.save_times) // 2])
        report_io.write_probes_csv(_fk_probe_rows(config, t_probe),
                                   out_dir / "probes.csv")
    log.info("report written to %s", out_dir)
    return 0


def cmd_kernel(config: ExperimentConfig, out_dir: Path) -> int:
    if config.grid.dim != 1:
        raise FpinfoError("kernel dumps need a one-dimensional grid")
    kernels = build_transition_kernels(config.potential, config.grid,
                                       config.save_times, config.dt,
                                       config.bandwidth)
    for t, kernel in sorted(kernels.items()):
        report_io.write_kernel_csv(kernel, out_dir / f"kernel_t{t:.6f}.csv")
    log.info("kernels written to %s", out_dir)
    return 0


class _Suite:
    def __init__(self):
        self.lines = []
        self.all_ok = True

    def check(self, name: str, ok: bool, detail: str):
        self.lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        self.all_ok = self.all_ok and ok


def cmd_verify(config: ExperimentConfig, out_dir: Path) -> int:
    """Run the identity suite on the configured problem."""
    suite = _Suite()
    p = config.potential
    grid = config.grid
    nu = steady_state(p, grid)
    hessV = p.hess_on(grid)
    rep = analysis.run_trajectory(config)

    # entropy-derivative identities
    ent = analysis.check_entropy_derivatives(rep)
    if np.max(rep.H_rel) < 1e-10:
        ok = ent.max_abs_first <= 1e-6 and ent.max_abs_second <= 1e-6
        suite.check("entropy_derivatives (stationary)", ok,
                    f"abs residuals {ent.max_abs_first:.2e}, {ent.max_abs_second:.2e} (tol 1e-6)")
    else:
        ok1 = ent.max_rel_first <= 0.02 or ent.max_abs_first <= 1e-3
        ok2 = ent.max_rel_second <= 0.05 or ent.max_abs_second <= 5e-3
        suite.check("entropy_first_derivative", ok1,
                    f"max rel residual {ent.max_rel_first:.2e} (tol 2e-2)")
        suite.check("entropy_second_derivative", ok2,
                    f"max rel residual {ent.max_rel_second:.2e} (tol 5e-2)")

    if config.mutual and grid.dim == 1:
        t_ref = float(config.save_times[len(config.save_times) // 2])
        mu0 = config.initial_field().normalize()
        mu0_pdf = _initial_callable(config)

        def joint_at(g: Grid):
            from .field import DensityField

            nu_g = steady_state(p, g)
            mu0_g = DensityField(g, mu0_pdf(g.points())).normalize()
            k = build_transition_kernels(p, g, [t_ref], min(g.h) ** 2)[t_ref]
            return joint_from_conditional(mu0_g, k.matrix.T, g), nu_g

        joint_fine, nu_fine = joint_at(grid)
        coarse = Grid(grid.bounds, tuple((k - 1) // 2 + 1 for k in grid.n))
        joint_coarse, nu_coarse = joint_at(coarse)

        kv_f = kv_decomposition_residual(joint_fine, nu_fine, config.floor_ratio)
        kv_c = kv_decomposition_residual(joint_coarse, nu_coarse, config.floor_ratio)
        suite.check("kv_decomposition", kv_f.relative <= 1e-3,
                    f"relative residual {kv_f.relative:.2e} (tol 1e-3)")
        zero_level = 1e-8
        shrink_ok = (kv_f.relative <= kv_c.relative / 2
                     or (kv_f.relative <= zero_level and kv_c.relative <= zero_level))
        suite.check("kv_decomposition_refinement", shrink_ok,
                    f"coarse {kv_c.relative:.2e} -> fine {kv_f.relative:.2e}")

        rho_one = np.ones(grid.n[0])
        rho_hess = hessV[:, 0, 0]
        ibp_f = integration_by_parts_residual(joint_fine, rho_one, config.floor_ratio)
        ibp_c = integration_by_parts_residual(
            joint_coarse, np.ones(coarse.n[0]), config.floor_ratio)
        ibp_v = integration_by_parts_residual(joint_fine, rho_hess, config.floor_ratio)
        suite.check("integration_by_parts", ibp_f.relative <= 1e-3,
                    f"relative residual {ibp_f.relative:.2e} (tol 1e-3)")
        suite.check("integration_by_parts_hessV", ibp_v.relative <= 1e-3,
                    f"relative residual {ibp_v.relative:.2e} (tol 1e-3)")
        shrink_ok = (ibp_f.relative <= ibp_c.relative / 2
                     or (ibp_f.relative <= zero_level and ibp_c.relative <= zero_level))
        suite.check("integration_by_parts_refinement", shrink_ok,
                    f"coarse {ibp_c.relative:.2e} -> fine {ibp_f.relative:.2e}")

        # Feynman-Kac vs deterministic densities at probe points
        t_probe = t_ref
        fd_field = evolve(mu0, p, t_probe, config.dt, [t_probe]).fields[-1]
        x_grid = grid.axis(0)
        worst = 0.0
        ok = True
        for i, x in enumerate(_default_probes(config)):
            est = fk_density(float(x), t_probe, _initial_callable(config), p,
                             paths=config.fk_paths, dt_path=config.fk_dt_path,
                             seed=config.seed + i,
                             beta=choose_beta(p, grid, config.beta_margin))
            fd_val = float(np.interp(x, x_grid, fd_field.values))
            gap = abs(est.value - fd_val)
            tol = max(3 * est.stderr, 1e-3)
            worst = max(worst, gap / tol)
            ok = ok and gap <= tol
        suite.check("fk_vs_fd", ok, f"worst |gap|/tol = {worst:.2f} at {t_probe:g}")

        # beta-shift invariance: moving weight between the sampled potential
        # and the unshift factor must leave the estimate unchanged
        beta = choose_beta(p, grid, config.beta_margin)

        def g0(pts):
            return np.exp(0.5 * p.value(pts)) * mu0_pdf(pts)

        fk_n = max(10000, config.fk_paths // 10)
        e1 = fk_gamma(0.0, t_probe, g0, SchrodingerPotential(p, beta),
                      paths=fk_n, seed=config.seed)
        e2 = fk_gamma(0.0, t_probe, g0, SchrodingerPotential(p, beta + 0.25),
                      paths=fk_n, seed=config.seed)
        tol = 3 * (e1.stderr + e2.stderr) + 1e-12
        suite.check("beta_shift_invariance", abs(e1.value - e2.value) <= tol,
                    f"|gap| {abs(e1.value - e2.value):.2e} (tol {tol:.2e})")

        # heat case: closed-form kernel oracle
        if p.family == "constant":
            ok = True
            worst = 0.0
            mu0_grid = config.initial_field().normalize()
            for i, x in enumerate(_default_probes(config)):
                est = fk_gamma(float(x), t_probe, mu0_pdf,
                               SchrodingerPotential(p, 0.0),
                               paths=config.fk_paths, seed=config.seed + i)
                exact = heat_kernel_density(float(x), t_probe, mu0_grid)
                z = abs(est.value - exact) / max(est.stderr, 1e-12)
                worst = max(worst, z)
                ok = ok and z <= 3.0
            suite.check("fk_vs_heat_kernel", ok, f"worst z-score {worst:.2f}")

    text = "\n".join(suite.lines) + "\n"
    sys.stdout.write(text)
    report_io.atomic_write_text(out_dir / "verify.txt", text)
    return 0 if suite.all_ok else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpinfo",
        description="Information functionals along the Fokker-Planck flow")
    parser.add_argument("command", choices=["flow", "info", "verify", "kernel"])
    parser.add_argument("--config", required=True, help="experiment config (INI)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap worker threads")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.threads is not None:
            config.threads = args.threads
        out_dir = Path(args.out) if args.out else config.out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        with _thread_cap(config.threads):
            if args.command == "flow":
                return cmd_flow(config, out_dir)
            if args.command == "info":
                return cmd_info(config, out_dir)
            if args.command == "kernel":
                return cmd_kernel(config, out_dir)
            return cmd_verify(config, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except FpinfoError as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
