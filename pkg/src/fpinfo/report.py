"""Serialization of densities, kernels and reports, plus the rendered
figures that accompany the delimited output.

All files are written atomically (temp file in the target directory, then
rename), so consumers never observe partial output.  CSV numbers use full
precision scientific notation; report.csv is byte-reproducible for a fixed
config and seed.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .analysis import REPORT_COLUMNS, InfoReport
from .field import DensityField, Grid
from .solver_fd import FlowTrajectory, TransitionKernel

FMT = "%.17e"


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _grid_header(grid: Grid) -> str:
    bounds = ";".join(f"{lo:g}:{hi:g}" for lo, hi in grid.bounds)
    n = ";".join(str(k) for k in grid.n)
    return f"# grid dim={grid.dim} bounds={bounds} n={n}"


def write_density_csv(field: DensityField, path):
    """Columns x[,y],value with a grid metadata header line."""
    grid = field.grid
    lines = [_grid_header(grid)]
    if grid.dim == 1:
        lines.append("x,value")
        x = grid.axis(0)
        for i in range(grid.n[0]):
            lines.append(f"{FMT % x[i]},{FMT % field.values[i]}")
    else:
        lines.append("x,y,value")
        x, y = grid.axes()
        for i in range(grid.n[0]):
            for j in range(grid.n[1]):
                lines.append(f"{FMT % x[i]},{FMT % y[j]},{FMT % field.values[i, j]}")
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_density_csv(path) -> DensityField:
    path = Path(path)
    with open(path) as handle:
        header = handle.readline().strip()
    if not header.startswith("# grid"):
        raise ValueError(f"{path}: missing grid metadata header")
    parts = dict(tok.split("=", 1) for tok in header[2:].split()[1:])
    dim = int(parts["dim"])
    bounds = tuple(tuple(float(v) for v in b.split(":")) for b in parts["bounds"].split(";"))
    n = tuple(int(v) for v in parts["n"].split(";"))
    grid = Grid(bounds, n)
    data = np.loadtxt(path, delimiter=",", skiprows=2)
    values = data[:, dim].reshape(grid.shape)
    return DensityField(grid, values)


def write_trajectory(traj: FlowTrajectory, out_dir) -> Path:
    """One CSV per save time plus a manifest of times and solver metadata."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for t, f in zip(traj.times, traj.fields):
        name = f"density_t{t:.6f}.csv"
        write_density_csv(f, out_dir / name)
        files.append({"t": float(t), "file": name, "mass": float(f.mass)})
    manifest = {"times": [float(t) for t in traj.times],
                "solver": traj.meta, "fields": files}
    atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return out_dir / "manifest.json"


def write_kernel_csv(kernel: TransitionKernel, path):
    """Kernel matrix as x_t rows by x_0 columns with coordinate headers."""
    lines = [_grid_header(kernel.gridT) + f" t={kernel.t:g}"]
    x0 = kernel.grid0.axis(0)
    lines.append("x_t\\x_0," + ",".join(FMT % v for v in x0))
    xt = kernel.gridT.axis(0)
    for i in range(kernel.gridT.n[0]):
        lines.append(FMT % xt[i] + "," + ",".join(FMT % v for v in kernel.matrix[i]))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def write_report_csv(report: InfoReport, path):
    lines = [",".join(REPORT_COLUMNS)]
    for row in report.rows():
        lines.append(",".join(FMT % v for v in row))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def write_verdicts(verdicts: dict, path):
    """Flat key=value summary, one line per key, for CI assertions."""
    lines = []
    for key, value in verdicts.items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = FMT % value
        else:
            text = str(value)
        lines.append(f"{key}={text}")
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def write_probes_csv(rows, path):
    """Feynman-Kac probe results: x,t,estimate,stderr,paths."""
    lines = ["x,t,estimate,stderr,paths"]
    for x, t, est in rows:
        lines.append(f"{FMT % x},{FMT % t},{FMT % est.value},{FMT % est.stderr},{est.paths}")
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def _atomic_figure(fig, path: Path):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        fig.savefig(tmp, format="png", dpi=130)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render_figures(report: InfoReport, out_dir) -> list:
    """Render the report's headline curves to PNG files next to the CSVs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    t = report.times

    if not np.all(np.isnan(report.I)):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
        ax1.plot(t, report.I, "o-", ms=3, label="I(t)")
        ax1.set_xlabel("t")
        ax1.set_ylabel("mutual information")
        ax1.legend(frameon=False)
        ax2.plot(t, -report.Phi, "o-", ms=3, label="dI/dt (analytic)")
        ax2.plot(t, report.d2I_analytic, "s-", ms=3, label="d2I/dt2 (analytic)")
        ax2.axhline(0.0, color="k", lw=0.5)
        ax2.set_xlabel("t")
        ax2.legend(frameon=False)
        fig.tight_layout()
        path = out_dir / "mutual_information.png"
        _atomic_figure(fig, path)
        plt.close(fig)
        written.append(path)

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    positive = report.H_rel > 0
    if positive.any():
        ax1.semilogy(t[positive], report.H_rel[positive], "o-", ms=3)
    ax1.set_xlabel("t")
    ax1.set_ylabel("relative entropy")
    ax2.plot(t, report.gamma_margin, "o-", ms=3)
    ax2.axhline(0.0, color="k", lw=0.5)
    ax2.set_xlabel("t")
    ax2.set_ylabel("gamma log-concavity margin")
    fig.tight_layout()
    path = out_dir / "dissipation_margins.png"
    _atomic_figure(fig, path)
    plt.close(fig)
    written.append(path)
    return written
