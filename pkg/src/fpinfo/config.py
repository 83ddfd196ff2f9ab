"""Experiment configuration: an INI file of flat key/value pairs grouped in
sections (nested tables).  Grammar and defaults are documented in README.md;
configparser does the lexing, this module does typing and validation.  Every
validation error names the offending section.key.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .field import DensityField, Grid, gaussian_field, mixture_field
from .potential import Constant, EvenQuartic, Potential, Quadratic, Tabulated


@dataclass
class ExperimentConfig:
    potential: Potential
    grid: Grid
    initial_spec: dict
    t_end: float
    dt: float
    save_times: np.ndarray
    solver: str = "fd"
    mutual: bool = True
    bandwidth: float = None
    beta_margin: float = 0.0
    floor_ratio: float = 1e-12
    from_time: float = 0.0
    verdict_tol: float = None
    fk_paths: int = 100000
    fk_dt_path: float = None
    probes: tuple = ()
    seed: int = 0
    threads: int = 1
    out_dir: Path = Path("out")
    raw: dict = dataclass_field(default_factory=dict)

    def initial_field(self) -> DensityField:
        spec = self.initial_spec
        kind = spec["kind"]
        if kind == "gaussian":
            return gaussian_field(self.grid, spec["mean"], spec["var"])
        if kind == "mixture":
            return mixture_field(self.grid, spec["components"])
        if kind == "tabulated":
            return _tabulated_field(self.grid, spec["path"])
        raise ConfigError(f"initial.kind: unknown kind {kind!r}")


def _tabulated_field(grid: Grid, path) -> DensityField:
    if grid.dim != 1:
        raise ConfigError("initial.path: tabulated initial densities are 1D only")
    data = np.loadtxt(path, delimiter=",", comments="#", skiprows=1)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ConfigError(f"initial.path: expected two columns x,value in {path}")
    from scipy.interpolate import CubicSpline

    spline = CubicSpline(data[:, 0], np.maximum(data[:, 1], 0.0))
    x = grid.axis(0)
    lo, hi = data[0, 0], data[-1, 0]
    values = np.where((x >= lo) & (x <= hi), np.maximum(spline(x), 0.0), 0.0)
    return DensityField(grid, values).normalize()


def _floats(text: str):
    return [float(tok) for tok in text.replace(",", " ").split()]


class _Section:
    """Typed access to one INI section with section.key error messages."""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.present = parser.has_section(name)
        self._sec = parser[name] if self.present else {}

    def has(self, key: str) -> bool:
        return self.present and key in self._sec and str(self._sec[key]).strip() != ""

    def _get(self, key: str, kind, default, required: bool):
        if not self.has(key):
            if required:
                raise ConfigError(f"{self.name}.{key}: missing required key")
            return default
        raw = str(self._sec[key]).strip()
        try:
            return kind(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{self.name}.{key}: {exc}") from exc

    def str(self, key, default=None, required=False):
        return self._get(key, str, default, required)

    def float(self, key, default=None, required=False):
        return self._get(key, float, default, required)

    def int(self, key, default=None, required=False):
        return self._get(key, int, default, required)

    def bool(self, key, default=None, required=False):
        def parse(raw):
            val = raw.strip().lower()
            if val in ("1", "true", "yes", "on"):
                return True
            if val in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")

        return self._get(key, parse, default, required)

    def floats(self, key, default=None, required=False):
        return self._get(key, _floats, default, required)


def _build_potential(sec: _Section) -> Potential:
    family = sec.str("family", required=True).lower()
    dim = sec.int("dim", 1)
    if dim not in (1, 2):
        raise ConfigError("potential.dim: must be 1 or 2")
    if family == "quadratic":
        alpha = sec.float("alpha", 1.0)
        if alpha <= 0:
            raise ConfigError("potential.alpha: must be positive")
        return Quadratic(alpha, dim)
    if family in ("even-quartic", "quartic"):
        a = sec.float("a", required=True)
        b = sec.float("b", 0.0)
        if a < 0 or b < 0:
            raise ConfigError("potential.a/potential.b: must be nonnegative")
        return EvenQuartic(a, b, dim)
    if family == "constant":
        return Constant(sec.float("v0", 0.0), dim)
    if family == "tabulated":
        if dim != 1:
            raise ConfigError("potential.dim: tabulated potentials are 1D only")
        path = Path(sec.str("path", required=True))
        if not path.exists():
            raise ConfigError(f"potential.path: no such file {path}")
        data = np.loadtxt(path, delimiter=",", comments="#", skiprows=1)
        if data.ndim != 2 or data.shape[1] != 2:
            raise ConfigError(f"potential.path: expected two columns x,value in {path}")
        return Tabulated(data[:, 0], data[:, 1])
    raise ConfigError(f"potential.family: unknown family {family!r}")


def _build_grid(sec: _Section, dim: int) -> Grid:
    lo = sec.floats("lo", required=True)
    hi = sec.floats("hi", required=True)
    n_raw = sec.str("n", required=True)
    try:
        n = [int(tok) for tok in n_raw.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"grid.n: {exc}") from exc
    if len(lo) == 1 and dim == 2:
        lo = lo * 2
    if len(hi) == 1 and dim == 2:
        hi = hi * 2
    if len(n) == 1 and dim == 2:
        n = n * 2
    if not (len(lo) == len(hi) == len(n) == dim):
        raise ConfigError("grid.lo/hi/n: need one entry per axis")
    for i in range(dim):
        if hi[i] <= lo[i]:
            raise ConfigError(f"grid.lo/hi: axis {i} is empty")
        if n[i] < 33:
            raise ConfigError(f"grid.n: need at least 33 nodes per axis, got {n[i]}")
    return Grid(tuple((lo[i], hi[i]) for i in range(dim)), tuple(n))


def _build_initial(sec: _Section, dim: int) -> dict:
    kind = sec.str("kind", "gaussian").lower()
    if kind == "gaussian":
        mean = sec.floats("mean", [0.0])
        var = sec.floats("var", required=True)
        if any(v <= 0 for v in var):
            raise ConfigError("initial.var: variances must be positive")
        mean = mean * dim if len(mean) == 1 and dim == 2 else mean
        var = var * dim if len(var) == 1 and dim == 2 else var
        return {"kind": "gaussian", "mean": mean, "var": var}
    if kind == "mixture":
        if dim != 1:
            raise ConfigError("initial.kind: mixtures are 1D only")
        text = sec.str("components", required=True)
        components = []
        for part in text.split(";"):
            vals = _floats(part)
            if len(vals) != 3:
                raise ConfigError(
                    "initial.components: each component is weight,mean,var")
            w, m, v = vals
            if w <= 0 or v <= 0:
                raise ConfigError("initial.components: weights and variances must be positive")
            components.append((w, m, v))
        return {"kind": "mixture", "components": components}
    if kind == "tabulated":
        path = Path(sec.str("path", required=True))
        if not path.exists():
            raise ConfigError(f"initial.path: no such file {path}")
        return {"kind": "tabulated", "path": path}
    raise ConfigError(f"initial.kind: unknown kind {kind!r}")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    pot_sec = _Section(parser, "potential")
    grid_sec = _Section(parser, "grid")
    init_sec = _Section(parser, "initial")
    time_sec = _Section(parser, "time")
    solver_sec = _Section(parser, "solver")
    analysis_sec = _Section(parser, "analysis")
    out_sec = _Section(parser, "output")

    potential = _build_potential(pot_sec)
    grid = _build_grid(grid_sec, potential.dim)
    initial_spec = _build_initial(init_sec, potential.dim)

    t_end = time_sec.float("t_end", required=True)
    if t_end <= 0:
        raise ConfigError("time.t_end: must be positive")
    h2 = min(grid.h) ** 2
    dt = time_sec.float("dt", h2)
    if dt <= 0:
        raise ConfigError("time.dt: must be positive")
    if time_sec.has("save_times"):
        save_times = np.asarray(time_sec.floats("save_times"), dtype=float)
    else:
        count = time_sec.int("save_count", 8)
        if count < 1:
            raise ConfigError("time.save_count: must be at least 1")
        save_times = t_end * np.arange(1, count + 1) / count
    save_times = np.sort(np.unique(save_times))
    if save_times.size == 0 or save_times[0] <= 0 or save_times[-1] > t_end + 1e-12:
        raise ConfigError("time.save_times: must lie in (0, t_end]")

    solver = solver_sec.str("method", "fd").lower()
    if solver not in ("fd", "fk", "both"):
        raise ConfigError(f"solver.method: unknown method {solver!r}")
    mutual = analysis_sec.bool("mutual", grid.dim == 1)
    if mutual and grid.dim != 1:
        raise ConfigError("analysis.mutual: mutual-information analysis needs dim = 1")
    floor_ratio = analysis_sec.float("floor_ratio", 1e-12)
    if not (0 < floor_ratio <= 1e-6):
        raise ConfigError("analysis.floor_ratio: must be in (0, 1e-6]")
    fk_paths = solver_sec.int("fk_paths", 100000)
    if fk_paths < 1000:
        raise ConfigError("solver.fk_paths: need at least 1000 paths")

    bandwidth = solver_sec.float("bandwidth", None)
    if bandwidth is not None and bandwidth < 2 * max(grid.h):
        raise ConfigError("solver.bandwidth: must be at least twice the grid spacing")

    return ExperimentConfig(
        potential=potential,
        grid=grid,
        initial_spec=initial_spec,
        t_end=t_end,
        dt=dt,
        save_times=save_times,
        solver=solver,
        mutual=mutual,
        bandwidth=bandwidth,
        beta_margin=solver_sec.float("beta_margin", 0.0),
        floor_ratio=floor_ratio,
        from_time=analysis_sec.float("from_time", 0.0),
        verdict_tol=analysis_sec.float("verdict_tol", None),
        fk_paths=fk_paths,
        fk_dt_path=solver_sec.float("fk_dt_path", None),
        probes=tuple(solver_sec.floats("probes", [])),
        seed=out_sec.int("seed", 0),
        threads=out_sec.int("threads", 1),
        out_dir=Path(out_sec.str("dir", "out")),
        raw={s: dict(parser[s]) for s in parser.sections()},
    )
