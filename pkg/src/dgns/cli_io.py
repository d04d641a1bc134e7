"""Run configuration, convergence tables and VTK field export."""

from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .problems import PROBLEMS, get_problem
from .projection import PROJECTORS, ProjectionConfig, local_mass_residual, pointwise_divergence
from .solvers import NewtonConfig
from .timestepping import SCHEMES, STEPPERS, SchemeConfig, make_discretization, run_simulation

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


# keys of every INI section; each maps to a RunConfig field of the same name
SECTIONS = {
    "problem": ("problem", "T"),
    "mesh": ("dims",),
    "discretization": ("degree", "alpha"),
    "scheme": ("scheme", "stepper", "dts", "omega", "allow_omega_override"),
    "projection": ("projector", "tau_d", "rt_degree", "poisson_rtol"),
    "solver": ("rtol", "newton_rtol"),
    "output": ("output", "seed"),
}


@dataclass(frozen=True)
class RunConfig:
    problem: str = "taylor_green_2d"
    T: float | None = None  # None: the problem's final time
    dims: tuple | None = None  # None: the problem's default mesh
    degree: int = 2
    alpha: float = 4.0
    scheme: str = "ripcs"
    stepper: str = "sdirk2"
    dts: tuple = (0.025,)
    omega: float | None = None
    allow_omega_override: bool = False
    projector: str = "divdiv"
    tau_d: float | None = None
    rt_degree: int | None = None
    poisson_rtol: float = 1e-12
    rtol: float = 1e-10
    newton_rtol: float = 1e-8
    output: str = "output"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dts", tuple(float(x) for x in self.dts))
        if self.dims is not None:
            object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        self.validate()

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.stepper not in STEPPERS:
            raise ConfigError(f"unknown stepper {self.stepper!r}")
        if self.projector not in PROJECTORS:
            raise ConfigError(f"unknown projector {self.projector!r}")
        if self.degree < 1:
            raise ConfigError("degree must be at least 1 (pressure degree p - 1 >= 0)")
        if not self.dts:
            raise ConfigError("the dt list is empty")
        if any(not dt > 0 for dt in self.dts):
            raise ConfigError("time steps must be positive")
        if any(b >= a for a, b in zip(self.dts, self.dts[1:])):
            raise ConfigError(f"the dt list must be strictly decreasing, got {list(self.dts)}")
        if self.dims is not None and any(n < 1 for n in self.dims):
            raise ConfigError("mesh dims must be positive")
        if self.T is not None and not self.T > 0:
            raise ConfigError("final time must be positive")
        if self.omega is not None and not self.allow_omega_override:
            default = 1.0 if self.stepper == "implicit_euler" else 1.5
            if not math.isclose(self.omega, default):
                raise ConfigError(f"omega = {self.omega} differs from the {self.stepper} default {default}; "
                                  "set allow_omega_override to use it")

    # construction -------------------------------------------------------
    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser()
        parser.optionxform = str
        parser.read_string(text)
        kw = {}
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                kw[key] = _parse_value(key, raw)
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_ini(fh.read())

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        values = asdict(self)
        for section, keys in SECTIONS.items():
            parser[section] = {k: _format_value(values[k]) for k in keys if values[k] is not None}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    # derived objects ----------------------------------------------------
    def problem_spec(self):
        return get_problem(self.problem, T=self.T) if self.T is not None else get_problem(self.problem)

    def scheme_config(self, dt: float, T: float) -> SchemeConfig:
        base = SchemeConfig()
        return SchemeConfig(scheme=self.scheme, stepper=self.stepper, dt=dt, T=T, omega=self.omega,
                            linear=replace(base.linear, rtol=self.rtol),
                            stokes_linear=replace(base.stokes_linear, rtol=self.rtol),
                            newton=replace(NewtonConfig(), rtol=self.newton_rtol))

    def projection_config(self) -> ProjectionConfig:
        return ProjectionConfig(self.projector, tau_d=self.tau_d, rt_degree=self.rt_degree,
                                rtol=self.poisson_rtol)


_INT_KEYS = {"degree", "rt_degree", "seed"}
_FLOAT_KEYS = {"T", "alpha", "omega", "tau_d", "poisson_rtol", "rtol", "newton_rtol"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key == "dims":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        if key == "dts":
            return tuple(float(x) for x in raw.replace(",", " ").split())
        if key == "allow_omega_override":
            return raw.lower() in ("1", "true", "yes", "on")
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(x) for x in value)
    return str(value)


# ----------------------------------------------------------------------
# convergence tables

COLUMNS = ("dt", "l2_v", "h1_v", "l2_p", "order_l2_v", "order_h1_v", "order_l2_p", "status")
ERROR_KEYS = ("l2_v", "h1_v", "l2_p")


def round_sig(x: float | None, digits: int = 6) -> float | None:
    """Round to ``digits`` significant digits (the precision written to CSV)."""
    if x is None or not math.isfinite(x):
        return x
    return float(f"{x:.{digits - 1}e}")


@dataclass
class TableRow:
    """One sweep entry.  Errors are kept at the six significant digits written out."""

    dt: float
    l2_v: float = math.nan
    h1_v: float = math.nan
    l2_p: float = math.nan
    order_l2_v: float | None = None
    order_h1_v: float | None = None
    order_l2_p: float | None = None
    status: str = "ok"
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def failed(self) -> bool:
        return self.status != "ok"

    def order(self, key: str) -> float | None:
        return getattr(self, f"order_{key}")


def observed_orders(rows: list[TableRow]) -> None:
    """Fill the order columns: log of consecutive error ratios over log of dt ratios."""
    for prev, row in zip(rows, rows[1:]):
        for key in ERROR_KEYS:
            a, b = getattr(prev, key), getattr(row, key)
            ok = not (prev.failed or row.failed) and a > 0 and b > 0
            value = math.log(a / b) / math.log(prev.dt / row.dt) if ok else None
            setattr(row, f"order_{key}", round_sig(value))


def fitted_order(dts, errors) -> float:
    """Least-squares slope of log(error) against log(dt)."""
    x, y = np.log(np.asarray(dts, float)), np.log(np.asarray(errors, float))
    return float(np.polyfit(x, y, 1)[0])


def run_table(config: RunConfig, progress=None) -> list[TableRow]:
    """One simulation per dt of the sweep with errors at the final time.

    A failed run is marked in its row and the sweep continues.
    """
    problem = config.problem_spec()
    if not problem.has_exact:
        raise ConfigError(f"problem {config.problem!r} has no exact solution to tabulate")
    rows = []
    for dt in config.dts:
        row = TableRow(dt=dt)
        try:
            disc = make_discretization(problem, config.dims, config.degree, config.alpha)
            res = run_simulation(disc, problem, config.scheme_config(dt, problem.T), config.projection_config())
        except (ValueError, ArithmeticError) as exc:
            row.status = f"failed: {exc}"
        else:
            if res.failed:
                row.status = f"failed: {res.error}"
            else:
                err = res.final_errors
                row.raw = dict(l2_v=err.l2_v, h1_v=err.h1_v, l2_p=err.l2_p, elapsed=res.elapsed)
                row.l2_v, row.h1_v, row.l2_p = (round_sig(err.l2_v), round_sig(err.h1_v), round_sig(err.l2_p))
        log.info("dt=%g: %s", dt, row.status)
        rows.append(row)
        if progress is not None:
            progress(row)
    observed_orders(rows)
    return rows


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if not math.isfinite(x):
        return "nan"
    return f"{x:.5e}"


def table_to_csv(rows: list[TableRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([_fmt(getattr(row, c)) for c in COLUMNS])
    return buf.getvalue()


def write_table(rows: list[TableRow], path) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(table_to_csv(rows))
    return str(path)


def read_table(source) -> list[TableRow]:
    """Parse a table written by :func:`write_table` (a path or CSV text)."""
    if isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        kw = {}
        for c in COLUMNS:
            value = rec[c]
            if c == "status":
                kw[c] = value
            elif value == "":
                kw[c] = None
            else:
                kw[c] = float(value)
        rows.append(TableRow(**kw))
    return rows


def format_table(rows: list[TableRow]) -> str:
    """Fixed-width text rendering for terminals."""
    head = f"{'dt':>11} {'L2 v':>12} {'H1 v':>12} {'L2 p':>12} {'rate v':>7} {'rate H1':>7} {'rate p':>7}"
    lines = [head]
    for r in rows:
        rates = " ".join(f"{x:7.3f}" if x is not None else " " * 7
                         for x in (r.order_l2_v, r.order_h1_v, r.order_l2_p))
        line = f"{r.dt:11.3e} {r.l2_v:12.5e} {r.h1_v:12.5e} {r.l2_p:12.5e} {rates}"
        if r.failed:
            line += f"  {r.status}"
        lines.append(line)
    return "\n".join(lines)


# ----------------------------------------------------------------------
# VTK output

_VTK_CELL = {1: 3, 2: 9, 3: 12}  # line, quad, hexahedron


def _corner_points(dim: int) -> np.ndarray:
    """Reference corners in VTK cell order."""
    if dim == 1:
        return np.array([[0.0], [1.0]])
    if dim == 2:
        return np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    return np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                     [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)


def _data_array(name: str, values: np.ndarray, ncomp: int, dtype: str = "Float64") -> str:
    flat = np.asarray(values).reshape(-1)
    if dtype.startswith("Float"):
        body = " ".join(repr(float(x)) for x in flat)
    else:
        body = " ".join(str(int(x)) for x in flat)
    return (f'        <DataArray type="{dtype}" Name="{name}" NumberOfComponents="{ncomp}" format="ascii">\n'
            f"          {body}\n        </DataArray>\n")


def fields_to_vtu(disc, v, p, g=None, t: float = 0.0, mass_residual=None) -> str:
    """Unstructured-grid XML with discontinuous corner values per element.

    Point data: velocity and pressure at the element corners (points are
    duplicated per element so jumps stay visible).  Cell data: divergence
    at the cell centre, its maximum modulus over quadrature points and the
    per-cell face-flux balance.
    """
    mesh = disc.mesh
    d, nel = mesh.dim, mesh.n_elements
    corners = _corner_points(d)
    nc = len(corners)
    pts = mesh.to_physical(corners).reshape(nel * nc, d)
    pts3 = np.zeros((len(pts), 3))
    pts3[:, :d] = pts
    vel = disc.vspace.eval_at(v, corners).transpose(0, 2, 1).reshape(-1, d)
    vel3 = np.zeros((len(vel), 3))
    vel3[:, :d] = vel
    pres = disc.pspace.eval_at(p, corners)[:, 0].reshape(-1)
    centre = np.full((1, d), 0.5)
    grads = np.einsum("ecm,kmq->eckq", disc.vspace.as_array(v), disc.vspace.basis.eval_grad(centre))
    div_centre = np.einsum("ekkq->e", grads / mesh.h[:, None, :, None])
    div_max = np.abs(pointwise_divergence(disc, v)).max(axis=1)
    if mass_residual is None:
        mass_residual = local_mass_residual(disc, v, g, t)
    conn = np.arange(nel * nc)
    offsets = nc * np.arange(1, nel + 1)
    types = np.full(nel, _VTK_CELL[d])
    out = ['<?xml version="1.0"?>\n',
           '<VTKFile type="UnstructuredGrid" version="0.1" byte_order="LittleEndian">\n',
           "  <UnstructuredGrid>\n",
           f'    <Piece NumberOfPoints="{len(pts3)}" NumberOfCells="{nel}">\n',
           "      <Points>\n", _data_array("Points", pts3, 3), "      </Points>\n",
           "      <Cells>\n",
           _data_array("connectivity", conn, 1, "Int64"),
           _data_array("offsets", offsets, 1, "Int64"),
           _data_array("types", types, 1, "UInt8"),
           "      </Cells>\n",
           '      <PointData Vectors="velocity" Scalars="pressure">\n',
           _data_array("velocity", vel3, 3), _data_array("pressure", pres, 1),
           "      </PointData>\n",
           '      <CellData Scalars="mass_residual">\n',
           _data_array("divergence", div_centre, 1),
           _data_array("divergence_max", div_max, 1),
           _data_array("mass_residual", np.asarray(mass_residual), 1),
           "      </CellData>\n",
           "    </Piece>\n", "  </UnstructuredGrid>\n", "</VTKFile>\n"]
    return "".join(out)


def write_fields(path, disc, v, p, g=None, t: float = 0.0, mass_residual=None) -> str:
    text = fields_to_vtu(disc, v, p, g, t, mass_residual)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return str(path)


def history_to_csv(rows: list[dict]) -> str:
    """Per-step diagnostics of :func:`run_simulation` as CSV."""
    keys = ["step", "t", "kinetic_energy", "dissipation", "enstrophy", "mass_residual_max",
            "continuity_residual", "newton_iterations", "linear_iterations", "poisson_iterations"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(keys + ["l2_v", "h1_v", "l2_p"])
    for row in rows:
        err = row.get("errors")
        extra = [repr(err.l2_v), repr(err.h1_v), repr(err.l2_p)] if err is not None else ["", "", ""]
        writer.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in keys] + extra)
    return buf.getvalue()


__all__ = ["ConfigError", "RunConfig", "TableRow", "run_table", "observed_orders", "fitted_order",
           "table_to_csv", "write_table", "read_table", "format_table", "fields_to_vtu", "write_fields",
           "history_to_csv", "round_sig"]
