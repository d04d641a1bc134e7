"""Problem bank: manufactured and benchmark flows with their data.

Every callable takes points ``x`` of shape (npts, d) and a time ``t``.
Velocities and sources return (npts, d), pressures (npts,).  The exact
fields are written with numpy ufuncs only so they accept complex input;
exact gradients for the error norms are taken by complex-step
differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .forms import Discretization
from .mesh import all_tagged, build_mesh

Field = Callable[[np.ndarray, float], np.ndarray]


@dataclass
class ProblemSpec:
    name: str
    dim: int
    origin: tuple
    upper: tuple
    periodic: tuple
    boundary_tags: dict
    rho: float = 1.0
    mu: float = 1.0
    T: float = 1.0
    navier_stokes: bool = True
    velocity: Field | None = None
    pressure: Field | None = None
    source: Field | None = None
    boundary: Field | None = None
    initial_velocity: Field | None = None
    initial_pressure: Field | None = None
    default_dims: tuple = ()
    description: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def has_exact(self) -> bool:
        return self.velocity is not None and self.pressure is not None

    @property
    def g(self) -> Field | None:
        return self.boundary if self.boundary is not None else self.velocity

    @property
    def v0(self) -> Field:
        return self.initial_velocity or self.velocity

    @property
    def p0(self) -> Field | None:
        return self.initial_pressure or self.pressure

    @property
    def nu(self) -> float:
        return self.mu / self.rho

    @property
    def lengths(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float) - np.asarray(self.origin, dtype=float)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def mesh(self, dims=None):
        if dims is None:
            dims = self.default_dims
        elif np.isscalar(dims):
            dims = (int(dims),) * self.dim
        return build_mesh(tuple(dims), self.origin, self.upper, self.periodic, self.boundary_tags)


def _stack(*cols):
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


# ----------------------------------------------------------------------
# two-dimensional cases


def taylor_green_2d(mu: float = 0.01, rho: float = 1.0, T: float = 2.0) -> ProblemSpec:
    nu = mu / rho
    pi = np.pi

    def v(x, t):
        a = np.exp(-2 * pi**2 * nu * t)
        return _stack(-a * np.cos(pi * x[:, 0]) * np.sin(pi * x[:, 1]),
                      a * np.sin(pi * x[:, 0]) * np.cos(pi * x[:, 1]))

    def p(x, t):
        return -0.25 * rho * np.exp(-4 * pi**2 * nu * t) * (np.cos(2 * pi * x[:, 1]) + np.cos(2 * pi * x[:, 0]))

    return ProblemSpec("taylor_green_2d", 2, (-1.0, -1.0), (1.0, 1.0), (True, True), {},
                       rho=rho, mu=mu, T=T, navier_stokes=True, velocity=v, pressure=p,
                       source=None, default_dims=(64, 64),
                       description="periodic decaying vortex array with exact solution")


def _dirichlet_v(x, t):
    return _stack(np.sin(x[:, 0] + t) * np.sin(x[:, 1] + t), np.cos(x[:, 0] + t) * np.cos(x[:, 1] + t))


def _dirichlet_p(x, t):
    return np.sin(x[:, 0] - x[:, 1] + t)


def _dirichlet_f(x, t):
    X, Y = x[:, 0], x[:, 1]
    s = np.sin(X + Y + 2 * t)
    c = np.cos(X - Y + t)
    return _stack(s + 2 * np.sin(X + t) * np.sin(Y + t) + c,
                  -s + 2 * np.cos(X + t) * np.cos(Y + t) - c)


def dirichlet_case(T: float = 1.0) -> ProblemSpec:
    """Unsteady Stokes on the unit square, Dirichlet data on the whole boundary."""
    return ProblemSpec("dirichlet", 2, (0.0, 0.0), (1.0, 1.0), (False, False), all_tagged(2),
                       rho=1.0, mu=1.0, T=T, navier_stokes=False, velocity=_dirichlet_v,
                       pressure=_dirichlet_p, source=_dirichlet_f, default_dims=(64, 64),
                       description="manufactured Stokes flow with Dirichlet boundary")


def _mixed_v(x, t):
    return _stack(np.sin(x[:, 0]) * np.sin(x[:, 1] + t), np.cos(x[:, 0]) * np.cos(x[:, 1] + t))


def _mixed_p(x, t):
    return np.cos(x[:, 0]) * np.sin(x[:, 1] + t)


def _mixed_f(x, t):
    X, Y = x[:, 0], x[:, 1]
    return _stack(np.sin(X) * (np.cos(Y + t) + np.sin(Y + t)),
                  np.cos(X) * (3 * np.cos(Y + t) - np.sin(Y + t)))


def mixed_case(T: float = 1.0) -> ProblemSpec:
    """Unsteady Stokes with an outflow (natural) boundary on x = 0."""
    tags = all_tagged(2)
    tags["xmin"] = "neumann"
    return ProblemSpec("mixed", 2, (0.0, 0.0), (1.0, 1.0), (False, False), tags,
                       rho=1.0, mu=1.0, T=T, navier_stokes=False, velocity=_mixed_v,
                       pressure=_mixed_p, source=_mixed_f, default_dims=(64, 64),
                       description="manufactured Stokes flow with outflow on x = 0")


# ----------------------------------------------------------------------
# three-dimensional cases


def beltrami_3d(a: float = np.pi / 4, d: float = np.pi / 2, T: float = 0.5) -> ProblemSpec:
    rho = 1.0

    def v(x, t):
        X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
        s = -a * np.exp(-d * d * t)
        return _stack(
            s * (np.exp(a * X) * np.sin(d * Z + a * Y) + np.cos(d * Y + a * X) * np.exp(a * Z)),
            s * (np.exp(a * X) * np.cos(d * Z + a * Y) + np.exp(a * Y) * np.sin(a * Z + d * X)),
            s * (np.exp(a * Y) * np.cos(a * Z + d * X) + np.sin(d * Y + a * X) * np.exp(a * Z)),
        )

    def p(x, t):
        X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
        # pressure is quadratic in the velocity amplitude, hence the doubled decay rate
        return -0.5 * a * a * rho * np.exp(-2 * d * d * t) * (
            2 * np.cos(d * Y + a * X) * np.exp(a * (Z + X)) * np.sin(d * Z + a * Y)
            + 2 * np.exp(a * (Y + X)) * np.sin(a * Z + d * X) * np.cos(d * Z + a * Y)
            + 2 * np.sin(d * Y + a * X) * np.exp(a * (Z + Y)) * np.cos(a * Z + d * X)
            + np.exp(2 * a * Z) + np.exp(2 * a * Y) + np.exp(2 * a * X))

    return ProblemSpec("beltrami_3d", 3, (-1.0,) * 3, (1.0,) * 3, (False,) * 3, all_tagged(3),
                       rho=rho, mu=1.0, T=T, navier_stokes=True, velocity=v, pressure=p,
                       source=None, default_dims=(8, 8, 8), extra=dict(a=a, d=d),
                       description="Beltrami flow with aligned velocity and vorticity")


def taylor_green_3d(re: float = 1600.0, T: float = 5.0, L: float = 1.0, V0: float = 1.0) -> ProblemSpec:
    rho0 = 1.0

    def v0(x, t):
        X, Y, Z = x[:, 0] / L, x[:, 1] / L, x[:, 2] / L
        return _stack(V0 * np.sin(X) * np.cos(Y) * np.cos(Z),
                      -V0 * np.cos(X) * np.sin(Y) * np.cos(Z),
                      0.0 * X)

    def p0(x, t):
        X, Y, Z = x[:, 0] / L, x[:, 1] / L, x[:, 2] / L
        return rho0 * V0**2 / 16 * (np.cos(2 * X) + np.cos(2 * Y)) * (np.cos(2 * Z) + 2)

    return ProblemSpec("taylor_green_3d", 3, (-np.pi * L,) * 3, (np.pi * L,) * 3, (True,) * 3, {},
                       rho=rho0, mu=rho0 * V0 * L / re, T=T, navier_stokes=True,
                       initial_velocity=v0, initial_pressure=p0, default_dims=(16, 16, 16),
                       extra=dict(re=re), description="transitional Taylor-Green vortex")


def driven_cavity_3d(re: float = 10000.0, T: float = 2.0) -> ProblemSpec:
    """Lid-driven cube with a ramped lid; for smoke runs only."""

    def g(x, t):
        lid = np.isclose(x[:, 1], 1.0)
        out = np.zeros((len(x), 3))
        out[lid, 0] = min(t, 1.0)
        return out

    def zero_v(x, t):
        return np.zeros((len(x), 3))

    def zero_p(x, t):
        return np.zeros(len(x))

    return ProblemSpec("driven_cavity_3d", 3, (0.0,) * 3, (1.0,) * 3, (False,) * 3, all_tagged(3),
                       rho=1.0, mu=1.0 / re, T=T, navier_stokes=True, boundary=g,
                       initial_velocity=zero_v, initial_pressure=zero_p, default_dims=(8, 8, 8),
                       extra=dict(re=re), description="lid-driven cavity, ramped lid")


PROBLEMS = {
    "taylor_green_2d": taylor_green_2d,
    "dirichlet": dirichlet_case,
    "mixed": mixed_case,
    "beltrami_3d": beltrami_3d,
    "taylor_green_3d": taylor_green_3d,
    "driven_cavity_3d": driven_cavity_3d,
}


def get_problem(name: str, **kwargs) -> ProblemSpec:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; known: {sorted(PROBLEMS)}") from None
    return factory(**kwargs)


# ----------------------------------------------------------------------
# exact-solution helpers


def complex_step_gradient(fn: Field, x: np.ndarray, t: float, h: float = 1e-30) -> np.ndarray:
    """Jacobian of a vector field by complex-step differentiation, (npts, ncomp, d)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.shape[1]):
        xc = x.astype(complex)
        xc[:, j] += 1j * h
        cols.append(np.imag(np.asarray(fn(xc, t))) / h)
    return np.stack(cols, axis=-1)


_D1 = {1: 3 / 4, 2: -3 / 20, 3: 1 / 60}  # sixth-order central first derivative


def pde_residual(problem: ProblemSpec, x: np.ndarray, t: float, dx: float = 1e-3, h: float = 1e-30) -> np.ndarray:
    """rho dv/dt - mu lap v + rho (v.grad) v + grad p - f at the points ``x``.

    First derivatives are complex-step derivatives (exact to round-off);
    second derivatives are sixth-order central differences of those.
    """
    v, p, f = problem.velocity, problem.pressure, problem.source
    x = np.asarray(x, dtype=float)
    d = x.shape[1]
    dvdt = np.imag(np.asarray(v(x, t + 1j * h))) / h
    grad = complex_step_gradient(v, x, t, h)
    gradp = complex_step_gradient(lambda y, s: np.asarray(p(y, s))[:, None], x, t, h)[:, 0]
    lap = np.zeros_like(dvdt)
    for j in range(d):
        e = np.zeros(d)
        e[j] = dx
        for k, c in _D1.items():
            up = complex_step_gradient(v, x + k * e, t, h)[:, :, j]
            down = complex_step_gradient(v, x - k * e, t, h)[:, :, j]
            lap += c * (up - down) / dx
    res = problem.rho * dvdt - problem.mu * lap + gradp
    if problem.navier_stokes:
        res += problem.rho * np.einsum("nij,nj->ni", grad, v(x, t))
    if f is not None:
        res -= f(x, t)
    return res


def boundary_flux(problem: ProblemSpec, n: int = 20) -> float:
    """Total flux of the boundary data through the Dirichlet sides at t = 0."""
    from .basis import gauss_1d

    total = 0.0
    d = problem.dim
    xg, wg = gauss_1d(n)
    for k in range(d):
        if problem.periodic[k]:
            continue
        for high in (False, True):
            others = [j for j in range(d) if j != k]
            grids = np.meshgrid(*([xg] * (d - 1)), indexing="ij")
            wgrid = np.prod(np.meshgrid(*([wg] * (d - 1)), indexing="ij"), axis=0).ravel()
            pts = np.empty((wgrid.size, d))
            for jj, j in enumerate(others):
                pts[:, j] = problem.origin[j] + problem.lengths[j] * grids[jj].ravel()
            pts[:, k] = problem.upper[k] if high else problem.origin[k]
            scale = np.prod([problem.lengths[j] for j in others])
            gn = problem.g(pts, 0.0)[:, k] * (1.0 if high else -1.0)
            total += scale * float(gn @ wgrid)
    return total


# ----------------------------------------------------------------------
# error norms and flow diagnostics


@dataclass
class ErrorNorms:
    l2_v: float
    h1_v: float
    l2_p: float


def error_norms(disc: Discretization, v, p, problem: ProblemSpec, t: float) -> ErrorNorms:
    """L2 and broken H1 velocity errors and L2 pressure error.

    When the pressure is only defined up to a constant both discrete and
    exact pressures are compared with their means removed.
    """
    vs, ps = disc.vspace, disc.pspace
    x = vs.quad_points
    nel, nq, d = x.shape
    flat = x.reshape(-1, d)
    w = vs.quad.weights
    vol = disc.mesh.volume

    ve = np.asarray(problem.velocity(flat, t)).reshape(nel, nq, d).transpose(0, 2, 1)
    dv = vs.values(v) - ve
    l2_v = np.sqrt(np.einsum("ecq,q,e->", dv**2, w, vol))

    ge = complex_step_gradient(problem.velocity, flat, t).reshape(nel, nq, d, d).transpose(0, 2, 3, 1)
    dg = vs.gradients(v) - ge
    h1_v = np.sqrt(np.einsum("eckq,q,e->", dg**2, w, vol))

    pe = np.asarray(problem.pressure(flat, t)).reshape(nel, nq)
    ph = ps.values(p)[:, 0]
    if disc.pressure_has_nullspace:
        omega = vol.sum()
        pe = pe - np.einsum("eq,q,e->", pe, w, vol) / omega
        ph = ph - np.einsum("eq,q,e->", ph, w, vol) / omega
    l2_p = np.sqrt(np.einsum("eq,q,e->", (ph - pe) ** 2, w, vol))
    return ErrorNorms(float(l2_v), float(h1_v), float(l2_p))


@dataclass
class FlowDiagnostics:
    kinetic_energy: float
    dissipation: float
    enstrophy: float


def curl(grad: np.ndarray) -> np.ndarray:
    """Vorticity from a velocity gradient array (..., d, d, nq): returns (..., 3 or 1, nq)."""
    if grad.shape[-3] == 2:
        return (grad[..., 1, 0, :] - grad[..., 0, 1, :])[..., None, :]
    return np.stack([grad[..., 2, 1, :] - grad[..., 1, 2, :],
                     grad[..., 0, 2, :] - grad[..., 2, 0, :],
                     grad[..., 1, 0, :] - grad[..., 0, 1, :]], axis=-2)


def diagnostics(disc: Discretization, v, rho: float = 1.0, nu: float = 1.0) -> FlowDiagnostics:
    """Kinetic energy, dissipation rate and enstrophy, volume normalised."""
    vs = disc.vspace
    w = vs.quad.weights
    vol = disc.mesh.volume
    omega = vol.sum()
    vals = vs.values(v)
    grads = vs.gradients(v)
    ek = 0.5 * np.einsum("ecq,q,e->", vals**2, w, vol) / (rho * omega)
    eps = nu * np.einsum("eckq,q,e->", grads**2, w, vol) / omega
    vort = curl(grads)
    ens = 0.5 * np.einsum("ecq,q,e->", vort**2, w, vol) / (rho * omega)
    return FlowDiagnostics(float(ek), float(eps), float(ens))
