"""Incremental pressure-correction schemes (standard and rotational).

One macro step:

1. momentum solve for a tentative velocity w with the explicit pressure p*,
   by implicit Euler or Alexander's two-stage SDIRK (p* frozen over both
   stages);
2. projection of w, giving v^{k+1} and psi with delta p = rho psi / dt;
3. pressure update, additive (IPCS) or rotational (RIPCS):
   p^{k+1} = omega delta p + p* + mu M_p^{-1} (B w - r).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .convection import ConvectionOperator
from .forms import Discretization, FluidParams, PenaltyConfig
from .problems import ProblemSpec, diagnostics, error_norms
from .projection import ProjectionConfig, Projector, local_mass_residual
from .solvers import (BlockSparseMatrix, NewtonConfig, SolverConfig, SolverError, linear_solve,
                      make_preconditioner, newton_solve)

log = logging.getLogger(__name__)

SDIRK_GAMMA = 1.0 - math.sqrt(2.0) / 2.0
SCHEMES = ("ipcs", "ripcs")
STEPPERS = ("implicit_euler", "sdirk2")


@dataclass
class SchemeConfig:
    scheme: str = "ripcs"
    stepper: str = "sdirk2"
    dt: float = 0.025
    T: float = 1.0
    omega: float | None = None  # None: 1 for implicit Euler, 3/2 for SDIRK2
    pstar: str = "constant_extrapolation"  # or "zero" (Chorin)
    divergence_correction: bool = True  # rotational term of RIPCS
    jacobian: str = "assembled"  # or "matrix_free"
    linear: SolverConfig = field(default_factory=lambda: SolverConfig(method="gmres", preconditioner="block_sor",
                                                                      rtol=1e-10, maxiter=500))
    # the Stokes momentum operator is SPD: CG with a multigrid V-cycle
    stokes_linear: SolverConfig = field(default_factory=lambda: SolverConfig(method="cg", preconditioner="multigrid",
                                                                             rtol=1e-10, maxiter=500))
    newton: NewtonConfig = field(default_factory=NewtonConfig)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.stepper not in STEPPERS:
            raise ValueError(f"unknown stepper {self.stepper!r}")
        if self.pstar not in ("zero", "constant_extrapolation"):
            raise ValueError(f"unknown p* policy {self.pstar!r}")
        if self.jacobian not in ("assembled", "matrix_free"):
            raise ValueError(f"unknown jacobian mode {self.jacobian!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T > 0:
            raise ValueError("final time must be positive")

    @property
    def default_omega(self) -> float:
        return 1.0 if self.stepper == "implicit_euler" else 1.5

    @property
    def omega_value(self) -> float:
        return self.default_omega if self.omega is None else self.omega

    @property
    def n_steps(self) -> int:
        n = int(round(self.T / self.dt))
        if n < 1 or abs(n * self.dt - self.T) > 1e-9 * max(self.T, 1.0):
            raise ValueError(f"final time {self.T} is not a multiple of dt {self.dt}")
        return n


@dataclass(frozen=True)
class FlowState:
    v: np.ndarray
    p: np.ndarray
    t: float
    k: int = 0
    v_prev: np.ndarray | None = None  # previous velocity, only used to extrapolate solver guesses


@dataclass
class StepInfo:
    newton_iterations: int = 0
    linear_iterations: int = 0
    poisson_iterations: int = 0
    continuity_residual: float = 0.0


class FlowSolver:
    """Binds a discretization, a problem and the scheme settings."""

    def __init__(self, disc: Discretization, problem: ProblemSpec, scheme: SchemeConfig,
                 projection: ProjectionConfig | None = None):
        self.disc = disc
        self.problem = problem
        self.scheme = scheme
        self.projector = Projector(disc, projection or ProjectionConfig())
        self.rho = problem.rho
        self.mu = problem.mu
        self.conv = ConvectionOperator(disc.vspace) if problem.navier_stokes else None
        self._stage_mats = {}
        self.last_info = StepInfo()

    # building blocks ----------------------------------------------------
    @property
    def mass(self) -> BlockSparseMatrix:
        return self.disc.M

    def load(self, t: float) -> np.ndarray:
        """(f, phi) plus mu times the weak Dirichlet terms of the data."""
        disc, pb = self.disc, self.problem
        out = disc.l(pb.source, None, t) if pb.source is not None else np.zeros(disc.vspace.ndofs)
        if len(disc.mesh.dirichlet_faces):
            out = out + self.mu * disc.l(None, pb.g, t)
        return out

    def spatial_operator(self, v, t: float, pstar) -> np.ndarray:
        """F(v) = l(t) - mu A v - rho c(v; v) - B^T p*  (so rho M dv/dt = F)."""
        disc = self.disc
        out = self.load(t) - self.mu * (disc.A @ v) - disc.BT @ pstar
        if self.conv is not None:
            out -= self.rho * self.conv.residual(v, self.problem.g, t)
        return out

    def _stage_matrix(self, a: float) -> BlockSparseMatrix:
        key = ("K", round(a, 15))
        if key not in self._stage_mats:
            self._stage_mats[key] = self.mass * self.rho + self.disc.A * (a * self.mu)
        return self._stage_mats[key]

    def _stokes_stage_solve(self, rhs, a: float, guess) -> tuple[np.ndarray, int]:
        """The Stokes stage operator acts on each velocity component alike."""
        disc, rho, mu = self.disc, self.rho, self.mu
        lin = self.scheme.stokes_linear
        key = ("Ks", round(a, 15))
        if key not in self._stage_mats:
            Ks = disc.M_scalar * rho + disc.A_scalar * (a * mu)

            def operator_on(mesh):
                coarse = disc.on_mesh(mesh)
                return coarse.M_scalar * rho + coarse.A_scalar * (a * mu)

            prec = make_preconditioner(Ks, lin.preconditioner, lin.relaxation, space=disc.scalar_vspace,
                                       operator_on=operator_on)
            self._stage_mats[key] = (Ks, prec)
        Ks, prec = self._stage_mats[key]
        b = disc.vspace.as_array(rhs)
        x0 = disc.vspace.as_array(guess)
        x = np.empty_like(b)
        its = 0
        for c in range(b.shape[1]):
            xc, st = linear_solve(Ks, b[:, c].ravel(), lin, precond=prec, x0=x0[:, c].ravel())
            x[:, c] = xc.reshape(len(b), -1)
            its += st.iterations
        return x.ravel(), its

    def _stage_solve(self, z, a: float, t: float, pstar, guess) -> tuple[np.ndarray, int, int]:
        """Solve rho M V - a F(V, t) = z for V."""
        lin = self.scheme.linear
        rhs_fixed = z + a * (self.load(t) - self.disc.BT @ pstar)
        if self.conv is None:
            x, its = self._stokes_stage_solve(rhs_fixed, a, guess)
            return x, 0, its

        K = self._stage_matrix(a)
        g = self.problem.g
        rho = self.rho
        conv = self.conv

        def residual(V):
            return K @ V + (a * rho) * conv.residual(V, g, t) - rhs_fixed

        # one block-SOR preconditioner per stage, built from the Jacobian at the guess
        J0 = conv.jacobian(guess, g, t).scale_add(a * rho, K)
        prec = make_preconditioner(J0, lin.preconditioner, lin.relaxation)
        first = [True]  # the first Newton step linearises at the guess

        def jac_solve(V, r, eta):
            cfg = replace(lin, rtol=eta)
            if self.scheme.jacobian == "assembled":
                J = J0 if first[0] else conv.jacobian(V, g, t).scale_add(a * rho, K)
                first[0] = False
                return linear_solve(J, r, cfg, precond=prec)

            def op(dv):
                return K @ dv + (a * rho) * conv.apply_jacobian(V, dv, g, t)

            return linear_solve(op, r, cfg, precond=prec)

        x, st = newton_solve(residual, jac_solve, guess, self.scheme.newton)
        return x, st.iterations, int(sum(st.linear_iterations))

    # scheme -------------------------------------------------------------
    def momentum_solve(self, state: FlowState, pstar, dt: float) -> tuple[np.ndarray, StepInfo]:
        info = StepInfo()
        rho = self.rho
        Mv = self.disc.mass_v(state.v) * rho
        t0 = state.t
        if self.scheme.stepper == "implicit_euler":
            guess = state.v if state.v_prev is None else 2.0 * state.v - state.v_prev
            w, nit, lit = self._stage_solve(Mv, dt, t0 + dt, pstar, guess)
            info.newton_iterations, info.linear_iterations = nit, lit
            return w, info
        gam = SDIRK_GAMMA
        a = gam * dt
        guess = state.v if state.v_prev is None else state.v + gam * (state.v - state.v_prev)
        V1, n1, l1 = self._stage_solve(Mv, a, t0 + a, pstar, guess)
        F1 = (self.disc.mass_v(V1) * rho - Mv) / a
        z2 = Mv + (1.0 - gam) * dt * F1
        # linear extrapolation through v and V1 to the end of the step
        V2, n2, l2 = self._stage_solve(z2, a, t0 + dt, pstar, V1 + (V1 - state.v) * ((1.0 - gam) / gam))
        info.newton_iterations, info.linear_iterations = n1 + n2, l1 + l2
        return V2, info

    def pstar(self, state: FlowState) -> np.ndarray:
        if self.scheme.pstar == "zero":
            return np.zeros_like(state.p)
        return state.p

    def step(self, state: FlowState, dt: float | None = None) -> FlowState:
        dt = self.scheme.dt if dt is None else dt
        disc = self.disc
        pstar = self.pstar(state)
        w, info = self.momentum_solve(state, pstar, dt)
        t1 = state.t + dt
        g = self.problem.g
        res = self.projector.project(w, g, t1)
        info.poisson_iterations = res.correction.stats.iterations
        dp = self.rho * res.correction.psi / dt
        if self.scheme.scheme == "ipcs":
            p = pstar + dp
        else:
            p = pstar + self.scheme.omega_value * dp
            if self.scheme.divergence_correction:
                div = disc.B @ w - disc.r(g, t1)
                p = p + self.mu * disc.mass_p_inv(div)
        p = disc.remove_pressure_mean(p)
        info.continuity_residual = float(np.abs(disc.B @ res.v - disc.r(g, t1)).max())
        self.last_info = info
        return FlowState(res.v, p, t1, state.k + 1, v_prev=state.v)

    def ipcs_step(self, state: FlowState, dt: float | None = None) -> FlowState:
        return self._with_scheme("ipcs").step(state, dt)

    def ripcs_step(self, state: FlowState, dt: float | None = None) -> FlowState:
        return self._with_scheme("ripcs").step(state, dt)

    def _with_scheme(self, name: str) -> "FlowSolver":
        if self.scheme.scheme == name:
            return self
        other = object.__new__(FlowSolver)
        other.__dict__.update(self.__dict__)
        other.scheme = replace(self.scheme, scheme=name)
        return other

    # initial state -------------------------------------------------------
    def initial_state(self) -> FlowState:
        disc, pb = self.disc, self.problem
        v = disc.vspace.project(pb.v0, 0.0).ravel()
        if pb.p0 is not None:
            p = disc.pspace.project(lambda x, t: pb.p0(x, t)[:, None], 0.0).ravel()
        else:
            corr = self.projector.solve_pressure_poisson(v, pb.g, 0.0)
            p = corr.psi
        return FlowState(v, disc.remove_pressure_mean(p), 0.0, 0)


@dataclass
class SimulationResult:
    state: FlowState
    rows: list
    failed: bool = False
    error: str = ""
    elapsed: float = 0.0

    @property
    def final_errors(self):
        return self.rows[-1].get("errors") if self.rows else None


def run_simulation(disc: Discretization, problem: ProblemSpec, scheme: SchemeConfig,
                   projection: ProjectionConfig | None = None, errors_every: int = 0,
                   callback=None, keep_states: bool = False) -> SimulationResult:
    """Advance from t = 0 to T and collect one diagnostic row per step.

    ``errors_every`` > 0 evaluates error norms every that many steps (and
    always at the end) when an exact solution is available.  On a solver
    failure the last valid state is returned with ``failed`` set.
    """
    solver = FlowSolver(disc, problem, scheme, projection)
    state = solver.initial_state()
    n = scheme.n_steps
    rows = []
    states = [state] if keep_states else None
    start = time.perf_counter()
    for k in range(n):
        try:
            new = solver.step(state)
        except (SolverError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("step %d failed: %s", k + 1, exc)
            return SimulationResult(state, rows, True, str(exc), time.perf_counter() - start)
        if not np.all(np.isfinite(new.v)):
            return SimulationResult(state, rows, True, "non-finite velocity", time.perf_counter() - start)
        state = new
        info = solver.last_info
        diag = diagnostics(disc, state.v, problem.rho, problem.nu)
        mass = local_mass_residual(disc, state.v, problem.g, state.t)
        row = dict(step=state.k, t=state.t, kinetic_energy=diag.kinetic_energy,
                   dissipation=diag.dissipation, enstrophy=diag.enstrophy,
                   mass_residual_max=float(np.abs(mass).max()),
                   continuity_residual=info.continuity_residual,
                   newton_iterations=info.newton_iterations,
                   linear_iterations=info.linear_iterations,
                   poisson_iterations=info.poisson_iterations)
        last = k == n - 1
        if problem.has_exact and (last or (errors_every and state.k % errors_every == 0)):
            row["errors"] = error_norms(disc, state.v, state.p, problem, state.t)
        rows.append(row)
        if keep_states:
            states.append(state)
        if callback is not None:
            callback(state, row)
    res = SimulationResult(state, rows, elapsed=time.perf_counter() - start)
    if keep_states:
        res.states = states
    return res


def make_discretization(problem: ProblemSpec, dims=None, degree: int = 2, alpha: float = 4.0,
                        quad_order: int | None = None) -> Discretization:
    mesh = problem.mesh(dims)
    return Discretization(mesh, degree, PenaltyConfig(alpha=alpha), FluidParams(problem.rho, problem.mu),
                          quad_order=quad_order)
