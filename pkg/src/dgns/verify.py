"""Fast property suite behind ``dgns verify``.

Every check builds a small discretisation, compares two independent
evaluations and reports the discrepancy against a tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .basis import multi_indices
from .convection import ConvectionOperator, flux_closed_form, flux_general_beta, flux_upwind
from .forms import DGSpace, Discretization, PenaltyConfig, assemble_a_scalar, assemble_b, assemble_b_alt
from .mesh import all_tagged, build_mesh
from .problems import PROBLEMS, boundary_flux, complex_step_gradient, get_problem, pde_residual
from .projection import ProjectionConfig, Projector, face_jump_moments, local_mass_residual


@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool
    seconds: float = 0.0

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.name:<46} {self.value:10.3e}  (tol {self.tol:.0e}, {self.seconds:.1f}s)"


def _boundary(x, t):
    cols = [np.sin(x[:, 1] + 0.3 + t), 0.5 * np.cos(x[:, 0])]
    if x.shape[1] == 3:
        cols.append(x[:, 0] * x[:, 1])
    return np.stack(cols, axis=1)


def layouts(dim: int) -> dict:
    """The three boundary layouts used throughout the checks."""
    mixed = all_tagged(dim)
    mixed["xmin"] = "neumann"
    return {"dirichlet": dict(boundary_tags=all_tagged(dim)),
            "mixed": dict(boundary_tags=mixed),
            "periodic": dict(periodic=(True,) * dim, boundary_tags={})}


def unit_mesh(dims, layout: str = "dirichlet"):
    d = len(dims)
    return build_mesh(dims, (0.0,) * d, (1.0,) * d, **layouts(d)[layout])


# ----------------------------------------------------------------------
# individual checks; each returns the measured discrepancy


def flux_beta0_matches_upwind(rng, n: int = 10_000) -> float:
    worst = 0.0
    for _ in range(n):
        d = int(rng.integers(2, 4))
        vi, ve = rng.standard_normal(d), rng.standard_normal(d)
        nrm = np.zeros(d)
        nrm[rng.integers(d)] = rng.choice([-1.0, 1.0])
        if abs(0.5 * (vi + ve) @ nrm) < 1e-8:
            continue
        diff = flux_general_beta(vi, ve, nrm, 0.0) - flux_upwind(vi, ve, nrm)
        worst = max(worst, float(np.abs(diff).max()))
    return worst


def flux_closed_form_matches(rng, betas=(0.25, 0.5, 1.0), n: int = 2000) -> float:
    worst = 0.0
    for beta in betas:
        for _ in range(n):
            d = int(rng.integers(2, 4))
            vi, ve = rng.standard_normal(d), rng.standard_normal(d)
            nrm = rng.standard_normal(d)
            nrm /= np.linalg.norm(nrm)
            if abs(0.5 * (vi + ve) @ nrm) < 1e-6:
                continue
            ref = flux_general_beta(vi, ve, nrm, beta)
            diff = flux_closed_form(vi, ve, nrm, beta) - ref
            worst = max(worst, float(np.abs(diff).max() / max(1.0, np.abs(ref).max())))
    return worst


def b_equals_b_alt() -> float:
    worst = 0.0
    for dims in ((3, 4), (2, 2, 2)):
        for layout in layouts(len(dims)):
            mesh = unit_mesh(dims, layout)
            for p in (1, 2, 3):
                vs = DGSpace(mesh, p, mesh.dim)
                ps = DGSpace(mesh, p - 1, 1, vs.quad)
                B, Balt = assemble_b(vs, ps).toarray(), assemble_b_alt(vs, ps).toarray()
                worst = max(worst, float(np.abs(B - Balt).max() / np.abs(B).max()))
    return worst


def sipg_symmetric_positive() -> tuple[float, float]:
    """Largest relative asymmetry and smallest eigenvalue on 4x4 meshes, p = 1..3, alpha = 4."""
    asym, lam = 0.0, np.inf
    for layout in ("dirichlet", "mixed"):
        mesh = unit_mesh((4, 4), layout)
        for p in (1, 2, 3):
            A = assemble_a_scalar(DGSpace(mesh, p, 1), PenaltyConfig(alpha=4.0)).toarray()
            asym = max(asym, float(np.abs(A - A.T).max() / np.abs(A).max()))
            lam = min(lam, float(np.linalg.eigvalsh(0.5 * (A + A.T)).min()))
    return asym, lam


def rt_idempotence(rng, samples: int = 20) -> float:
    worst = 0.0
    for p in (2, 3):
        disc = Discretization(unit_mesh((8, 8)), p)
        proj = Projector(disc, ProjectionConfig("rt"))
        for _ in range(samples):
            w = rng.standard_normal(disc.vspace.ndofs)
            v = proj.project_rt(w, _boundary, 0.0).v
            v2 = proj.project_rt(v, _boundary, 0.0).v
            worst = max(worst, float(np.linalg.norm(v2 - v) / np.linalg.norm(w)))
    return worst


def reconstruction_divergence_residual(rng) -> float:
    """(div gamma, q chi_E) against the stabilised Poisson form of psi, every element and mode."""
    worst = 0.0
    for dims in ((4, 4), (2, 2, 2)):
        for layout in layouts(len(dims)):
            for p in (1, 2):
                disc = Discretization(unit_mesh(dims, layout), p)
                proj = Projector(disc, ProjectionConfig("rt"))
                psi = rng.standard_normal(disc.pspace.ndofs)
                rt = proj.rt_reconstruct(psi)
                lhs = proj.divergence_moments(rt.velocity)
                rhs = (disc.alpha @ psi).reshape(lhs.shape)
                worst = max(worst, float(np.abs(lhs - rhs).max() / np.abs(rhs).max()))
    return worst


def face_jump_divergence_residual(rng) -> float:
    worst = 0.0
    for dims in ((4, 4), (2, 2, 2)):
        for layout in layouts(len(dims)):
            for p in (1, 2):
                disc = Discretization(unit_mesh(dims, layout), p)
                proj = Projector(disc, ProjectionConfig("rt"))
                w = rng.standard_normal(disc.vspace.ndofs)
                v = proj.project_rt(w, _boundary, 0.0).v
                lhs = proj.divergence_moments(v)
                rhs = face_jump_moments(disc, w, _boundary, 0.0)
                worst = max(worst, float(np.abs(lhs - rhs).max() / max(np.abs(rhs).max(), 1e-300)))
    return worst


def rt_continuity_residual(rng, k_offset: int = 1) -> tuple[float, float]:
    """Continuity residual over all pressure modes and per-cell mass residual after project_rt."""
    cont = mass = 0.0
    for layout in ("dirichlet", "mixed", "periodic"):
        for p in (2, 3):
            disc = Discretization(unit_mesh((6, 6), layout), p)
            k = p - k_offset
            proj = Projector(disc, ProjectionConfig("rt", rt_degree=k))
            w = rng.standard_normal(disc.vspace.ndofs)
            v = proj.project_rt(w, _boundary, 0.3).v
            cont = max(cont, float(np.abs(proj.continuity_residual(v, _boundary, 0.3)).max()))
            mass = max(mass, float(np.abs(local_mass_residual(disc, v, _boundary, 0.3)).max()))
    return cont, mass


def convection_jacobian_fd(rng) -> float:
    worst = 0.0
    for dims in ((3, 3), (2, 2, 2)):
        for layout in layouts(len(dims)):
            space = DGSpace(unit_mesh(dims, layout), 2, len(dims))
            op = ConvectionOperator(space)
            v, dv = rng.standard_normal(space.ndofs), rng.standard_normal(space.ndofs)
            h = 1e-6
            fd = (op.residual(v + h * dv, _boundary, 0.0) - op.residual(v - h * dv, _boundary, 0.0)) / (2 * h)
            J = op.jacobian(v, _boundary, 0.0) @ dv
            worst = max(worst, float(np.abs(J - fd).max() / np.abs(fd).max()))
    return worst


def exact_fields_divergence_free(rng, n: int = 200) -> float:
    worst = 0.0
    for name in PROBLEMS:
        pb = get_problem(name)
        fn = pb.velocity or pb.initial_velocity
        if fn is None:
            continue
        lo, hi = np.asarray(pb.origin), np.asarray(pb.upper)
        x = lo + (hi - lo) * rng.random((n, pb.dim))
        t = 0.37
        grad = complex_step_gradient(fn, x, t)
        worst = max(worst, float(np.abs(np.trace(grad, axis1=1, axis2=2)).max()))
    return worst


def manufactured_residual(rng, n: int = 50) -> float:
    worst = 0.0
    for name in PROBLEMS:
        pb = get_problem(name)
        if not pb.has_exact:
            continue
        lo, hi = np.asarray(pb.origin), np.asarray(pb.upper)
        x = lo + (hi - lo) * rng.random((n, pb.dim))
        for t in (0.0, 0.41):
            worst = max(worst, float(np.abs(pde_residual(pb, x, t)).max()))
    return worst


def dirichlet_compatibility() -> float:
    worst = 0.0
    for name in PROBLEMS:
        pb = get_problem(name)
        if pb.has_exact and all(tag == "dirichlet" for tag in pb.boundary_tags.values()) and pb.boundary_tags:
            worst = max(worst, abs(boundary_flux(pb)))
    return worst


# ----------------------------------------------------------------------


def run_checks(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []

    def record(name, fn, tol, lower=False):
        start = time.perf_counter()
        value = fn()
        passed = value >= tol if lower else value <= tol
        out.append(Check(name, float(value), tol, bool(passed), time.perf_counter() - start))

    record("flux: beta=0 eigen form equals upwind", lambda: flux_beta0_matches_upwind(rng), 1e-12)
    record("flux: closed form for beta in {0.25,0.5,1}", lambda: flux_closed_form_matches(rng), 1e-12)
    record("forms: B equals B_alt on all layouts", b_equals_b_alt, 1e-12)
    sym = sipg_symmetric_positive()
    out.append(Check("forms: SIPG symmetry", sym[0], 1e-12, sym[0] <= 1e-12))
    out.append(Check("forms: SIPG smallest eigenvalue > 0", sym[1], 0.0, sym[1] > 0.0))
    record("convection: Jacobian against differences", lambda: convection_jacobian_fd(rng), 1e-7)
    record("projection: RT idempotence", lambda: rt_idempotence(rng, 5), 1e-10)
    record("projection: reconstruction divergence", lambda: reconstruction_divergence_residual(rng), 1e-10)
    record("projection: face jump divergence", lambda: face_jump_divergence_residual(rng), 1e-10)
    cont, mass = rt_continuity_residual(rng)
    out.append(Check("projection: RT continuity residual (k=p-1)", cont, 1e-10, cont <= 1e-10))
    out.append(Check("projection: RT per-cell mass residual (k=p-1)", mass, 1e-10, mass <= 1e-10))
    record("problems: exact velocities divergence free", lambda: exact_fields_divergence_free(rng), 1e-12)
    record("problems: manufactured PDE residual", lambda: manufactured_residual(rng), 1e-10)
    record("problems: Dirichlet compatibility", dirichlet_compatibility, 1e-12)
    return out


__all__ = ["Check", "run_checks", "layouts", "unit_mesh"]
