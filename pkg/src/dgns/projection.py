"""Discrete Helmholtz projections of a tentative DG velocity.

Three variants share the pressure-correction solve

    alpha(psi, q) = b(w, q) - r(q)   for all q in the pressure space

and differ in how the velocity is corrected:

* ``standard``: v = w - grad_h psi (diagonal mass solve);
* ``divdiv``:   element-local (v, phi) + tau (div v, div phi) = (w - grad psi, phi);
* ``rt``:       v = w + gamma where gamma is an H(div)-conforming
  Raviart-Thomas reconstruction of -grad psi computed element by element.
  The result satisfies b(v, q) = r(q) exactly for RT degree p - 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import legendre_1d, multi_indices
from .forms import Discretization
from .mesh import DIRICHLET, INTERIOR, NEUMANN
from .solvers import PRECONDITIONERS, SolverConfig, SolveStats, cg_solve, make_preconditioner

PROJECTORS = ("standard", "divdiv", "rt")


@dataclass
class ProjectionConfig:
    projector: str = "divdiv"
    tau_d: float | None = None  # None: 0.1 * h_max**2
    rt_degree: int | None = None  # None: p - 1
    rtol: float = 1e-12
    maxiter: int = 20000
    preconditioner: str = "multigrid"  # for the pressure Poisson CG

    def __post_init__(self):
        if self.projector not in PROJECTORS:
            raise ValueError(f"unknown projector {self.projector!r}; choose from {PROJECTORS}")
        if self.tau_d is not None and self.tau_d < 0:
            raise ValueError("tau_d must be nonnegative")
        if self.rt_degree is not None and self.rt_degree < 0:
            raise ValueError("rt_degree must be nonnegative")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class PressureCorrection:
    psi: np.ndarray
    stats: SolveStats = field(default_factory=SolveStats)

    def increment(self, dt: float) -> np.ndarray:
        return self.psi / dt


@dataclass
class RTField:
    """Raviart-Thomas reconstruction of degree ``k``.

    ``face_moments[f]`` holds the normal-flux moments against the
    tangential Legendre modes, taken with respect to the stored face normal,
    so both neighbours read the same values.  ``interior_moments[e, i]``
    are the reference moments against the Psi space for component ``i``
    (empty when k = 0).  ``coeffs[e, i]`` are reference coefficients of
    component ``i`` on the tensor Legendre basis of degree (k + 1) along
    axis ``i`` and k along the others.
    """

    degree: int
    face_moments: np.ndarray
    interior_moments: np.ndarray
    coeffs: np.ndarray
    velocity: np.ndarray  # the same field as coefficients of the velocity space


@dataclass
class ProjectionResult:
    v: np.ndarray
    correction: PressureCorrection
    rt: RTField | None = None


class Projector:
    """Pressure-correction solve plus the chosen velocity update."""

    def __init__(self, disc: Discretization, config: ProjectionConfig | None = None):
        self.disc = disc
        self.config = config or ProjectionConfig()
        self.mesh = disc.mesh
        p = disc.degree
        k = self.config.rt_degree
        if k is None:
            k = p - 1
        if self.config.projector == "rt" and not 0 <= k <= p - 1:
            raise ValueError(f"RT degree must lie in [0, {p - 1}], got {k}")
        self.rt_degree = k
        if self.config.tau_d is None:
            self.tau_d = 0.1 * float(self.mesh.h.max()) ** 2
        else:
            self.tau_d = self.config.tau_d
        self._precond = None
        self._divdiv_cache = None
        self._nullspace = disc.pspace.constant_vector() if disc.pressure_has_nullspace else None
        self.last_stats = None

    # pressure correction ------------------------------------------------
    def solve_pressure_poisson(self, w, g=None, t: float = 0.0, rhs=None) -> PressureCorrection:
        disc = self.disc
        if rhs is None:
            rhs = disc.B @ np.asarray(w) - disc.r(g, t)
        kind = self.config.preconditioner
        if self._precond is None:
            self._precond = make_preconditioner(disc.alpha, kind, space=disc.pspace,
                                                operator_on=lambda mesh: disc.on_mesh(mesh).alpha)
        cfg = SolverConfig(method="cg", preconditioner=kind, rtol=self.config.rtol,
                           maxiter=self.config.maxiter,
                           deflate_constants=self._nullspace is not None)
        scale = max(float(np.linalg.norm(rhs)), 0.0)
        if scale == 0.0:
            return PressureCorrection(np.zeros(disc.pspace.ndofs), SolveStats())
        psi, stats = cg_solve(disc.alpha, rhs, cfg, precond=self._precond, nullspace=self._nullspace)
        psi = disc.remove_pressure_mean(psi)
        self.last_stats = stats
        return PressureCorrection(psi, stats)

    # velocity updates ---------------------------------------------------
    def gradient_coeffs(self, psi) -> np.ndarray:
        """Coefficients of the broken gradient of ``psi`` in the velocity space."""
        disc = self.disc
        vs, ps = disc.vspace, disc.pspace
        grads = ps.gradients(psi)[:, 0]  # (nel, d, nq)
        return np.einsum("ekq,q,mq->ekm", grads, vs.quad.weights, vs.V).ravel()

    def project_standard(self, w, g=None, t: float = 0.0) -> ProjectionResult:
        corr = self.solve_pressure_poisson(w, g, t)
        disc = self.disc
        rhs = disc.mass_v(w) - disc.mass_v(self.gradient_coeffs(corr.psi))
        return ProjectionResult(disc.mass_v_inv(rhs), corr)

    def _divdiv_inverse(self):
        if self._divdiv_cache is None:
            vs = self.disc.vspace
            mesh = self.mesh
            d, nm = mesh.dim, vs.nm
            hs, inverse = np.unique(mesh.h, axis=0, return_inverse=True)
            w = vs.quad.weights
            mats = []
            for h in hs:
                vol = np.prod(h)
                Gp = vs.G / h[:, None, None]  # physical reference-scaled derivatives
                K = vol * np.einsum("cmq,q,anq->cman", Gp, w, Gp).reshape(d * nm, d * nm)
                M = vol * np.eye(d * nm) + self.tau_d * K
                mats.append(np.linalg.inv(M))
            self._divdiv_cache = (np.array(mats), inverse.ravel())
        return self._divdiv_cache

    def project_divdiv(self, w, g=None, t: float = 0.0, tau_d: float | None = None) -> ProjectionResult:
        corr = self.solve_pressure_poisson(w, g, t)
        disc = self.disc
        rhs = disc.mass_v(w) - disc.mass_v(self.gradient_coeffs(corr.psi))
        if tau_d is not None and tau_d != self.tau_d:
            self.tau_d, self._divdiv_cache = tau_d, None
        inv, group = self._divdiv_inverse()
        rb = rhs.reshape(self.mesh.n_elements, -1)
        v = np.einsum("eij,ej->ei", inv[group], rb)
        return ProjectionResult(v.ravel(), corr)

    def project_rt(self, w, g=None, t: float = 0.0, k: int | None = None) -> ProjectionResult:
        corr = self.solve_pressure_poisson(w, g, t)
        rt = self.rt_reconstruct(corr.psi, k)
        return ProjectionResult(np.asarray(w) + rt.velocity, corr, rt)

    def project(self, w, g=None, t: float = 0.0) -> ProjectionResult:
        kind = self.config.projector
        if kind == "standard":
            return self.project_standard(w, g, t)
        if kind == "divdiv":
            return self.project_divdiv(w, g, t)
        return self.project_rt(w, g, t)

    # RT reconstruction --------------------------------------------------
    def rt_reconstruct(self, psi, k: int | None = None) -> RTField:
        """H(div) reconstruction of -grad psi in RT_k, element by element."""
        k = self.rt_degree if k is None else k
        disc = self.disc
        mesh = self.mesh
        ps = disc.pspace
        d = mesh.dim
        if not 0 <= k <= disc.degree - 1:
            raise ValueError("RT degree must lie in [0, p-1]")
        sigma = disc.sigma
        c = ps.as_array(psi)[:, 0]  # (nel, nm)
        wf = ps.quad.face_weights
        tan_idx = multi_indices(k, d - 1)  # tangential modes of Q_k on a face
        ntan = len(tan_idx)

        def tangential_table(axis, side):
            pts = ps.quad.face_points(axis, side)
            others = [j for j in range(d) if j != axis]
            tab = np.ones((ntan, len(pts)))
            for jj, j in enumerate(others):
                tab *= legendre_1d(k, pts[:, j])[tan_idx[:, jj]]
            return tab

        tables = {(a, s): tangential_table(a, s) for a in range(d) for s in (0, 1)}

        # face moments with respect to the stored normal
        face_mom = np.zeros((mesh.n_faces, ntan))
        for a in range(d):
            for s in (0, 1):
                sel = np.flatnonzero((mesh.face_axis == a) & (mesh.face_side == s))
                if not len(sel):
                    continue
                kind = mesh.face_kind[sel]
                e_in = mesh.face_inside[sel]
                psi_in = c[e_in] @ ps.fT[a][s]
                dpsi_in = (c[e_in] @ ps.fG[a][s]) / mesh.h[e_in, a][:, None]
                pen = (sigma / mesh.face_h_e[sel])[:, None]
                vals = np.zeros_like(psi_in)
                itf = kind == INTERIOR
                if itf.any():
                    e_out = mesh.face_outside[sel[itf]]
                    psi_out = c[e_out] @ ps.fT[a][0]
                    dpsi_out = (c[e_out] @ ps.fG[a][0]) / mesh.h[e_out, a][:, None]
                    vals[itf] = -0.5 * (dpsi_in[itf] + dpsi_out) + pen[itf] * (psi_in[itf] - psi_out)
                neu = kind == NEUMANN
                if neu.any():
                    sg = mesh.face_sign[sel[neu]][:, None]
                    vals[neu] = -sg * dpsi_in[neu] + pen[neu] * psi_in[neu]
                # Dirichlet faces keep zero flux
                face_mom[sel] = mesh.face_measure[sel][:, None] * np.einsum("fq,q,tq->ft", vals, wf, tables[a, s])

        # interior moments against Psi_E^k, reference scaling
        nint = k * ntan
        int_mom = np.zeros((mesh.n_elements, d, nint))
        if k > 0:
            w = ps.quad.weights
            pts = ps.quad.points
            for i in range(d):
                others = [j for j in range(d) if j != i]
                # r_hat = L_j(x_i) L_beta(x_tan), j < k
                ri = legendre_1d(k - 1, pts[:, i])  # (k, nq)
                rt_tab = np.ones((ntan, len(pts)))
                for jj, j in enumerate(others):
                    rt_tab *= legendre_1d(k, pts[:, j])[tan_idx[:, jj]]
                rhat = (ri[:, None, :] * rt_tab[None, :, :]).reshape(nint, len(pts))
                dpsi_ref = c @ ps.G[i]  # reference derivative at volume points (nel, nq)
                rhs = -np.einsum("eq,q,rq->er", dpsi_ref, w, rhat)
                # face terms: (r.n_e, [psi]) / 2 on interior faces, (r.n, psi) on outflow faces
                sel = np.flatnonzero(mesh.face_axis == i)
                fpts = ps.quad.face_points(i, 0)
                tt = np.ones((ntan, len(fpts)))
                for jj, j in enumerate(others):
                    tt *= legendre_1d(k, fpts[:, j])[tan_idx[:, jj]]
                g_end = legendre_1d(k - 1, np.array([0.0, 1.0]))  # (k, 2)
                f_i = sel[mesh.face_kind[sel] == INTERIOR]
                if len(f_i):
                    jump = c[mesh.face_inside[f_i]] @ ps.fT[i][1] - c[mesh.face_outside[f_i]] @ ps.fT[i][0]
                    jm = 0.5 * np.einsum("fq,q,tq->ft", jump, wf, tt)
                    # inside element sees the face at xi_i = 1, outside at xi_i = 0
                    np.add.at(rhs, mesh.face_inside[f_i], np.einsum("j,ft->fjt", g_end[:, 1], jm).reshape(len(f_i), nint))
                    np.add.at(rhs, mesh.face_outside[f_i], np.einsum("j,ft->fjt", g_end[:, 0], jm).reshape(len(f_i), nint))
                f_n = sel[mesh.face_kind[sel] == NEUMANN]
                for s in (0, 1):
                    fs = f_n[mesh.face_side[f_n] == s]
                    if not len(fs):
                        continue
                    sg = mesh.face_sign[fs][:, None].astype(float)
                    vals = c[mesh.face_inside[fs]] @ ps.fT[i][s]
                    tm = sg * np.einsum("fq,q,tq->ft", vals, wf, tt)
                    np.add.at(rhs, mesh.face_inside[fs], np.einsum("j,ft->fjt", g_end[:, s], tm).reshape(len(fs), nint))
                int_mom[:, i] = rhs * (mesh.volume / mesh.h[:, i] ** 2)[:, None]

        coeffs = self._solve_rt_local(k, face_mom, int_mom, ntan)
        velocity = self._rt_to_velocity(k, coeffs, tan_idx)
        return RTField(k, face_mom, int_mom, coeffs, velocity)

    def _solve_rt_local(self, k, face_mom, int_mom, ntan):
        """Recover reference coefficients per element and component.

        Along axis ``i`` the basis is L_0..L_{k+1}; the interior moments fix
        the first k coefficients, the two face moments the last two.
        """
        mesh = self.mesh
        d = mesh.dim
        nel = mesh.n_elements
        coeffs = np.zeros((nel, d, k + 2, ntan))
        Lend = legendre_1d(k + 1, np.array([0.0, 1.0]))  # (k+2, 2)
        A2 = np.array([[Lend[k, 0], Lend[k + 1, 0]], [Lend[k, 1], Lend[k + 1, 1]]])
        A2inv = np.linalg.inv(A2)
        for i in range(d):
            m0 = np.zeros((nel, ntan))
            m1 = np.zeros((nel, ntan))
            sel = np.flatnonzero(mesh.face_axis == i)
            # reference flux is along +e_i; boundary moments are stored for the outward normal
            mom = face_mom[sel] * mesh.face_sign[sel][:, None]
            low = mesh.face_side[sel] == 0
            m0[mesh.face_inside[sel[low]]] = mom[low]
            m1[mesh.face_inside[sel[~low]]] = mom[~low]
            itf = sel[mesh.face_kind[sel] == INTERIOR]
            m0[mesh.face_outside[itf]] = face_mom[itf]
            if k > 0:
                coeffs[:, i, :k, :] = int_mom[:, i].reshape(nel, k, ntan)
            known = np.einsum("ejt,j->et", coeffs[:, i, :k, :], Lend[:k, 0]), \
                np.einsum("ejt,j->et", coeffs[:, i, :k, :], Lend[:k, 1])
            rhs = np.stack([m0 - known[0], m1 - known[1]], axis=1)  # (nel, 2, ntan)
            coeffs[:, i, k:, :] = np.einsum("ab,ebt->eat", A2inv, rhs)
        return coeffs

    def _rt_to_velocity(self, k, coeffs, tan_idx):
        """Velocity-space coefficients of the Piola-mapped RT field."""
        mesh = self.mesh
        vs = self.disc.vspace
        d = mesh.dim
        out = np.zeros(vs.shape())
        strides = (vs.degree + 1) ** np.arange(d)
        for i in range(d):
            others = [j for j in range(d) if j != i]
            face_meas = mesh.volume / mesh.h[:, i]
            for a in range(k + 2):
                for t, beta in enumerate(tan_idx):
                    idx = np.zeros(d, dtype=int)
                    idx[i] = a
                    idx[others] = beta
                    mode = int(idx @ strides)
                    out[:, i, mode] = coeffs[:, i, a, t] / face_meas
        return out.ravel()

    # diagnostics --------------------------------------------------------
    def continuity_residual(self, v, g=None, t: float = 0.0) -> np.ndarray:
        """b(v, q) - r(q) for every pressure basis function."""
        return self.disc.B @ np.asarray(v) - self.disc.r(g, t)

    def divergence_moments(self, v) -> np.ndarray:
        """(div v, q_m)_E per element and pressure mode, (nel, nm_p)."""
        disc = self.disc
        div = np.trace(disc.vspace.gradients(v), axis1=1, axis2=2)  # (nel, nq)
        return np.einsum("eq,q,mq,e->em", div, disc.vspace.quad.weights, disc.pspace.V, self.mesh.volume)


def local_mass_residual(disc: Discretization, v, g=None, t: float = 0.0) -> np.ndarray:
    """Per-element face flux balance of ``v``.

    Sum over interior faces of ({v}.n_E, 1), outflow faces of (v.n, 1) and
    Dirichlet faces of (g.n, 1), with n_E the outward normal of the element.
    """
    mesh = disc.mesh
    vs = disc.vspace
    c = vs.as_array(v)
    wf = vs.quad.face_weights
    out = np.zeros(mesh.n_elements)
    for a in range(mesh.dim):
        for s in (0, 1):
            sel = np.flatnonzero((mesh.face_axis == a) & (mesh.face_side == s))
            if not len(sel):
                continue
            kind = mesh.face_kind[sel]
            meas = mesh.face_measure[sel]
            sg = mesh.face_sign[sel].astype(float)
            e_in = mesh.face_inside[sel]
            vin = (c[e_in, a] @ vs.fT[a][s]) @ wf
            itf = kind == INTERIOR
            if itf.any():
                f_i = sel[itf]
                e_out = mesh.face_outside[f_i]
                vout = (c[e_out, a] @ vs.fT[a][0]) @ wf
                flux = 0.5 * (vin[itf] + vout) * meas[itf]
                np.add.at(out, e_in[itf], flux)
                np.add.at(out, e_out, -flux)
            neu = kind == NEUMANN
            np.add.at(out, e_in[neu], sg[neu] * vin[neu] * meas[neu])
            dir_ = kind == DIRICHLET
            if dir_.any() and g is not None:
                f_d = sel[dir_]
                x = vs.face_quad_points(f_d)
                gv = np.asarray(g(x.reshape(-1, mesh.dim), t)).reshape(len(f_d), -1, mesh.dim)
                np.add.at(out, e_in[dir_], sg[dir_] * meas[dir_] * (gv[:, :, a] @ wf))
    return out


def pointwise_divergence(disc: Discretization, v) -> np.ndarray:
    """Divergence at the volume quadrature points, (nel, nq)."""
    return np.trace(disc.vspace.gradients(v), axis1=1, axis2=2)


def face_jump_moments(disc: Discretization, w, g=None, t: float = 0.0) -> np.ndarray:
    """Half the interior-face normal jumps of ``w`` plus its Dirichlet mismatch, tested per element.

    Returns (nel, nm_p): 1/2 sum_int ([w].n_e, q_E)_e + sum_D ((w - g).n, q_E)_e.
    """
    mesh = disc.mesh
    vs, ps = disc.vspace, disc.pspace
    c = vs.as_array(w)
    wf = vs.quad.face_weights
    out = np.zeros((mesh.n_elements, ps.nm))
    for a in range(mesh.dim):
        for s in (0, 1):
            sel = np.flatnonzero((mesh.face_axis == a) & (mesh.face_side == s))
            if not len(sel):
                continue
            kind = mesh.face_kind[sel]
            meas = mesh.face_measure[sel]
            e_in = mesh.face_inside[sel]
            win = c[e_in, a] @ vs.fT[a][s]
            itf = kind == INTERIOR
            if itf.any():
                f_i = sel[itf]
                e_out = mesh.face_outside[f_i]
                jump = win[itf] - c[e_out, a] @ vs.fT[a][0]
                np.add.at(out, e_in[itf], 0.5 * np.einsum("f,fq,q,mq->fm", meas[itf], jump, wf, ps.fT[a][1]))
                np.add.at(out, e_out, 0.5 * np.einsum("f,fq,q,mq->fm", meas[itf], jump, wf, ps.fT[a][0]))
            dir_ = kind == DIRICHLET
            if dir_.any():
                f_d = sel[dir_]
                if g is not None:
                    x = vs.face_quad_points(f_d)
                    gv = np.asarray(g(x.reshape(-1, mesh.dim), t)).reshape(len(f_d), -1, mesh.dim)[:, :, a]
                else:
                    gv = 0.0
                sg = mesh.face_sign[f_d].astype(float)
                mism = (win[dir_] - gv) * sg[:, None]
                np.add.at(out, e_in[dir_], np.einsum("f,fq,q,mq->fm", meas[dir_], mism, wf, ps.fT[a][s]))
    return out
