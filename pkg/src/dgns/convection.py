"""Upwind DG discretisation of the convective term div(v x v).

The production path uses the closed form of the Vijayasundaram flux for
beta = 0: the upwind decision is taken on the face-averaged normal
velocity and the full state from the upwind side is transported.  The
eigendecomposition form for general beta is kept for cross-checking.
"""

from __future__ import annotations

import numpy as np

from .forms import DGSpace, element_pattern
from .mesh import DIRICHLET, INTERIOR, NEUMANN
from .solvers import BlockSparseMatrix


def _heaviside(x):
    # H(0) = 0 so both branches vanish continuously at a tie
    return (x > 0.0).astype(float)


def flux_upwind(v_int, v_ext, n, kind: str = "interior", g=None):
    """Numerical flux for beta = 0.

    Vectors live on the last axis; leading axes broadcast.  ``kind`` is
    ``interior``, ``dirichlet`` (needs ``g``) or ``neumann``.
    """
    v_int = np.asarray(v_int, dtype=float)
    n = np.asarray(n, dtype=float)
    if kind == "interior":
        v_ext = np.asarray(v_ext, dtype=float)
        s = np.sum(0.5 * (v_int + v_ext) * n, axis=-1, keepdims=True)
        return np.maximum(0.0, s) * v_int + np.minimum(0.0, s) * v_ext
    s = np.sum(v_int * n, axis=-1, keepdims=True)
    if kind == "dirichlet":
        if g is None:
            raise ValueError("Dirichlet flux needs boundary data g")
        return np.maximum(0.0, s) * v_int + np.minimum(0.0, s) * np.asarray(g, dtype=float)
    if kind == "neumann":
        return np.maximum(0.0, s) * v_int
    raise ValueError(f"unknown face kind {kind!r}")


class DegenerateFluxError(ValueError):
    """Average velocity tangential to the face: the eigenvector basis is singular."""


def vijayasundaram_matrices(vbar, n, beta: float):
    """Positive and negative parts of B_beta(vbar, n) = (1-beta)(vbar.n) I + beta vbar x n."""
    vbar = np.asarray(vbar, dtype=float)
    n = np.asarray(n, dtype=float)
    d = len(vbar)
    vn = float(vbar @ n)
    if vn == 0.0:
        raise DegenerateFluxError("{v}.n = 0")
    # orthonormal basis of the plane normal to n, completed with vbar
    q, _ = np.linalg.qr(np.column_stack([n, np.eye(d)]))
    tangential = q[:, 1:d]
    T = np.column_stack([tangential, vbar])
    lam = np.full(d, (1.0 - beta) * vn)
    lam[-1] = vn
    Tinv = np.linalg.inv(T)
    Bp = T @ np.diag(np.maximum(0.0, lam)) @ Tinv
    Bm = T @ np.diag(np.minimum(0.0, lam)) @ Tinv
    return Bp, Bm


def flux_general_beta(v_int, v_ext, n, beta: float):
    """Flux B+({v}) v_int + B-({v}) v_ext from an explicit eigendecomposition."""
    v_int = np.asarray(v_int, dtype=float)
    v_ext = np.asarray(v_ext, dtype=float)
    Bp, Bm = vijayasundaram_matrices(0.5 * (v_int + v_ext), n, beta)
    return Bp @ v_int + Bm @ v_ext


def flux_closed_form(v_int, v_ext, n, beta: float):
    """Closed form of the general-beta flux valid when {v}.n != 0."""
    v_int = np.asarray(v_int, dtype=float)
    v_ext = np.asarray(v_ext, dtype=float)
    n = np.asarray(n, dtype=float)
    vbar = 0.5 * (v_int + v_ext)
    s = vbar @ n
    central = _heaviside(np.array(s)) * (v_int @ n) + _heaviside(np.array(-s)) * (v_ext @ n)
    return (1.0 - beta) * (max(0.0, s) * v_int + min(0.0, s) * v_ext) + beta * central * vbar


# ----------------------------------------------------------------------


class ConvectionOperator:
    """Residual, Jacobian and Jacobian action of the upwind convective form."""

    def __init__(self, vspace: DGSpace):
        self.space = vspace
        self.mesh = vspace.mesh
        mesh = self.mesh
        self._groups = []
        for kind in (INTERIOR, DIRICHLET, NEUMANN):
            faces = np.flatnonzero(mesh.face_kind == kind)
            for k in range(mesh.dim):
                for s in (0, 1):
                    sel = faces[(mesh.face_axis[faces] == k) & (mesh.face_side[faces] == s)]
                    if len(sel):
                        self._groups.append((kind, k, s, sel))
        self._face_points = {}
        sp_ = vspace
        w, wf = sp_.quad.weights, sp_.quad.face_weights
        nq = len(w)
        # quadrature-weighted products of test and trial tables, contracted by matmul
        self._GVw = np.einsum("amq,nq,q->qamn", sp_.G, sp_.V, w).reshape(nq, -1)
        self._TTw = {}
        for k in range(mesh.dim):
            for sx in (0, 1):
                for sy in (0, 1):
                    self._TTw[k, sx, sy] = np.einsum("mq,nq,q->qmn", sp_.fT[k][sx], sp_.fT[k][sy],
                                                     wf).reshape(len(wf), -1)

    # traces -----------------------------------------------------------
    def _trace(self, coeffs, elements, k, side):
        return np.einsum("fcm,mq->fcq", coeffs[elements], self.space.fT[k][side])

    def _g_trace(self, g, faces, t):
        if g is None:
            raise ValueError("Dirichlet faces present but no boundary data")
        key = id(faces)  # face groups are fixed arrays held in self._groups
        if key not in self._face_points:
            self._face_points[key] = self.space.face_quad_points(faces)
        x = self._face_points[key]
        vals = np.asarray(g(x.reshape(-1, self.mesh.dim), t), dtype=float)
        return vals.reshape(x.shape[0], x.shape[1], -1).transpose(0, 2, 1)  # (nf, d, nq)

    # residual ---------------------------------------------------------
    def residual(self, v, g=None, t: float = 0.0) -> np.ndarray:
        """Vector of c_hat(v; v, phi) over all test functions phi."""
        sp_, mesh = self.space, self.mesh
        c = sp_.as_array(v)
        w = sp_.quad.weights
        vals = sp_.values(c)
        scale = mesh.volume[:, None] / mesh.h  # (nel, d)
        out = -np.einsum("ecq,ekq,kmq,q,ek->ecm", vals, vals, sp_.G, w, scale)
        wf = sp_.quad.face_weights
        for kind, k, s, faces in self._groups:
            e_in = mesh.face_inside[faces]
            meas = mesh.face_measure[faces]
            vi = self._trace(c, e_in, k, s)
            if kind == INTERIOR:
                e_out = mesh.face_outside[faces]
                ve = self._trace(c, e_out, k, 0)
                sn = 0.5 * (vi[:, k] + ve[:, k])[:, None, :]
                F = np.maximum(0.0, sn) * vi + np.minimum(0.0, sn) * ve
                out_in = np.einsum("f,fcq,q,mq->fcm", meas, F, wf, sp_.fT[k][1])
                out_out = np.einsum("f,fcq,q,mq->fcm", meas, F, wf, sp_.fT[k][0])
                np.add.at(out, e_in, out_in)
                np.add.at(out, e_out, -out_out)
                continue
            sg = mesh.face_sign[faces][:, None, None]
            sn = sg * vi[:, k][:, None, :]
            F = np.maximum(0.0, sn) * vi
            if kind == DIRICHLET:
                F = F + np.minimum(0.0, sn) * self._g_trace(g, faces, t)
            np.add.at(out, e_in, np.einsum("f,fcq,q,mq->fcm", meas, F, wf, sp_.fT[k][s]))
        return out.ravel()

    # Jacobian ---------------------------------------------------------
    def _slots(self):
        """Pattern slots of every block written by :meth:`jacobian`, unique within a group."""
        if getattr(self, "_jac_slots", None) is None:
            mesh = self.mesh
            pat = element_pattern(mesh)
            e = np.arange(mesh.n_elements)
            slots = {"volume": pat.slots(e, e)}
            for gi, (kind, k, s, faces) in enumerate(self._groups):
                e_in = mesh.face_inside[faces]
                if kind == INTERIOR:
                    el = {1: e_in, 2: mesh.face_outside[faces]}
                    for X_ in (1, 2):
                        for Y in (1, 2):
                            slots[gi, X_, Y] = pat.slots(el[X_], el[Y])
                else:
                    slots[gi] = pat.slots(e_in, e_in)
            self._jac_slots = (pat, slots)
        return self._jac_slots

    def jacobian(self, v, g=None, t: float = 0.0) -> BlockSparseMatrix:
        """Exact derivative of :meth:`residual` (with H(0) = 0 at the kink)."""
        sp_, mesh = self.space, self.mesh
        d, nm = mesh.dim, sp_.nm
        D = d * nm
        pat, slots = self._slots()
        c = sp_.as_array(v)
        vals = sp_.values(c)
        inv_h = 1.0 / mesh.h
        vol = mesh.volume
        nel = mesh.n_elements
        X = (vals @ self._GVw).reshape(nel, d, d, nm, nm)  # (e, c, a, m, n)
        scale = vol[:, None] * inv_h  # (e, a)
        blk = -(X * scale[:, None, :, None, None]).transpose(0, 1, 3, 2, 4).copy()
        t1 = -np.einsum("ekkmn,ek->emn", X, scale)
        for a in range(d):
            blk[:, a, :, a, :] += t1
        J = BlockSparseMatrix.zeros(pat, D, D)
        J.data[slots["volume"]] = blk.reshape(-1, D, D)
        for gi, (kind, k, s, faces) in enumerate(self._groups):
            e_in = mesh.face_inside[faces]
            meas = mesh.face_measure[faces]
            vi = self._trace(c, e_in, k, s)
            nf = len(faces)
            if kind == INTERIOR:
                ve = self._trace(c, mesh.face_outside[faces], k, 0)
                sn = 0.5 * (vi[:, k] + ve[:, k])
                P = _heaviside(sn)[:, None] * vi + _heaviside(-sn)[:, None] * ve  # (nf, d, nq)
                coef = {1: np.maximum(0.0, sn), 2: np.minimum(0.0, sn)}
                side = {1: 1, 2: 0}
                for X_, sgn in ((1, 1.0), (2, -1.0)):
                    for Y in (1, 2):
                        TTw = self._TTw[k, side[X_], side[Y]]
                        b = np.zeros((nf, d, nm, d, nm))
                        diag = (coef[Y] @ TTw).reshape(nf, nm, nm)
                        for a in range(d):
                            b[:, a, :, a, :] = diag
                        b[:, :, :, k, :] += 0.5 * (P @ TTw).reshape(nf, d, nm, nm)
                        b *= (sgn * meas)[:, None, None, None, None]
                        J.add_blocks(slots[gi, X_, Y], b.reshape(nf, D, D))
                continue
            sg = mesh.face_sign[faces].astype(float)
            sn = sg[:, None] * vi[:, k]
            P = _heaviside(sn)[:, None] * vi
            if kind == DIRICHLET:
                P = P + _heaviside(-sn)[:, None] * self._g_trace(g, faces, t)
            TTw = self._TTw[k, s, s]
            b = np.zeros((nf, d, nm, d, nm))
            diag = (np.maximum(0.0, sn) @ TTw).reshape(nf, nm, nm)
            for a in range(d):
                b[:, a, :, a, :] = diag
            b[:, :, :, k, :] += sg[:, None, None, None] * (P @ TTw).reshape(nf, d, nm, nm)
            b *= meas[:, None, None, None, None]
            J.add_blocks(slots[gi], b.reshape(nf, D, D))
        return J

    def apply_jacobian(self, v, dv, g=None, t: float = 0.0) -> np.ndarray:
        """Matrix-free directional derivative of the residual at ``v`` along ``dv``."""
        sp_, mesh = self.space, self.mesh
        c = sp_.as_array(v)
        dc = sp_.as_array(dv)
        w = sp_.quad.weights
        vals, dvals = sp_.values(c), sp_.values(dc)
        scale = mesh.volume[:, None] / mesh.h
        out = -np.einsum("ecq,ekq,kmq,q,ek->ecm", dvals, vals, sp_.G, w, scale)
        out -= np.einsum("ecq,ekq,kmq,q,ek->ecm", vals, dvals, sp_.G, w, scale)
        wf = sp_.quad.face_weights
        for kind, k, s, faces in self._groups:
            e_in = mesh.face_inside[faces]
            meas = mesh.face_measure[faces]
            vi, dvi = self._trace(c, e_in, k, s), self._trace(dc, e_in, k, s)
            if kind == INTERIOR:
                e_out = mesh.face_outside[faces]
                ve, dve = self._trace(c, e_out, k, 0), self._trace(dc, e_out, k, 0)
                sn = 0.5 * (vi[:, k] + ve[:, k])
                dsn = 0.5 * (dvi[:, k] + dve[:, k])
                P = _heaviside(sn)[:, None] * vi + _heaviside(-sn)[:, None] * ve
                dF = np.maximum(0.0, sn)[:, None] * dvi + np.minimum(0.0, sn)[:, None] * dve + P * dsn[:, None]
                np.add.at(out, e_in, np.einsum("f,fcq,q,mq->fcm", meas, dF, wf, sp_.fT[k][1]))
                np.add.at(out, e_out, -np.einsum("f,fcq,q,mq->fcm", meas, dF, wf, sp_.fT[k][0]))
                continue
            sg = mesh.face_sign[faces].astype(float)
            sn = sg[:, None] * vi[:, k]
            dsn = sg[:, None] * dvi[:, k]
            P = _heaviside(sn)[:, None] * vi
            if kind == DIRICHLET:
                P = P + _heaviside(-sn)[:, None] * self._g_trace(g, faces, t)
            dF = np.maximum(0.0, sn)[:, None] * dvi + P * dsn[:, None]
            np.add.at(out, e_in, np.einsum("f,fcq,q,mq->fcm", meas, dF, wf, sp_.fT[k][s]))
        return out.ravel()

    # centred form -----------------------------------------------------
    def residual_centered(self, u, z=None) -> np.ndarray:
        """Volume-only form sum_E ((u.grad) z, phi); ``z`` defaults to ``u``."""
        sp_ = self.space
        z = u if z is None else z
        uq = sp_.values(u)
        gz = sp_.gradients(z)  # (nel, c, k, q)
        return np.einsum("ekq,eckq,mq,q,e->ecm", uq, gz, sp_.V, sp_.quad.weights,
                         self.mesh.volume).ravel()

    def jacobian_centered(self, v) -> BlockSparseMatrix:
        sp_, mesh = self.space, self.mesh
        d, nm = mesh.dim, sp_.nm
        vals = sp_.values(v)
        grads = sp_.gradients(v)
        w, vol = sp_.quad.weights, mesh.volume
        blk = np.einsum("ecaq,nq,mq,q,e->ecman", grads, sp_.V, sp_.V, w, vol)
        adv = np.einsum("ekq,knq,ek,mq,q,e->emn", vals, sp_.G, 1.0 / mesh.h, sp_.V, w, vol)
        for a in range(d):
            blk[:, a, :, a, :] += adv
        e = np.arange(mesh.n_elements)
        return BlockSparseMatrix.from_blocks(element_pattern(mesh), e, e, blk.reshape(-1, d * nm, d * nm))


def assemble_c_upwind(v, vspace: DGSpace, g=None, t: float = 0.0) -> np.ndarray:
    return ConvectionOperator(vspace).residual(v, g, t)


def assemble_c_centered(u, vspace: DGSpace, z=None) -> np.ndarray:
    return ConvectionOperator(vspace).residual_centered(u, z)
