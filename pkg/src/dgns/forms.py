"""DG function spaces and assembly of the interior-penalty forms.

All element and face integrals are computed on the reference cube and
scaled with the diagonal element Jacobians, so assembly is vectorised over
elements and faces.  Coefficient arrays have shape (n_elements, n_comp,
n_modes) and flatten to element-blocked vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .basis import QuadratureRule, TensorBasis
from .mesh import StructuredMesh
from .solvers import BlockPattern, BlockSparseMatrix


@dataclass(frozen=True)
class PenaltyConfig:
    alpha: float = 4.0
    epsilon: int = -1

    def __post_init__(self):
        if self.epsilon not in (-1, 0, 1):
            raise ValueError("epsilon must be -1 (SIPG), 0 (IIPG) or +1 (NIPG)")
        if self.alpha <= 0:
            raise ValueError("penalty factor must be positive")

    def sigma(self, degree: int, dim: int) -> float:
        return self.alpha * degree * (degree + dim - 1)


@dataclass(frozen=True)
class FluidParams:
    rho: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if self.rho <= 0 or self.mu <= 0:
            raise ValueError("density and viscosity must be positive")

    @property
    def nu(self) -> float:
        return self.mu / self.rho


def element_pattern(mesh: StructuredMesh) -> BlockPattern:
    """Block pattern of the element adjacency graph (diagonal plus face neighbours)."""
    pat = getattr(mesh, "_element_pattern", None)
    if pat is None:
        fi = mesh.interior_faces
        e = np.arange(mesh.n_elements)
        rows = np.concatenate([e, mesh.face_inside[fi], mesh.face_outside[fi]])
        cols = np.concatenate([e, mesh.face_outside[fi], mesh.face_inside[fi]])
        pat = BlockPattern(mesh.n_elements, mesh.n_elements, rows, cols)
        mesh._element_pattern = pat
    return pat


class DGSpace:
    """Broken space (Q_p)^ncomp on a structured mesh with tabulated quadrature."""

    def __init__(self, mesh: StructuredMesh, degree: int, ncomp: int = 1, quad: QuadratureRule | None = None):
        self.mesh = mesh
        self.degree = degree
        self.ncomp = ncomp
        self.dim = mesh.dim
        self.basis = TensorBasis(degree, mesh.dim)
        self.nm = self.basis.size
        self.block = ncomp * self.nm
        self.quad = quad or QuadratureRule(degree + 2, mesh.dim)
        self.ndofs = mesh.n_elements * self.block
        q = self.quad
        self.V = self.basis.eval(q.points)  # (nm, nq)
        self.G = self.basis.eval_grad(q.points)  # (d, nm, nq)
        self.fT = [[self.basis.eval(q.face_points(k, s)) for s in (0, 1)] for k in range(self.dim)]
        self.fG = [[self.basis.eval_grad(q.face_points(k, s))[k] for s in (0, 1)] for k in range(self.dim)]
        self.fGall = [[self.basis.eval_grad(q.face_points(k, s)) for s in (0, 1)] for k in range(self.dim)]

    def shape(self):
        return (self.mesh.n_elements, self.ncomp, self.nm)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape())

    def as_array(self, vec) -> np.ndarray:
        return np.asarray(vec).reshape(self.shape())

    @cached_property
    def quad_points(self) -> np.ndarray:
        """Physical volume quadrature points, (nel, nq, d)."""
        return self.mesh.to_physical(self.quad.points)

    def face_quad_points(self, faces) -> np.ndarray:
        """Physical face quadrature points seen from the inside element, (nf, nfq, d)."""
        mesh = self.mesh
        out = np.empty((len(faces), len(self.quad.face_weights), self.dim))
        for k in range(self.dim):
            for s in (0, 1):
                sel = (mesh.face_axis[faces] == k) & (mesh.face_side[faces] == s)
                if sel.any():
                    out[sel] = mesh.to_physical(self.quad.face_points(k, s), mesh.face_inside[faces[sel]])
        return out

    # evaluation -------------------------------------------------------
    def values(self, coeffs) -> np.ndarray:
        """Values at volume quadrature points, (nel, ncomp, nq)."""
        return np.einsum("ecm,mq->ecq", self.as_array(coeffs), self.V)

    def gradients(self, coeffs) -> np.ndarray:
        """Physical gradients at volume quadrature points, (nel, ncomp, d, nq)."""
        g = np.einsum("ecm,kmq->eckq", self.as_array(coeffs), self.G)
        return g / self.mesh.h[:, None, :, None]

    def eval_at(self, coeffs, xi: np.ndarray) -> np.ndarray:
        """Values at reference points ``xi`` in every element, (nel, ncomp, npts)."""
        return np.einsum("ecm,mq->ecq", self.as_array(coeffs), self.basis.eval(xi))

    def project(self, fn, t: float = 0.0) -> np.ndarray:
        """L2 projection of ``fn(x, t)``; vectors return (..., ncomp), scalars (...)."""
        x = self.quad_points
        vals = np.asarray(fn(x.reshape(-1, self.dim), t), dtype=float)
        vals = vals.reshape(x.shape[0], x.shape[1], -1)  # (nel, nq, ncomp)
        w = self.quad.weights
        return np.einsum("eqc,q,mq->ecm", vals, w, self.V)

    def integrate(self, values) -> float:
        """Integral of quadrature-point data (nel, ..., nq) summed over everything."""
        return float(np.einsum("e...q,q,e->", values, self.quad.weights, self.mesh.volume))

    def mean(self, coeffs) -> np.ndarray:
        """Domain mean of each component (modes beyond 0 have zero integral)."""
        c = self.as_array(coeffs)
        return np.einsum("ec,e->c", c[:, :, 0], self.mesh.volume) / self.mesh.volume.sum()

    def constant_vector(self) -> np.ndarray:
        """Coefficient vector of the function 1 (scalar spaces)."""
        z = self.zeros()
        z[:, :, 0] = 1.0
        return z.ravel()


# ----------------------------------------------------------------------
# reference face matrices


def _face_mats(space_a: DGSpace, space_b: DGSpace, k: int):
    """Reference face integrals between traces of two scalar bases on axis ``k``.

    Returns dicts keyed by (side_a, side_b) of TT, TG (value_a x normal-derivative_b)
    and GT (normal-derivative_a x value_b).
    """
    w = space_a.quad.face_weights
    TT, TG, GT = {}, {}, {}
    for sa in (0, 1):
        for sb in (0, 1):
            Ta, Tb = space_a.fT[k][sa], space_b.fT[k][sb]
            Ga, Gb = space_a.fG[k][sa], space_b.fG[k][sb]
            TT[sa, sb] = np.einsum("mq,q,nq->mn", Ta, w, Tb)
            TG[sa, sb] = np.einsum("mq,q,nq->mn", Ta, w, Gb)
            GT[sa, sb] = np.einsum("mq,q,nq->mn", Ga, w, Tb)
    return TT, TG, GT


def _sipg_scalar_blocks(space: DGSpace, eps: float, sigma: float, boundary_faces):
    """Rows, cols and blocks of the scalar interior penalty operator.

    ``boundary_faces`` receive the Nitsche (weak Dirichlet) terms.
    """
    mesh = space.mesh
    w = space.quad.weights
    K = np.einsum("kmq,q,knq->kmn", space.G, w, space.G)  # per-axis reference stiffness
    coef = mesh.volume[:, None] / mesh.h ** 2
    vol_blocks = np.einsum("ek,kmn->emn", coef, K)
    rows = [np.arange(mesh.n_elements)]
    cols = [np.arange(mesh.n_elements)]
    blocks = [vol_blocks]

    for k in range(mesh.dim):
        TT, TG, GT = _face_mats(space, space, k)
        fi = mesh.interior_faces[mesh.face_axis[mesh.interior_faces] == k]
        if len(fi):
            meas = mesh.face_measure[fi]
            pen = sigma / mesh.face_h_e[fi]
            el = {1: mesh.face_inside[fi], 2: mesh.face_outside[fi]}
            side = {1: 1, 2: 0}
            sgn = {1: 1.0, 2: -1.0}
            for X in (1, 2):
                for Y in (1, 2):
                    sx, sy = side[X], side[Y]
                    hX = mesh.h[el[X], k]
                    hY = mesh.h[el[Y], k]
                    c_tg = -0.5 * sgn[X] * meas / hY
                    c_gt = eps * 0.5 * sgn[Y] * meas / hX
                    c_tt = pen * sgn[X] * sgn[Y] * meas
                    blocks.append(c_tg[:, None, None] * TG[sx, sy] + c_gt[:, None, None] * GT[sx, sy]
                                  + c_tt[:, None, None] * TT[sx, sy])
                    rows.append(el[X])
                    cols.append(el[Y])
        fb = boundary_faces[mesh.face_axis[boundary_faces] == k]
        for s in (0, 1):
            f = fb[mesh.face_side[fb] == s]
            if not len(f):
                continue
            e = mesh.face_inside[f]
            meas = mesh.face_measure[f]
            sg = mesh.face_sign[f]
            hk = mesh.h[e, k]
            c_tg = -sg * meas / hk
            c_gt = eps * sg * meas / hk
            c_tt = sigma / mesh.face_h_e[f] * meas
            blocks.append(c_tg[:, None, None] * TG[s, s] + c_gt[:, None, None] * GT[s, s]
                          + c_tt[:, None, None] * TT[s, s])
            rows.append(e)
            cols.append(e)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(blocks)


def _kron_components(blocks: np.ndarray, ncomp: int) -> np.ndarray:
    nb, m, n = blocks.shape
    eye = np.eye(ncomp)
    return np.einsum("ca,fmn->fcman", eye, blocks).reshape(nb, ncomp * m, ncomp * n)


def assemble_a(vspace: DGSpace, penalty: PenaltyConfig) -> BlockSparseMatrix:
    """Vector diffusion operator a = d + J0 with weak Dirichlet terms on Gamma_D."""
    mesh = vspace.mesh
    sigma = penalty.sigma(vspace.degree, mesh.dim)
    rows, cols, blocks = _sipg_scalar_blocks(vspace, float(penalty.epsilon), sigma, mesh.dirichlet_faces)
    return BlockSparseMatrix.from_blocks(element_pattern(mesh), rows, cols,
                                         _kron_components(blocks, vspace.ncomp))


def assemble_a_scalar(space: DGSpace, penalty: PenaltyConfig, boundary_faces=None) -> BlockSparseMatrix:
    mesh = space.mesh
    if boundary_faces is None:
        boundary_faces = mesh.dirichlet_faces
    sigma = penalty.sigma(space.degree, mesh.dim)
    rows, cols, blocks = _sipg_scalar_blocks(space, float(penalty.epsilon), sigma, boundary_faces)
    return BlockSparseMatrix.from_blocks(element_pattern(mesh), rows, cols, blocks)


def assemble_alpha(pspace: DGSpace, penalty: PenaltyConfig, velocity_degree: int | None = None) -> BlockSparseMatrix:
    """Stabilised pressure Poisson operator.

    Symmetric interior penalty Laplacian with natural (homogeneous Neumann)
    conditions on Dirichlet velocity faces and weakly imposed homogeneous
    Dirichlet conditions on outflow faces.  The penalty uses the velocity
    degree (``velocity_degree``, default pressure degree + 1).
    """
    mesh = pspace.mesh
    p = pspace.degree + 1 if velocity_degree is None else velocity_degree
    sigma = penalty.sigma(p, mesh.dim)
    rows, cols, blocks = _sipg_scalar_blocks(pspace, -1.0, sigma, mesh.neumann_faces)
    return BlockSparseMatrix.from_blocks(element_pattern(mesh), rows, cols, blocks)


def _b_blocks(vspace: DGSpace, pspace: DGSpace, alternative: bool):
    mesh = vspace.mesh
    d = mesh.dim
    nmp, nmv = pspace.nm, vspace.nm
    w = vspace.quad.weights
    if alternative:
        # (v, grad q)
        D = np.einsum("kmq,q,nq->kmn", pspace.G, w, vspace.V)
        sign = 1.0
    else:
        # -(div v, q)
        D = np.einsum("mq,q,knq->kmn", pspace.V, w, vspace.G)
        sign = -1.0
    coef = sign * mesh.volume[:, None] / mesh.h
    vol = np.zeros((mesh.n_elements, nmp, d, nmv))
    for k in range(d):
        vol[:, :, k, :] = coef[:, k, None, None] * D[k]
    rows = [np.arange(mesh.n_elements)]
    cols = [np.arange(mesh.n_elements)]
    blocks = [vol.reshape(mesh.n_elements, nmp, d * nmv)]

    def put(k, coefs, mat):
        b = np.zeros((len(coefs), nmp, d, nmv))
        b[:, :, k, :] = coefs[:, None, None] * mat
        return b.reshape(len(coefs), nmp, d * nmv)

    for k in range(d):
        TT, _, _ = _face_mats(pspace, vspace, k)
        fi = mesh.interior_faces[mesh.face_axis[mesh.interior_faces] == k]
        if len(fi):
            meas = mesh.face_measure[fi]
            el = {1: mesh.face_inside[fi], 2: mesh.face_outside[fi]}
            side = {1: 1, 2: 0}
            sgn = {1: 1.0, 2: -1.0}
            for X in (1, 2):
                for Y in (1, 2):
                    if alternative:  # -({v}.n, [q])
                        c = -0.5 * sgn[X] * meas
                    else:  # ([v].n, {q})
                        c = 0.5 * sgn[Y] * meas
                    blocks.append(put(k, c, TT[side[X], side[Y]]))
                    rows.append(el[X])
                    cols.append(el[Y])
        bfaces = mesh.neumann_faces if alternative else mesh.dirichlet_faces
        fb = bfaces[mesh.face_axis[bfaces] == k]
        for s in (0, 1):
            f = fb[mesh.face_side[fb] == s]
            if not len(f):
                continue
            c = mesh.face_sign[f] * mesh.face_measure[f] * (-1.0 if alternative else 1.0)
            blocks.append(put(k, c, TT[s, s]))
            rows.append(mesh.face_inside[f])
            cols.append(mesh.face_inside[f])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(blocks)


def assemble_b(vspace: DGSpace, pspace: DGSpace) -> BlockSparseMatrix:
    """Divergence form b(v, q); rows are pressure modes, columns velocity modes."""
    rows, cols, blocks = _b_blocks(vspace, pspace, alternative=False)
    return BlockSparseMatrix.from_blocks(element_pattern(vspace.mesh), rows, cols, blocks)


def assemble_b_alt(vspace: DGSpace, pspace: DGSpace) -> BlockSparseMatrix:
    """The same form written with the gradient on q (integrated by parts)."""
    rows, cols, blocks = _b_blocks(vspace, pspace, alternative=True)
    return BlockSparseMatrix.from_blocks(element_pattern(vspace.mesh), rows, cols, blocks)


# ----------------------------------------------------------------------
# right-hand sides


def _boundary_data(space: DGSpace, faces, g, t):
    """g evaluated at face quadrature points of ``faces``: (nf, nfq, d)."""
    x = space.face_quad_points(faces)
    return np.asarray(g(x.reshape(-1, space.dim), t), dtype=float).reshape(x.shape[0], x.shape[1], -1)


def assemble_l(vspace: DGSpace, penalty: PenaltyConfig, f, g, t: float) -> np.ndarray:
    """Momentum right side: (f, v) plus the weak Dirichlet data terms for g."""
    mesh = vspace.mesh
    d = mesh.dim
    out = np.zeros(vspace.shape())
    if f is not None:
        x = vspace.quad_points
        fv = np.asarray(f(x.reshape(-1, d), t), dtype=float).reshape(x.shape[0], x.shape[1], d)
        out += np.einsum("eqc,q,mq,e->ecm", fv, vspace.quad.weights, vspace.V, mesh.volume)
    faces = mesh.dirichlet_faces
    if g is not None and len(faces):
        sigma = penalty.sigma(vspace.degree, d)
        gv = _boundary_data(vspace, faces, g, t)
        w = vspace.quad.face_weights
        for k in range(d):
            for s in (0, 1):
                sel = (mesh.face_axis[faces] == k) & (mesh.face_side[faces] == s)
                if not sel.any():
                    continue
                f_ = faces[sel]
                e = mesh.face_inside[f_]
                meas = mesh.face_measure[f_]
                test = (penalty.epsilon * mesh.face_sign[f_] / mesh.h[e, k])[:, None, None] * vspace.fG[k][s][None] \
                    + (sigma / mesh.face_h_e[f_])[:, None, None] * vspace.fT[k][s][None]
                contrib = np.einsum("f,fmq,q,fqc->fcm", meas, test, w, gv[sel])
                np.add.at(out, e, contrib)
    return out.ravel()


def assemble_r(pspace: DGSpace, g, t: float) -> np.ndarray:
    """Continuity right side r(q) = sum over Dirichlet faces of (g.n, q)."""
    mesh = pspace.mesh
    out = np.zeros(pspace.shape())
    faces = mesh.dirichlet_faces
    if g is None or not len(faces):
        return out.ravel()
    gv = _boundary_data(pspace, faces, g, t)
    w = pspace.quad.face_weights
    for k in range(mesh.dim):
        for s in (0, 1):
            sel = (mesh.face_axis[faces] == k) & (mesh.face_side[faces] == s)
            if not sel.any():
                continue
            f_ = faces[sel]
            gn = gv[sel][:, :, k] * mesh.face_sign[f_][:, None]
            contrib = np.einsum("f,fq,q,mq->fm", mesh.face_measure[f_], gn, w, pspace.fT[k][s])
            np.add.at(out[:, 0, :], mesh.face_inside[f_], contrib)
    return out.ravel()


# ----------------------------------------------------------------------


class Discretization:
    """Velocity/pressure spaces plus cached linear operators for one mesh."""

    def __init__(self, mesh: StructuredMesh, degree: int, penalty: PenaltyConfig | None = None,
                 fluid: FluidParams | None = None, quad_order: int | None = None):
        if degree < 1:
            raise ValueError("velocity degree must be at least 1")
        self.mesh = mesh
        self.degree = degree
        self.penalty = penalty or PenaltyConfig()
        self.fluid = fluid or FluidParams()
        quad = QuadratureRule(quad_order or degree + 2, mesh.dim)
        self.vspace = DGSpace(mesh, degree, mesh.dim, quad)
        self.pspace = DGSpace(mesh, degree - 1, 1, quad)
        self.sigma = self.penalty.sigma(degree, mesh.dim)

    def on_mesh(self, mesh: StructuredMesh) -> "Discretization":
        """The same spaces and parameters on another mesh (multigrid hierarchies)."""
        return Discretization(mesh, self.degree, self.penalty, self.fluid, self.vspace.quad.q)

    @property
    def pressure_has_nullspace(self) -> bool:
        return not self.mesh.has_neumann

    @cached_property
    def A(self) -> BlockSparseMatrix:
        return assemble_a(self.vspace, self.penalty)

    def _mass_like(self, A: BlockSparseMatrix) -> BlockSparseMatrix:
        data = np.zeros_like(A.data)
        data[A.pattern.diag_slots] = self.mesh.volume[:, None, None] * np.eye(A.block_shape[0])
        return BlockSparseMatrix(A.pattern, data)

    @cached_property
    def M(self) -> BlockSparseMatrix:
        """Velocity mass matrix on the pattern of :attr:`A`."""
        return self._mass_like(self.A)

    @cached_property
    def scalar_vspace(self) -> DGSpace:
        """One velocity component; :attr:`A` is this operator on every component."""
        return DGSpace(self.mesh, self.degree, 1, self.vspace.quad)

    @cached_property
    def A_scalar(self) -> BlockSparseMatrix:
        return assemble_a_scalar(self.scalar_vspace, self.penalty)

    @cached_property
    def M_scalar(self) -> BlockSparseMatrix:
        return self._mass_like(self.A_scalar)

    @cached_property
    def B(self) -> BlockSparseMatrix:
        return assemble_b(self.vspace, self.pspace)

    @cached_property
    def BT(self):
        return self.B.tocsr().T.tocsr()

    @cached_property
    def alpha(self) -> BlockSparseMatrix:
        return assemble_alpha(self.pspace, self.penalty, velocity_degree=self.degree)

    def l(self, f, g, t) -> np.ndarray:
        return assemble_l(self.vspace, self.penalty, f, g, t)

    def r(self, g, t) -> np.ndarray:
        return assemble_r(self.pspace, g, t)

    def mass_v(self, x) -> np.ndarray:
        return (self.vspace.as_array(x) * self.mesh.volume[:, None, None]).ravel()

    def mass_v_inv(self, x) -> np.ndarray:
        return (self.vspace.as_array(x) / self.mesh.volume[:, None, None]).ravel()

    def mass_p(self, x) -> np.ndarray:
        return (self.pspace.as_array(x) * self.mesh.volume[:, None, None]).ravel()

    def mass_p_inv(self, x) -> np.ndarray:
        return (self.pspace.as_array(x) / self.mesh.volume[:, None, None]).ravel()

    def remove_pressure_mean(self, p) -> np.ndarray:
        if not self.pressure_has_nullspace:
            return np.asarray(p)
        c = self.pspace.as_array(p).copy()
        c[:, 0, 0] -= self.pspace.mean(c)[0]
        return c.ravel()
