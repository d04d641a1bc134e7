"""Geometric h-multigrid for SPD operators on structured DG meshes.

Elements are agglomerated two-by-two along every axis with an even cell
count (periodic axes keep at least two cells).  The parent polynomial space
is nested in the children, so the prolongation is the exact embedding.
Coarse operators are rediscretised when a callback is given and Galerkin
products otherwise.  Forward block Gauss-Seidel sweeps before the coarse
correction are mirrored by backward sweeps after it, which keeps the V-cycle
symmetric and usable inside CG.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .basis import gauss_1d, legendre_1d
from .solvers import BlockPattern, BlockSparseMatrix, BlockSSOR


def embedding_1d(degree: int) -> list[np.ndarray]:
    """``E[c][m, n]``: mode ``m`` on child ``c`` of parent mode ``n`` on [0, 1]."""
    x, w = gauss_1d(degree + 1)
    child = legendre_1d(degree, x) * w
    return [child @ legendre_1d(degree, 0.5 * (x + c)).T for c in (0, 1)]


def coarsen_axes(dims, periodic=None) -> np.ndarray:
    """Axes that are halved: an even cell count, and at least four cells if periodic."""
    dims = np.asarray(dims)
    periodic = np.zeros(len(dims), bool) if periodic is None else np.asarray(periodic, bool)
    return (dims % 2 == 0) & ~(periodic & (dims < 4))


def prolongation(cell_index: np.ndarray, dims, degree: int, ncomp: int, periodic=None):
    """Sparse prolongation from the agglomerated mesh; returns (P, coarse dims)."""
    dims = np.asarray(dims)
    d = len(dims)
    coarsen = coarsen_axes(dims, periodic)
    cdims = np.where(coarsen, dims // 2, dims)
    E = embedding_1d(degree)
    eye = np.eye(degree + 1)
    parent = np.where(coarsen, cell_index // 2, cell_index)
    child = np.where(coarsen, cell_index % 2, 0)
    strides = np.cumprod(np.concatenate([[1], cdims[:-1]]))
    coarse_id = parent @ strides
    # one element block per child pattern; the first axis is the last kron factor
    kinds = child @ (2 ** np.arange(d))
    blocks = {}
    for kind in np.unique(kinds):
        c = [(kind >> k) & 1 for k in range(d)]
        blk = np.ones((1, 1))
        for k in reversed(range(d)):
            blk = np.kron(blk, E[c[k]] if coarsen[k] else eye)
        blocks[kind] = np.kron(np.eye(ncomp), blk)
    B = ncomp * (degree + 1) ** d
    data = np.stack([blocks[k] for k in kinds])
    nf, nc = len(cell_index), int(np.prod(cdims))
    P = sp.bsr_matrix((data, coarse_id, np.arange(nf + 1)), shape=(nf * B, nc * B)).tocsr()
    return P, tuple(int(n) for n in cdims)


def _as_block_matrix(M: sp.spmatrix, B: int) -> BlockSparseMatrix:
    bsr = sp.bsr_matrix(M, blocksize=(B, B))
    bsr.sort_indices()
    n = bsr.shape[0] // B
    rows = np.repeat(np.arange(n), np.diff(bsr.indptr))
    pattern = BlockPattern(n, n, rows, bsr.indices)
    return BlockSparseMatrix(pattern, bsr.data)


def coarsen_mesh(mesh):
    """Agglomerate two-by-two along every axis selected by ``coarsen_axes``."""
    from .mesh import StructuredMesh

    mask = coarsen_axes(mesh.dims, mesh.periodic)
    nodes = [x[::2] if c else x for x, c in zip(mesh.nodes, mask)]
    dims = [len(x) - 1 for x in nodes]
    return StructuredMesh(dims, mesh.origin, mesh.extent, mesh.periodic, mesh.boundary_tags, nodes=nodes)


class GeometricMultigrid:
    """Symmetric V-cycle preconditioner.

    ``space`` supplies the mesh, the polynomial degree and the number of
    components of the block layout of ``A``.  With ``operator_on`` the
    operator is rediscretised on every coarse mesh, which keeps interior
    penalties scaled with the local mesh size; otherwise coarse operators
    are Galerkin products.
    """

    def __init__(self, A: BlockSparseMatrix, space, operator_on=None, min_coarse: int = 4,
                 omega: float = 1.0, sweeps: int = 2):
        self.sweeps = sweeps
        B = space.block
        self.levels = []  # (A, smoother, P)
        mesh = space.mesh
        current = A
        while coarsen_axes(mesh.dims, mesh.periodic).any() and mesh.n_elements > min_coarse:
            P, _ = prolongation(mesh.cell_index, mesh.dims, space.degree, space.ncomp, mesh.periodic)
            self.levels.append((current, BlockSSOR(current, omega), P))
            mesh = coarsen_mesh(mesh)
            if operator_on is not None:
                current = operator_on(mesh)
            else:
                current = _as_block_matrix((P.T @ current.tocsr() @ P).tocsr(), B)
        # the coarsest system is tiny; a pseudo-inverse also covers a constant kernel
        self.coarse = np.linalg.pinv(current.toarray(), rcond=1e-10, hermitian=True)
        self.coarse_size = current.shape[0]

    @property
    def n_levels(self) -> int:
        return len(self.levels) + 1

    def _cycle(self, lvl: int, r: np.ndarray) -> np.ndarray:
        if lvl == len(self.levels):
            return self.coarse @ r
        A, S, P = self.levels[lvl]
        x = S.forward(r)
        for _ in range(self.sweeps - 1):
            x += S.forward(r - A @ x)
        x += P @ self._cycle(lvl + 1, P.T @ (r - A @ x))
        for _ in range(self.sweeps):
            x += S.backward(r - A @ x)
        return x

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self._cycle(0, np.asarray(r, dtype=float))
