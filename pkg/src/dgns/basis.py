"""Orthonormal tensor-product Legendre bases and Gauss quadrature on [0, 1]^d."""

from __future__ import annotations

import itertools
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre


def legendre_1d(n: int, x: np.ndarray) -> np.ndarray:
    """Values of the first ``n + 1`` orthonormal Legendre polynomials on [0, 1].

    Returns an array of shape (n + 1, len(x)).
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((n + 1, x.size))
    for k in range(n + 1):
        c = np.zeros(k + 1)
        c[k] = 1.0
        out[k] = np.sqrt(2 * k + 1) * legendre.legval(2.0 * x.ravel() - 1.0, c)
    return out


def legendre_1d_deriv(n: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros((n + 1, x.size))
    for k in range(1, n + 1):
        c = np.zeros(k + 1)
        c[k] = 1.0
        out[k] = 2.0 * np.sqrt(2 * k + 1) * legendre.legval(2.0 * x.ravel() - 1.0, legendre.legder(c))
    return out


def gauss_1d(q: int) -> tuple[np.ndarray, np.ndarray]:
    """``q``-point Gauss-Legendre rule on [0, 1]; exact up to degree 2q - 1."""
    x, w = legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


class QuadratureRule:
    """Tensor Gauss rule on the reference cube and on its faces."""

    def __init__(self, q: int, dim: int):
        if q < 1:
            raise ValueError("need at least one quadrature point per axis")
        self.q = q
        self.dim = dim
        x, w = gauss_1d(q)
        self.points_1d, self.weights_1d = x, w
        self.points, self.weights = _tensor_rule(x, w, dim)

    @cached_property
    def face_points_tangential(self):
        return _tensor_rule(self.points_1d, self.weights_1d, self.dim - 1)

    def face_points(self, axis: int, side: int) -> np.ndarray:
        """Volume coordinates of the face rule on the face ``xi[axis] == side``."""
        tan, _ = self.face_points_tangential
        pts = np.empty((len(tan), self.dim))
        others = [k for k in range(self.dim) if k != axis]
        pts[:, others] = tan
        pts[:, axis] = float(side)
        return pts

    @property
    def face_weights(self) -> np.ndarray:
        return self.face_points_tangential[1]


def _tensor_rule(x, w, dim):
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    # first coordinate fastest, matching the mode ordering
    pts = np.stack([g.transpose(tuple(range(dim))[::-1]).ravel() for g in grids], axis=1)
    wts = np.prod([g.transpose(tuple(range(dim))[::-1]).ravel() for g in wgrids], axis=0)
    return pts, wts


def multi_indices(degree, dim: int) -> np.ndarray:
    """Exponent tuples with the first axis running fastest.

    ``degree`` may be an int or a per-axis sequence of maximal degrees.
    """
    degs = [degree] * dim if np.isscalar(degree) else list(degree)
    ranges = [range(p + 1) for p in degs]
    return np.array([tup[::-1] for tup in itertools.product(*ranges[::-1])], dtype=int).reshape(-1, dim)


class TensorBasis:
    """Orthonormal basis of Q_{p,d} on the reference cube [0, 1]^d."""

    def __init__(self, degree: int, dim: int):
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        self.degree = degree
        self.dim = dim
        self.indices = multi_indices(degree, dim)
        self.size = len(self.indices)

    def eval(self, points: np.ndarray) -> np.ndarray:
        """Basis values, shape (size, npts)."""
        points = np.atleast_2d(points)
        tables = [legendre_1d(self.degree, points[:, k]) for k in range(self.dim)]
        out = np.ones((self.size, len(points)))
        for k in range(self.dim):
            out *= tables[k][self.indices[:, k]]
        return out

    def eval_grad(self, points: np.ndarray) -> np.ndarray:
        """Reference gradients, shape (dim, size, npts)."""
        points = np.atleast_2d(points)
        vals = [legendre_1d(self.degree, points[:, k]) for k in range(self.dim)]
        ders = [legendre_1d_deriv(self.degree, points[:, k]) for k in range(self.dim)]
        out = np.ones((self.dim, self.size, len(points)))
        for j in range(self.dim):
            for k in range(self.dim):
                tab = ders[k] if j == k else vals[k]
                out[j] *= tab[self.indices[:, k]]
        return out

    def __repr__(self):
        return f"TensorBasis(degree={self.degree}, dim={self.dim})"


def eval_basis(basis: TensorBasis, points) -> np.ndarray:
    return basis.eval(points)


def eval_basis_grad(basis: TensorBasis, points) -> np.ndarray:
    return basis.eval_grad(points)


def element_mass_apply_inverse(block: np.ndarray, volume) -> np.ndarray:
    """Apply the inverse element mass matrix.

    With an orthonormal reference basis the element mass matrix is
    ``|det B_E| * I`` so this is a scale by ``1 / volume``.  ``volume`` may be
    an array broadcasting against the leading (element) axis of ``block``.
    """
    volume = np.asarray(volume, dtype=float)
    return block / volume.reshape(volume.shape + (1,) * (block.ndim - volume.ndim))


def element_mass_apply(block: np.ndarray, volume) -> np.ndarray:
    volume = np.asarray(volume, dtype=float)
    return block * volume.reshape(volume.shape + (1,) * (block.ndim - volume.ndim))
