"""Structured axis-aligned box meshes with oriented faces.

Elements are numbered lexicographically with the x index running fastest.
Every element is the image of the reference cube [0, 1]^d under the affine
map ``x = lower + h * xi`` with a diagonal Jacobian ``diag(h)``.

Interior faces carry a single orientation: the normal is the positive
coordinate direction, ``inside`` is the element on the low side and
``outside`` the one on the high side.  Periodic wrap faces follow the same
rule with ``inside`` the last element along the axis.  Boundary faces carry
the outward normal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2
KIND_NAMES = {INTERIOR: "interior", DIRICHLET: "dirichlet", NEUMANN: "neumann"}
_TAG_CODES = {"dirichlet": DIRICHLET, "neumann": NEUMANN}
AXIS_NAMES = "xyz"


class MeshError(ValueError):
    pass


def side_name(axis: int, high: bool) -> str:
    """Boundary side label, e.g. ``xmin`` or ``ymax``."""
    return f"{AXIS_NAMES[axis]}{'max' if high else 'min'}"


@dataclass(frozen=True)
class Face:
    kind: str
    inside: int
    outside: int
    normal: np.ndarray
    measure: float
    h_e: float
    axis: int


class StructuredMesh:
    """Tensor-product box mesh in 2 or 3 dimensions.

    Parameters
    ----------
    dims
        Cells per axis.
    origin, extent
        Lower and upper corners of the box.
    periodic
        Per-axis periodicity flags.
    boundary_tags
        Maps side labels (``xmin``, ``xmax``, ``ymin``, ...) of every
        non-periodic side to ``"dirichlet"`` or ``"neumann"``.
    nodes
        Optional per-axis node coordinates for graded spacing; overrides the
        uniform subdivision of ``origin``/``extent``.
    """

    def __init__(
        self,
        dims: Sequence[int],
        origin: Sequence[float],
        extent: Sequence[float],
        periodic: Sequence[bool] | None = None,
        boundary_tags: Mapping[str, str] | None = None,
        nodes: Sequence[Sequence[float]] | None = None,
    ):
        dims = tuple(int(n) for n in dims)
        d = len(dims)
        if d not in (1, 2, 3):
            raise MeshError(f"unsupported dimension {d}")
        if len(origin) != d or len(extent) != d:
            raise MeshError("origin/extent length must match dims")
        if any(n < 1 for n in dims):
            raise MeshError(f"every axis needs at least one cell, got {dims}")
        periodic = tuple(bool(p) for p in (periodic or (False,) * d))
        boundary_tags = {k: v.lower() for k, v in (boundary_tags or {}).items()}

        if nodes is None:
            nodes = [np.linspace(origin[k], extent[k], dims[k] + 1) for k in range(d)]
        nodes = [np.asarray(x, dtype=float) for x in nodes]
        for k in range(d):
            if len(nodes[k]) != dims[k] + 1:
                raise MeshError(f"axis {k}: expected {dims[k] + 1} nodes")
            if np.any(np.diff(nodes[k]) <= 0.0):
                raise MeshError(f"axis {k}: nodes must be strictly increasing")
            if periodic[k] and dims[k] < 2:
                raise MeshError(f"periodic axis {k} needs at least two cells")

        for label, tag in boundary_tags.items():
            if tag not in _TAG_CODES:
                raise MeshError(f"unknown boundary tag {tag!r} for {label}")
        for k in range(d):
            for high in (False, True):
                label = side_name(k, high)
                if periodic[k] and label in boundary_tags:
                    raise MeshError(f"periodic axis side {label} must not be tagged")
                if not periodic[k] and label not in boundary_tags:
                    raise MeshError(f"boundary side {label} has no tag")
        known = {side_name(k, h) for k in range(d) for h in (False, True)}
        extra = set(boundary_tags) - known
        if extra:
            raise MeshError(f"tags for nonexistent sides: {sorted(extra)}")

        self.dim = d
        self.dims = dims
        self.nodes = nodes
        self.origin = np.array([x[0] for x in nodes])
        self.extent = np.array([x[-1] for x in nodes])
        self.periodic = periodic
        self.boundary_tags = dict(boundary_tags)
        self._build_elements()
        self._build_faces()

    # ------------------------------------------------------------------
    def _build_elements(self):
        d, dims = self.dim, self.dims
        self.n_elements = int(np.prod(dims))
        idx = np.indices(dims[::-1]).reshape(d, -1)[::-1].T  # x fastest
        self.cell_index = idx
        self.h = np.empty((self.n_elements, d))
        self.lower = np.empty((self.n_elements, d))
        for k in range(d):
            sizes = np.diff(self.nodes[k])
            self.h[:, k] = sizes[idx[:, k]]
            self.lower[:, k] = self.nodes[k][idx[:, k]]
        self.volume = np.prod(self.h, axis=1)
        self.strides = np.cumprod((1,) + dims[:-1])

    def element_id(self, index) -> int:
        return int(np.dot(index, self.strides))

    def _build_faces(self):
        d, dims = self.dim, self.dims
        idx = self.cell_index
        elem = np.arange(self.n_elements)
        kind, inside, outside, axis, sign = [], [], [], [], []

        for k in range(d):
            i = idx[:, k]
            mask = i < dims[k] - 1
            kind.append(np.full(mask.sum(), INTERIOR))
            inside.append(elem[mask])
            outside.append(elem[mask] + self.strides[k])
            axis.append(np.full(mask.sum(), k))
            sign.append(np.ones(mask.sum(), dtype=int))
            if self.periodic[k]:
                wrap = i == dims[k] - 1
                kind.append(np.full(wrap.sum(), INTERIOR))
                inside.append(elem[wrap])
                outside.append(elem[wrap] - (dims[k] - 1) * self.strides[k])
                axis.append(np.full(wrap.sum(), k))
                sign.append(np.ones(wrap.sum(), dtype=int))

        for k in range(d):
            if self.periodic[k]:
                continue
            i = idx[:, k]
            for high in (False, True):
                mask = i == (dims[k] - 1 if high else 0)
                code = _TAG_CODES[self.boundary_tags[side_name(k, high)]]
                kind.append(np.full(mask.sum(), code))
                inside.append(elem[mask])
                outside.append(np.full(mask.sum(), -1))
                axis.append(np.full(mask.sum(), k))
                sign.append(np.full(mask.sum(), 1 if high else -1))

        self.face_kind = np.concatenate(kind).astype(int)
        self.face_inside = np.concatenate(inside).astype(int)
        self.face_outside = np.concatenate(outside).astype(int)
        self.face_axis = np.concatenate(axis).astype(int)
        self.face_sign = np.concatenate(sign).astype(int)
        self.n_faces = len(self.face_kind)

        # reference side of the face seen from the inside element
        self.face_side = (self.face_sign > 0).astype(int)
        self.face_measure = self.volume[self.face_inside] / self.h[self.face_inside, self.face_axis]
        self.face_h_e = np.empty(self.n_faces)
        interior = self.face_kind == INTERIOR
        vol_in = self.volume[self.face_inside]
        vol_out = np.where(interior, self.volume[np.maximum(self.face_outside, 0)], np.inf)
        self.face_h_e = np.minimum(vol_in, vol_out) / self.face_measure

        self.interior_faces = np.flatnonzero(interior)
        self.dirichlet_faces = np.flatnonzero(self.face_kind == DIRICHLET)
        self.neumann_faces = np.flatnonzero(self.face_kind == NEUMANN)
        self.boundary_faces = np.flatnonzero(~interior)

    # ------------------------------------------------------------------
    @property
    def measure(self) -> float:
        return float(np.prod(self.extent - self.origin))

    @property
    def has_neumann(self) -> bool:
        return len(self.neumann_faces) > 0

    def face_normal(self, f: int) -> np.ndarray:
        n = np.zeros(self.dim)
        n[self.face_axis[f]] = self.face_sign[f]
        return n

    def face(self, f: int) -> Face:
        return Face(
            kind=KIND_NAMES[int(self.face_kind[f])],
            inside=int(self.face_inside[f]),
            outside=int(self.face_outside[f]),
            normal=self.face_normal(f),
            measure=float(self.face_measure[f]),
            h_e=float(self.face_h_e[f]),
            axis=int(self.face_axis[f]),
        )

    def faces_of_element(self, e: int) -> np.ndarray:
        return np.flatnonzero((self.face_inside == e) | (self.face_outside == e))

    def to_physical(self, xi: np.ndarray, elements=None) -> np.ndarray:
        """Map reference points ``xi`` (npts, d) to physical space, shape (nel, npts, d)."""
        if elements is None:
            elements = slice(None)
        return self.lower[elements, None, :] + self.h[elements, None, :] * xi[None, :, :]

    def vertices(self) -> np.ndarray:
        """Grid vertex coordinates, x index fastest."""
        grids = np.meshgrid(*self.nodes, indexing="ij")
        return np.stack([g.transpose(tuple(range(self.dim))[::-1]).ravel() for g in grids], axis=1)

    def element_vertices(self) -> np.ndarray:
        """Vertex ids per element in VTK quad/hexahedron order."""
        d = self.dim
        npts = [n + 1 for n in self.dims]
        vstride = np.cumprod([1] + npts[:-1])
        base = self.cell_index @ vstride
        if d == 1:
            corners = [(0,), (1,)]
        elif d == 2:
            corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
        else:
            corners = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                       (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
        offsets = np.array([np.dot(c, vstride) for c in corners])
        return base[:, None] + offsets[None, :]

    def __repr__(self):
        return (f"StructuredMesh(dims={self.dims}, origin={self.origin.tolist()}, "
                f"extent={self.extent.tolist()}, periodic={self.periodic})")


def build_mesh(dims, origin, extent, periodic=None, boundary_tags=None, nodes=None) -> StructuredMesh:
    return StructuredMesh(dims, origin, extent, periodic, boundary_tags, nodes)


def face_h_e(mesh: StructuredMesh, f: int) -> float:
    """Penalty length of face ``f``: min adjacent volume over face measure."""
    return float(mesh.face_h_e[f])


def all_tagged(dim: int, tag: str = "dirichlet") -> dict:
    return {side_name(k, h): tag for k in range(dim) for h in (False, True)}
