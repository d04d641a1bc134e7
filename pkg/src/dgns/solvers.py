"""Element-block sparse operators, Krylov solvers and a Newton driver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


PRECONDITIONERS = ("none", "block_jacobi", "block_sor", "block_ssor", "multigrid")


@dataclass
class SolverConfig:
    method: str = "gmres"
    preconditioner: str = "block_sor"
    rtol: float = 1e-10
    atol: float = 0.0
    maxiter: int = 2000
    restart: int = 60
    deflate_constants: bool = False
    relaxation: float = 1.0

    def __post_init__(self):
        if self.rtol <= 0 and self.atol <= 0:
            raise ValueError("need a positive tolerance")
        if self.method not in ("cg", "gmres"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveStats:
    iterations: int = 0
    residual: float = 0.0
    rhs_norm: float = 0.0
    converged: bool = True
    history: list = field(default_factory=list)


# ----------------------------------------------------------------------
# block sparse storage


class BlockPattern:
    """Sorted unique (row, col) block coordinates in BSR layout."""

    def __init__(self, n_rows: int, n_cols: int, rows, cols):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        keys = np.unique(rows * n_cols + cols)
        self.n_rows, self.n_cols = n_rows, n_cols
        self.keys = keys
        self.rows = keys // n_cols
        self.cols = keys % n_cols
        self.indptr = np.searchsorted(self.rows, np.arange(n_rows + 1)).astype(np.int64)
        self.diag_slots = None
        if n_rows == n_cols:
            d = np.searchsorted(keys, np.arange(n_rows) * n_cols + np.arange(n_rows))
            if np.all(keys[np.minimum(d, len(keys) - 1)] == np.arange(n_rows) * (n_cols + 1)):
                self.diag_slots = d

    def __len__(self):
        return len(self.keys)

    def slots(self, rows, cols) -> np.ndarray:
        k = np.asarray(rows, dtype=np.int64) * self.n_cols + np.asarray(cols, dtype=np.int64)
        s = np.searchsorted(self.keys, k)
        if np.any(self.keys[np.minimum(s, len(self.keys) - 1)] != k):
            raise KeyError("block outside the sparsity pattern")
        return s


class BlockSparseMatrix:
    """Element-blocked sparse matrix backed by scipy's BSR format."""

    def __init__(self, pattern: BlockPattern, data: np.ndarray):
        self.pattern = pattern
        self.data = np.ascontiguousarray(data)
        self.block_shape = data.shape[1:]
        self._bsr = None
        self._csr = None

    @classmethod
    def from_blocks(cls, pattern: BlockPattern, rows, cols, blocks) -> "BlockSparseMatrix":
        """Sum the dense ``blocks`` (n, R, C) into the slots given by ``rows``/``cols``."""
        blocks = np.asarray(blocks, dtype=float)
        R, C = blocks.shape[1:]
        slots = pattern.slots(rows, cols)
        flat = (slots[:, None] * (R * C) + np.arange(R * C)[None, :]).ravel()
        data = np.bincount(flat, weights=blocks.reshape(-1), minlength=len(pattern) * R * C)
        return cls(pattern, data.reshape(len(pattern), R, C))

    @classmethod
    def zeros(cls, pattern: BlockPattern, R: int, C: int) -> "BlockSparseMatrix":
        return cls(pattern, np.zeros((len(pattern), R, C)))

    def add_blocks(self, slots: np.ndarray, blocks: np.ndarray) -> None:
        """Accumulate ``blocks`` into ``slots`` in place (slots may repeat)."""
        if len(np.unique(slots)) == len(slots):
            self.data[slots] += blocks
        else:
            np.add.at(self.data, slots, blocks)
        self._bsr = self._csr = None

    @property
    def shape(self):
        R, C = self.block_shape
        return (self.pattern.n_rows * R, self.pattern.n_cols * C)

    @property
    def bsr(self) -> sp.bsr_matrix:
        if self._bsr is None:
            self._bsr = sp.bsr_matrix((self.data, self.pattern.cols, self.pattern.indptr), shape=self.shape)
        return self._bsr

    def tocsr(self) -> sp.csr_matrix:
        if self._csr is None:
            self._csr = self.bsr.tocsr()
        return self._csr

    def toarray(self) -> np.ndarray:
        return self.bsr.toarray()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.bsr @ x

    def __matmul__(self, x):
        return self.matvec(x)

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        return self.tocsr().T @ x

    def diagonal_blocks(self) -> np.ndarray:
        if self.pattern.diag_slots is None:
            raise ValueError("pattern has no diagonal blocks")
        return self.data[self.pattern.diag_slots]

    def _combine(self, other, a, b):
        if other.pattern is not self.pattern:
            raise ValueError("operands must share a block pattern")
        return BlockSparseMatrix(self.pattern, a * self.data + b * other.data)

    def scale_add(self, scale: float, other: "BlockSparseMatrix") -> "BlockSparseMatrix":
        """In place ``self = scale * self + other``; returns self."""
        if other.pattern is not self.pattern:
            raise ValueError("operands must share a block pattern")
        self.data *= scale
        self.data += other.data
        self._bsr = self._csr = None
        return self

    def __add__(self, other):
        return self._combine(other, 1.0, 1.0)

    def __sub__(self, other):
        return self._combine(other, 1.0, -1.0)

    def __mul__(self, scalar):
        return BlockSparseMatrix(self.pattern, scalar * self.data)

    __rmul__ = __mul__

    def norm_max(self) -> float:
        return float(np.abs(self.data).max()) if self.data.size else 0.0


def as_operator(A) -> Callable[[np.ndarray], np.ndarray]:
    if callable(A) and not hasattr(A, "matvec"):
        return A
    if hasattr(A, "matvec"):
        return A.matvec
    return lambda x: A @ x


# ----------------------------------------------------------------------
# preconditioners


class BlockJacobi:
    def __init__(self, A: BlockSparseMatrix):
        self.inv = np.linalg.inv(A.diagonal_blocks())
        self.R = A.block_shape[0]

    def __call__(self, r: np.ndarray) -> np.ndarray:
        rb = r.reshape(-1, self.R)
        return np.einsum("eij,ej->ei", self.inv, rb).ravel()


class BlockSOR:
    """One forward block-SOR sweep from a zero guess: solves (D/omega + L) z = r.

    The system is first scaled by the inverse diagonal blocks so it becomes
    lower triangular at the scalar level, then factorised once with natural
    ordering (a triangular matrix has no fill).
    """

    def __init__(self, A: BlockSparseMatrix, omega: float = 1.0):
        if not 0.0 < omega < 2.0:
            raise ValueError("relaxation must lie in (0, 2)")
        pat = A.pattern
        R = A.block_shape[0]
        self.R = R
        self.omega = omega
        dinv = np.linalg.inv(A.diagonal_blocks())
        self.dinv = dinv
        lower = pat.rows > pat.cols
        data = np.zeros_like(A.data)
        data[lower] = np.einsum("sij,sjk->sik", dinv[pat.rows[lower]], A.data[lower])
        data[pat.diag_slots] = np.eye(R) / omega
        T = sp.bsr_matrix((data, pat.cols, pat.indptr), shape=A.shape).tocsc()
        T.eliminate_zeros()
        self.lu = splu(T, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=False))

    def __call__(self, r: np.ndarray) -> np.ndarray:
        rb = r.reshape(-1, self.R)
        return self.lu.solve(np.einsum("eij,ej->ei", self.dinv, rb).ravel())


class BlockSSOR:
    """Symmetric block SOR: a forward then a backward sweep from a zero guess.

    Symmetric positive definite whenever ``A`` is, so it can precondition CG.
    """

    def __init__(self, A: BlockSparseMatrix, omega: float = 1.0):
        if not 0.0 < omega < 2.0:
            raise ValueError("relaxation must lie in (0, 2)")
        pat = A.pattern
        R = A.block_shape[0]
        self.R = R
        self.omega = omega
        self.diag = A.diagonal_blocks().copy()
        dinv = np.linalg.inv(self.diag)
        self.dinv = dinv
        factors = []
        for part in (pat.rows > pat.cols, pat.rows < pat.cols):
            data = np.zeros_like(A.data)
            data[part] = np.einsum("sij,sjk->sik", dinv[pat.rows[part]], A.data[part])
            data[pat.diag_slots] = np.eye(R) / omega
            T = sp.bsr_matrix((data, pat.cols, pat.indptr), shape=A.shape).tocsc()
            T.eliminate_zeros()
            factors.append(splu(T, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                                options=dict(SymmetricMode=False)))
        self.lower, self.upper = factors

    def forward(self, r: np.ndarray) -> np.ndarray:
        """Solve (D/omega + L) z = r."""
        return self.lower.solve(np.einsum("eij,ej->ei", self.dinv, r.reshape(-1, self.R)).ravel())

    def backward(self, r: np.ndarray) -> np.ndarray:
        """Solve (D/omega + U) z = r."""
        return self.upper.solve(np.einsum("eij,ej->ei", self.dinv, r.reshape(-1, self.R)).ravel())

    def __call__(self, r: np.ndarray) -> np.ndarray:
        y = self.forward(r)
        y = np.einsum("eij,ej->ei", self.diag, y.reshape(-1, self.R)) * ((2.0 - self.omega) / self.omega)
        return self.backward(y.ravel())


def make_preconditioner(A, kind: str, omega: float = 1.0, space=None, operator_on=None):
    """Build a preconditioner.

    ``multigrid`` needs the DG ``space`` of ``A``; ``operator_on(mesh)``
    optionally rediscretises the operator on coarse meshes.
    """
    if kind == "none" or not isinstance(A, BlockSparseMatrix):
        return None
    if kind == "multigrid":
        if space is None:
            raise ValueError("multigrid needs the discrete space of the operator")
        from .multigrid import GeometricMultigrid

        return GeometricMultigrid(A, space, operator_on=operator_on, omega=omega, sweeps=2)
    if kind == "block_jacobi":
        return BlockJacobi(A)
    if kind == "block_sor":
        return BlockSOR(A, omega)
    if kind == "block_ssor":
        return BlockSSOR(A, omega)
    raise ValueError(f"unknown preconditioner {kind!r}")


# ----------------------------------------------------------------------
# Krylov methods


def _deflate(x, z):
    return x - z * (z @ x) if z is not None else x


def cg_solve(A, b, config: SolverConfig | None = None, precond=None, x0=None, nullspace=None):
    """Preconditioned conjugate gradients.

    ``nullspace`` is a unit vector spanning the kernel of a singular SPD
    operator (e.g. element-wise constants for a pure-Neumann problem); the
    right side and every iterate are kept orthogonal to it.
    """
    config = config or SolverConfig(method="cg", preconditioner="block_jacobi")
    apply = as_operator(A)
    if precond is None and config.preconditioner != "none":
        precond = make_preconditioner(A, config.preconditioner, config.relaxation)
    z = None
    if config.deflate_constants or nullspace is not None:
        if nullspace is None:
            raise ValueError("deflation requested without a nullspace vector")
        z = nullspace / np.linalg.norm(nullspace)
    b = _deflate(np.asarray(b, dtype=float), z)
    bnorm = float(np.linalg.norm(b))
    stats = SolveStats(rhs_norm=bnorm)
    if bnorm == 0.0:
        return np.zeros_like(b), stats
    x = np.zeros_like(b) if x0 is None else _deflate(np.array(x0, dtype=float), z)
    r = b - apply(x) if x0 is not None else b.copy()
    r = _deflate(r, z)
    rnorm = float(np.linalg.norm(r))
    stats.history.append(rnorm)
    tol = max(config.rtol * bnorm, config.atol)
    if rnorm <= tol or bnorm == 0.0:
        stats.residual = rnorm
        return x, stats
    s = _deflate(precond(r), z) if precond else r.copy()
    p = s.copy()
    rs = r @ s
    for it in range(1, config.maxiter + 1):
        Ap = _deflate(apply(p), z)
        curv = p @ Ap
        if curv <= 0.0:
            stats.iterations, stats.residual, stats.converged = it, rnorm, False
            raise SolverError(f"cg: nonpositive curvature {curv:.3e} (operator indefinite)", stats)
        alpha = rs / curv
        x += alpha * p
        r -= alpha * Ap
        rnorm = float(np.linalg.norm(r))
        stats.history.append(rnorm)
        if rnorm <= tol:
            stats.iterations, stats.residual = it, rnorm
            return _deflate(x, z), stats
        s = _deflate(precond(r), z) if precond else r
        rs_new = r @ s
        p = s + (rs_new / rs) * p
        rs = rs_new
    stats.iterations, stats.residual, stats.converged = config.maxiter, rnorm, False
    raise SolverError(f"cg: no convergence in {config.maxiter} iterations "
                      f"(residual {rnorm:.3e}, target {tol:.3e})", stats)


def gmres_solve(A, b, precond=None, config: SolverConfig | None = None, x0=None):
    """Restarted GMRES with right preconditioning.

    The convergence test uses the true (unpreconditioned) residual norm.
    """
    config = config or SolverConfig()
    apply = as_operator(A)
    if precond is None and config.preconditioner != "none":
        precond = make_preconditioner(A, config.preconditioner, config.relaxation)
    M = precond if precond is not None else (lambda v: v)
    b = np.asarray(b, dtype=float)
    n = b.size
    bnorm = float(np.linalg.norm(b))
    stats = SolveStats(rhs_norm=bnorm)
    if bnorm == 0.0:
        return np.zeros(n), stats
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - apply(x) if x0 is not None else b.copy()
    beta = float(np.linalg.norm(r))
    stats.history.append(beta)
    tol = max(config.rtol * bnorm, config.atol)
    if beta <= tol or bnorm == 0.0:
        stats.residual = beta
        return x, stats
    m = config.restart
    total = 0
    while total < config.maxiter:
        V = np.empty((m + 1, n))
        Z = np.empty((m, n))
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_end = 0
        for j in range(m):
            Z[j] = M(V[j])
            w = apply(Z[j])
            # classical Gram-Schmidt with one reorthogonalisation pass
            h = V[:j + 1] @ w
            w -= V[:j + 1].T @ h
            h2 = V[:j + 1] @ w
            w -= V[:j + 1].T @ h2
            H[:j + 1, j] = h + h2
            H[j + 1, j] = np.linalg.norm(w)
            if H[j + 1, j] > 0.0:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j_end = j + 1
            stats.history.append(abs(g[j + 1]))
            if abs(g[j + 1]) <= tol or total >= config.maxiter or H[j, j] == 0.0:
                break
        y = np.linalg.solve(np.triu(H[:j_end, :j_end]), g[:j_end])
        x += Z[:j_end].T @ y
        r = b - apply(x)
        beta = float(np.linalg.norm(r))
        if beta <= tol:
            stats.iterations, stats.residual = total, beta
            return x, stats
    stats.iterations, stats.residual, stats.converged = total, beta, False
    raise SolverError(f"gmres: no convergence in {config.maxiter} iterations "
                      f"(residual {beta:.3e}, target {tol:.3e})", stats)


def linear_solve(A, b, config: SolverConfig, precond=None, nullspace=None, x0=None):
    if config.method == "cg":
        return cg_solve(A, b, config, precond=precond, x0=x0, nullspace=nullspace)
    return gmres_solve(A, b, precond=precond, config=config, x0=x0)


# ----------------------------------------------------------------------
# Newton


@dataclass
class NewtonConfig:
    atol: float = 1e-11
    rtol: float = 1e-8
    maxiter: int = 20
    max_backtracks: int = 8
    eta_max: float = 1e-2  # largest linear relative tolerance (inexact Newton)
    eta_min: float = 1e-10

    def forcing(self, rnorm: float, target: float) -> float:
        """Linear tolerance aiming two decades below the nonlinear target."""
        if rnorm <= 0.0:
            return self.eta_min
        return float(min(self.eta_max, max(self.eta_min, 0.01 * target / rnorm)))


@dataclass
class NewtonStats:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    linear_iterations: list = field(default_factory=list)
    converged: bool = True


def newton_solve(residual_fn, jacobian_solve_fn, guess, config: NewtonConfig | None = None):
    """Damped inexact Newton iteration.

    ``jacobian_solve_fn(x, r, eta)`` returns ``(dx, linear_stats)`` solving
    ``J(x) dx = r`` to relative tolerance ``eta``.  A step is halved until
    the residual norm decreases.
    """
    config = config or NewtonConfig()
    x = np.array(guess, dtype=float)
    r = residual_fn(x)
    rnorm = r0 = float(np.linalg.norm(r))
    stats = NewtonStats(residuals=[rnorm])
    for it in range(config.maxiter + 1):
        if rnorm <= config.atol or (it > 0 and rnorm <= config.rtol * r0):
            stats.iterations = it
            return x, stats
        if it == config.maxiter:
            break
        target = max(config.atol, config.rtol * r0)
        dx, lstats = jacobian_solve_fn(x, r, config.forcing(rnorm, target))
        stats.linear_iterations.append(getattr(lstats, "iterations", 0))
        lam = 1.0
        for _ in range(config.max_backtracks + 1):
            x_try = x - lam * dx
            r_try = residual_fn(x_try)
            n_try = float(np.linalg.norm(r_try))
            if np.isfinite(n_try) and n_try < rnorm:
                break
            lam *= 0.5
        else:
            # a linearly exact step can stall at round-off; accept if already tiny
            if n_try <= max(config.atol, 10 * np.finfo(float).eps * max(r0, 1.0)) * 10:
                x, r, rnorm = x_try, r_try, n_try
                stats.residuals.append(rnorm)
                stats.iterations = it + 1
                return x, stats
            stats.iterations, stats.converged = it + 1, False
            raise SolverError(f"newton: line search failed at iteration {it} "
                              f"(residual {rnorm:.3e})", stats)
        x, r, rnorm = x_try, r_try, n_try
        stats.residuals.append(rnorm)
    stats.iterations, stats.converged = config.maxiter, False
    raise SolverError(f"newton: no convergence in {config.maxiter} iterations "
                      f"(residual {rnorm:.3e})", stats)
