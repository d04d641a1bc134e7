import numpy as np
import pytest

from dgns.convection import ConvectionOperator
from dgns.forms import Discretization
from dgns.multigrid import GeometricMultigrid, coarsen_axes, coarsen_mesh, embedding_1d, prolongation
from dgns.solvers import (BlockPattern, BlockSparseMatrix, NewtonConfig, SolverConfig, SolverError, cg_solve,
                          gmres_solve, make_preconditioner, newton_solve)
from dgns.verify import unit_mesh

from oracles import dense_solve


@pytest.fixture(scope="module")
def disc8():
    return Discretization(unit_mesh((8, 8), "mixed"), 2)


def _stage_matrix(disc, a=0.05):
    return disc.M * 1.0 + disc.A * a


def test_block_matrix_products():
    rng = np.random.default_rng(0)
    pat = BlockPattern(3, 3, [0, 1, 2, 0, 2], [0, 1, 2, 2, 1])
    A = BlockSparseMatrix.from_blocks(pat, [0, 1, 2, 0, 2, 0], [0, 1, 2, 2, 1, 0], rng.standard_normal((6, 2, 2)))
    D = A.toarray()
    x = rng.standard_normal(6)
    np.testing.assert_allclose(A @ x, D @ x, atol=1e-14)
    np.testing.assert_allclose(A.rmatvec(x), D.T @ x, atol=1e-14)
    B = BlockSparseMatrix(pat, rng.standard_normal((5, 2, 2)))
    np.testing.assert_allclose((A - B * 2.0).toarray(), D - 2 * B.toarray())
    C = BlockSparseMatrix(pat, A.data.copy()).scale_add(3.0, B)
    np.testing.assert_allclose(C.toarray(), 3 * D + B.toarray())
    Z = BlockSparseMatrix.zeros(pat, 2, 2)
    Z.add_blocks(np.array([0, 0, 4]), np.ones((3, 2, 2)))
    assert Z.data[0, 0, 0] == 2.0 and Z.data[4, 1, 1] == 1.0
    with pytest.raises(KeyError):
        pat.slots([1], [0])


@pytest.mark.parametrize("kind", ["none", "block_jacobi", "block_ssor", "multigrid"])
def test_cg_matches_dense_solve(disc8, kind):
    K = _stage_matrix(disc8)
    b = np.random.default_rng(1).standard_normal(K.shape[0])
    ref = dense_solve(K.toarray(), b)
    prec = make_preconditioner(K, kind, space=disc8.vspace)
    x, stats = cg_solve(K, b, SolverConfig(method="cg", preconditioner=kind, rtol=1e-12), precond=prec)
    assert stats.converged
    np.testing.assert_allclose(x, ref, atol=1e-9 * np.abs(ref).max())


@pytest.mark.parametrize("kind", ["block_jacobi", "block_sor"])
def test_gmres_matches_dense_on_nonsymmetric_system(disc8, kind):
    op = ConvectionOperator(disc8.vspace)
    rng = np.random.default_rng(2)
    v = rng.standard_normal(disc8.vspace.ndofs)
    J = op.jacobian(v, lambda x, t: np.zeros_like(x)).scale_add(0.1, _stage_matrix(disc8))
    b = rng.standard_normal(J.shape[0])
    x, stats = gmres_solve(J, b, config=SolverConfig(preconditioner=kind, rtol=1e-12))
    ref = dense_solve(J.toarray(), b)
    np.testing.assert_allclose(x, ref, atol=1e-9 * np.abs(ref).max())
    assert np.linalg.norm(J @ x - b) <= 1e-12 * np.linalg.norm(b) * 1.01


def test_cg_and_gmres_agree(disc8):
    K = _stage_matrix(disc8)
    b = np.random.default_rng(3).standard_normal(K.shape[0])
    x1, _ = cg_solve(K, b, SolverConfig(method="cg", preconditioner="block_jacobi", rtol=1e-12))
    x2, _ = gmres_solve(K, b, config=SolverConfig(rtol=1e-12))
    np.testing.assert_allclose(x1, x2, atol=1e-9)


def test_deflated_cg_on_singular_poisson():
    disc = Discretization(unit_mesh((6, 6), "periodic"), 2)
    alpha = disc.alpha
    z = disc.pspace.constant_vector()
    z /= np.linalg.norm(z)
    b = np.random.default_rng(4).standard_normal(alpha.shape[0])
    b -= z * (z @ b)
    cfg = SolverConfig(method="cg", preconditioner="multigrid", rtol=1e-12)
    prec = make_preconditioner(alpha, "multigrid", space=disc.pspace)
    x, stats = cg_solve(alpha, b, cfg, precond=prec, nullspace=z)
    ref = np.linalg.lstsq(alpha.toarray(), b, rcond=None)[0]
    assert abs(z @ x) < 1e-12
    np.testing.assert_allclose(x, ref - z * (z @ ref), atol=1e-9 * np.abs(ref).max())


def test_zero_rhs_returns_zero(disc8):
    K = _stage_matrix(disc8)
    x0 = np.ones(K.shape[0])
    for solve in (lambda: cg_solve(K, np.zeros(K.shape[0]), x0=x0),
                  lambda: gmres_solve(K, np.zeros(K.shape[0]), x0=x0)):
        x, _ = solve()
        assert not x.any()


def test_solver_failure_raises(disc8):
    K = _stage_matrix(disc8)
    b = np.ones(K.shape[0])
    with pytest.raises(SolverError):
        cg_solve(K, b, SolverConfig(method="cg", preconditioner="none", rtol=1e-14, maxiter=2))
    with pytest.raises(SolverError):
        cg_solve(K * -1.0, b, SolverConfig(method="cg", preconditioner="none"))


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(method="bicg")
    with pytest.raises(ValueError):
        SolverConfig(preconditioner="amg")
    with pytest.raises(ValueError):
        make_preconditioner(BlockSparseMatrix(BlockPattern(1, 1, [0], [0]), np.eye(2)[None]), "block_sor", 2.5)


def test_newton_converges_quadratically():
    def residual(x):
        return np.array([x[0] ** 2 + x[1] - 3.0, x[0] - x[1] ** 3 + 7.0])

    def jac_solve(x, r, eta):
        J = np.array([[2 * x[0], 1.0], [1.0, -3 * x[1] ** 2]])
        return np.linalg.solve(J, r), None

    x, stats = newton_solve(residual, jac_solve, np.array([3.0, 3.0]), NewtonConfig(rtol=1e-14, atol=1e-14))
    assert np.linalg.norm(residual(x)) < 1e-13
    res = np.array(stats.residuals)
    assert len(res) >= 4
    # quadratic: the exponent of the last contractions approaches two
    rates = np.log(res[2:-1] / res[1:-2]) / np.log(res[1:-2] / res[:-3])
    assert rates[-1] > 1.7


# ----------------------------------------------------------------------
# multigrid


@pytest.mark.parametrize("p", [0, 1, 3])
def test_embedding_reproduces_parent_polynomial(p):
    from dgns.basis import legendre_1d

    E = embedding_1d(p)
    c = np.random.default_rng(5).standard_normal(p + 1)
    x = np.linspace(0, 1, 7)
    for child in (0, 1):
        parent_vals = c @ legendre_1d(p, 0.5 * (x + child))
        np.testing.assert_allclose((E[child] @ c) @ legendre_1d(p, x), parent_vals, atol=1e-13)


def test_prolongation_is_exact_on_coarse_functions():
    fine = unit_mesh((4, 2, 2), "mixed")
    coarse = coarsen_mesh(fine)
    assert coarse.dims == (2, 1, 1)
    fd, cd = Discretization(fine, 2), Discretization(coarse, 2)
    P, cdims = prolongation(fine.cell_index, fine.dims, 2, 3)
    assert cdims == coarse.dims

    def f(x, t):
        return np.stack([x[:, 0] ** 2 * x[:, 1], x[:, 2] - x[:, 0] * x[:, 1] * x[:, 2], x[:, 1] ** 2], axis=1)

    np.testing.assert_allclose(P @ cd.vspace.project(f).ravel(), fd.vspace.project(f).ravel(), atol=1e-13)


def test_periodic_axes_keep_two_cells():
    assert coarsen_axes((2, 4, 3), (True, True, False)).tolist() == [False, True, False]
    assert coarsen_mesh(unit_mesh((2, 2), "periodic")).dims == (2, 2)


def test_vcycle_is_symmetric_positive_definite(disc8):
    K = _stage_matrix(disc8).toarray()
    S = _stage_matrix(disc8)
    mg = GeometricMultigrid(S, disc8.vspace)
    assert mg.n_levels >= 3
    n = K.shape[0]
    rng = np.random.default_rng(6)
    X = rng.standard_normal((n, 6))
    MX = np.column_stack([mg(x) for x in X.T])
    G = X.T @ MX
    np.testing.assert_allclose(G, G.T, atol=1e-10 * np.abs(G).max())
    assert np.linalg.eigvalsh(0.5 * (G + G.T)).min() > 0


def test_rediscretised_multigrid_is_mesh_independent():
    its = []
    for n in (8, 16, 32):
        disc = Discretization(unit_mesh((n, n), "mixed"), 2)
        alpha = disc.alpha
        prec = make_preconditioner(alpha, "multigrid", space=disc.pspace,
                                   operator_on=lambda m: disc.on_mesh(m).alpha)
        b = np.random.default_rng(7).standard_normal(alpha.shape[0])
        _, stats = cg_solve(alpha, b, SolverConfig(method="cg", rtol=1e-10), precond=prec)
        its.append(stats.iterations)
    assert max(its) <= 30
    assert its[-1] <= its[0] + 6
