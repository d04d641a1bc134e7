import numpy as np
import pytest

from dgns.forms import (DGSpace, Discretization, PenaltyConfig, assemble_a_scalar, assemble_b, assemble_b_alt,
                        assemble_r)
from dgns.verify import layouts, unit_mesh
from dgns.mesh import build_mesh

from oracles import b_form, r_vector, sipg_form

LAYOUTS = ("dirichlet", "mixed", "periodic")


def _graded_mesh(layout):
    nodes = [np.array([0.0, 0.2, 0.5, 1.0]), np.array([0.0, 0.3, 1.0])]
    return build_mesh((3, 2), (0.0, 0.0), (1.0, 1.0), nodes=nodes, **layouts(2)[layout])


@pytest.mark.parametrize("layout", LAYOUTS)
@pytest.mark.parametrize("p", [1, 2])
def test_sipg_matches_loop_oracle(layout, p):
    mesh = _graded_mesh(layout)
    space = DGSpace(mesh, p, 1)
    pen = PenaltyConfig(alpha=4.0)
    A = assemble_a_scalar(space, pen).toarray()
    rng = np.random.default_rng(1)
    for _ in range(3):
        u, z = rng.standard_normal((2, mesh.n_elements, space.nm))
        ref = sipg_form(mesh, p, pen.sigma(p, 2), u, z, mesh.dirichlet_faces)
        assert z.ravel() @ A @ u.ravel() == pytest.approx(ref, rel=1e-11, abs=1e-11)


@pytest.mark.parametrize("layout", LAYOUTS)
def test_b_matches_loop_oracle(layout):
    mesh = _graded_mesh(layout)
    vs = DGSpace(mesh, 2, 2)
    ps = DGSpace(mesh, 1, 1, vs.quad)
    B = assemble_b(vs, ps).toarray()
    rng = np.random.default_rng(2)
    v = rng.standard_normal((mesh.n_elements, 2, vs.nm))
    q = rng.standard_normal((mesh.n_elements, ps.nm))
    assert q.ravel() @ B @ v.ravel() == pytest.approx(b_form(mesh, 2, 1, v, q), rel=1e-11)


@pytest.mark.parametrize("dims", [(3, 4), (2, 2, 2)])
@pytest.mark.parametrize("layout", LAYOUTS)
@pytest.mark.parametrize("p", [1, 2, 3])
def test_b_equals_integrated_by_parts_form(dims, layout, p):
    mesh = unit_mesh(dims, layout)
    vs = DGSpace(mesh, p, mesh.dim)
    ps = DGSpace(mesh, p - 1, 1, vs.quad)
    B, Balt = assemble_b(vs, ps).toarray(), assemble_b_alt(vs, ps).toarray()
    assert np.abs(B - Balt).max() <= 1e-12 * np.abs(B).max()


@pytest.mark.parametrize("layout", ["dirichlet", "mixed"])
@pytest.mark.parametrize("p", [1, 2, 3])
def test_sipg_symmetric_positive_definite(layout, p):
    A = assemble_a_scalar(DGSpace(unit_mesh((4, 4), layout), p, 1), PenaltyConfig(alpha=4.0)).toarray()
    assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()
    assert np.linalg.eigvalsh(A).min() > 0


def test_periodic_sipg_kernel_is_constants():
    space = DGSpace(unit_mesh((4, 4), "periodic"), 2, 1)
    A = assemble_a_scalar(space, PenaltyConfig()).toarray()
    c = space.constant_vector()
    assert np.abs(A @ c).max() < 1e-12
    lam = np.linalg.eigvalsh(A)
    assert lam[0] < 1e-10 < lam[1]


def test_r_matches_loop_oracle():
    mesh = _graded_mesh("mixed")
    ps = DGSpace(mesh, 1, 1, DGSpace(mesh, 2, 2).quad)

    def g(x, t):
        return np.stack([np.sin(x[:, 1] + t), x[:, 0] ** 2], axis=1)

    np.testing.assert_allclose(assemble_r(ps, g, 0.2), r_vector(mesh, 1, g, 0.2), atol=1e-13)


def test_b_annihilates_constants_on_periodic_mesh():
    disc = Discretization(unit_mesh((4, 4), "periodic"), 2)
    v = disc.vspace.project(lambda x, t: np.ones_like(x)).ravel()
    assert np.abs(disc.B @ v).max() < 1e-13


def test_mass_matrix_is_volume_times_identity():
    disc = Discretization(_graded_mesh("dirichlet"), 2)
    M = disc.M.toarray()
    expected = np.repeat(disc.mesh.volume, disc.vspace.block)
    np.testing.assert_allclose(M, np.diag(expected), atol=1e-14)


def test_penalty_validation():
    with pytest.raises(ValueError):
        PenaltyConfig(alpha=0.0)
    with pytest.raises(ValueError):
        PenaltyConfig(epsilon=2)
    assert PenaltyConfig(alpha=4.0).sigma(2, 2) == 4.0 * 2 * 3
