import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from stokes_homog import fem
from stokes_homog.coeff import CoefficientSet
from stokes_homog.geometry import MacroDomain
from stokes_homog.mesh import HOLE_CLASS, OUTER, TriMesh, mesh_perforated, mesh_rectangle


@pytest.fixture(scope="module")
def two_triangles():
    nodes = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    edges = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
    return TriMesh(nodes, tris, edges, [OUTER] * 4, target_area=1.0)


def stokes(mesh, bc=None, **kw):
    space = fem.build_space(mesh, bc or {OUTER: "dirichlet"}, **kw)
    return space, fem.assemble_saddle(space, CoefficientSet.from_strings())


def test_two_triangle_dof_counts(two_triangles):
    space = fem.build_space(two_triangles, {OUTER: "dirichlet-zero"})
    assert (space.n2, space.n_velocity, space.n_pressure) == (9, 18, 4)
    assert space.n_free_velocity == 2
    free = space.velocity_map.tocsc()
    diag_mid = np.flatnonzero(np.all(np.isclose(space.coords, 0.5), axis=1))[0]
    assert set(free.nonzero()[0]) == {diag_mid, space.n2 + diag_mid}


def test_sparse_solve_matches_dense_elimination():
    space, sys = stokes(mesh_rectangle(MacroDomain(), 1 / 4))
    rhs = fem.load_vector(space, lambda x: np.stack([np.ones(x.shape[:-1]), x[..., 0]], -1))
    u, p = fem.solve_saddle(sys, rhs)
    K = sys.reduced.toarray()
    nu = space.n_free_velocity
    b = np.zeros(len(K))
    b[:nu] = space.velocity_map.T @ rhs
    x = np.linalg.solve(K, b)
    np.testing.assert_allclose(space.velocity_map @ x[:nu], u, atol=1e-13)
    np.testing.assert_allclose(space.pressure_map @ x[nu:nu + space.n_pressure], p, atol=1e-12)


def test_slip_on_vertical_edge_fixes_the_first_component(square):
    m = mesh_perforated(MacroDomain(), square, 0.5, 1 / 16)
    space = fem.build_space(m, {OUTER: "dirichlet", HOLE_CLASS: "slip"})
    T = space.velocity_map.tocsr()
    checked = 0
    for a, n in zip(space.slip_nodes, space.slip_normals):
        if abs(n[1]) < 1e-14:
            assert T[a].nnz == 0           # u1 = 0
            assert T[space.n2 + a].nnz == 1
            checked += 1
    assert checked > 0
    # the four obstacle corners are pinned
    assert len(space.pinned_nodes) == 4


def test_reference_p1_stiffness():
    nodes = np.array([[0, 0], [1, 0], [0, 1]], float)
    m = TriMesh(nodes, np.array([[0, 1, 2]]), np.array([[0, 1], [1, 2], [2, 0]]), [OUTER] * 3)
    space = fem.build_space(m, {OUTER: "natural"})
    G = space.grad_lambda[0]
    K = 0.5 * G @ G.T
    np.testing.assert_allclose(K, 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]), atol=1e-15)


def test_linear_edge_mass():
    L = 0.3
    t, w = fem.EDGE_POINTS, fem.EDGE_WEIGHTS * L
    lin = np.stack([1 - t, t], axis=1)
    M = np.einsum("q,qa,qb->ab", w, lin, lin)
    np.testing.assert_allclose(M, L / 6 * np.array([[2, 1], [1, 2]]), atol=1e-15)


def test_p2_edge_mass_integrates_constants(square):
    m = mesh_perforated(MacroDomain(), square, 0.25, 1 / 32)
    space = fem.build_space(m, {OUTER: "dirichlet", HOLE_CLASS: "slip"})
    M = fem.edge_mass(space, m.tag_mask(HOLE_CLASS))
    one = np.ones(space.n2)
    assert one @ (M @ one) == pytest.approx(9 * 0.5, abs=1e-12)


@pytest.fixture(scope="module")
def cavity():
    m = mesh_rectangle(MacroDomain(), 1 / 8)
    return stokes(m)


def test_constant_field_has_zero_stiffness(cavity):
    space, sys = cavity
    v = np.concatenate([np.full(space.n2, 2.0), np.full(space.n2, -1.0)])
    assert np.abs(sys.A @ v).max() < 1e-12


def test_linear_field_interior_rows_vanish(cavity):
    space, sys = cavity
    v = space.interpolate(lambda x: np.stack([3 * x[:, 0] - x[:, 1], x[:, 0] + 2 * x[:, 1]], 1))
    r = space.velocity_map.T @ (sys.A @ v)
    assert np.abs(r).max() < 1e-10


def test_matrix_symmetry(cavity):
    _, sys = cavity
    d = abs(sys.A - sys.A.T).max()
    assert d <= 1e-12 * abs(sys.A).max()


def test_zero_rhs_gives_zero(cavity):
    space, sys = cavity
    u, p = fem.solve_saddle(sys, np.zeros(space.n_velocity))
    assert not u.any() and not p.any()


def test_energy_identity(cavity):
    space, sys = cavity
    rhs = fem.load_vector(space, lambda x: np.stack([np.sin(3 * x[..., 1]), x[..., 0] ** 2], -1))
    u, p = fem.solve_saddle(sys, rhs)
    lhs = u @ (sys.A @ u)
    work = p @ (sys.B @ u)
    assert lhs == pytest.approx(rhs @ u - work, rel=1e-8)
    assert abs(work) < 1e-12
    mom, div = fem.reduced_residual(sys, u, p, rhs)
    assert mom < 1e-10 and div < 1e-10
    assert abs(space.pressure_mass_vector @ p) < 1e-12


def test_closed_cavity_without_pressure_mean_is_singular():
    m = mesh_rectangle(MacroDomain(), 1 / 4)
    space, sys = stokes(m, pressure_mean=False)
    rhs = fem.load_vector(space, lambda x: np.stack([x[..., 1], 0 * x[..., 0]], -1))
    with pytest.raises(fem.SingularSystemError):
        fem.solve_saddle(sys, rhs)


def test_pure_natural_boundary_needs_velocity_mean():
    m = mesh_rectangle(MacroDomain(), 1 / 4)
    space = fem.build_space(m, {OUTER: "natural"})
    sys = fem.assemble_saddle(space, CoefficientSet.from_strings())
    with pytest.raises(fem.SingularSystemError):
        fem.solve_saddle(sys, fem.load_vector(space, lambda x: np.stack([x[..., 1], x[..., 0]], -1)))


def test_unknown_boundary_kind():
    m = mesh_rectangle(MacroDomain(), 1 / 4)
    with pytest.raises(fem.BoundaryConditionError):
        fem.build_space(m, {OUTER: "sticky"})
    with pytest.raises(fem.BoundaryConditionError):
        fem.build_space(m, {})


def test_norm_examples():
    m = mesh_rectangle(MacroDomain(), 1 / 64)
    space = fem.build_space(m, {OUTER: "dirichlet"})
    one = fem.field_norms(space, np.ones(space.n2))
    assert one.l2 == pytest.approx(1.0, abs=1e-13) and one.h1_semi < 1e-12
    x1 = fem.field_norms(space, space.interpolate(lambda x: x[:, 0]))
    assert x1.h1_semi == pytest.approx(1.0, abs=1e-13)
    s = fem.field_norms(space, space.interpolate(lambda x: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])))
    assert s.l2 == pytest.approx(0.5, abs=1e-4)
    pn = fem.field_norms(space, space.interpolate_pressure(lambda x: x[:, 0]))
    assert pn.l2 == pytest.approx(np.sqrt(1 / 3), abs=1e-12)


def test_point_evaluation_reproduces_quadratics():
    m = mesh_rectangle(MacroDomain(), 1 / 4)
    space = fem.build_space(m, {OUTER: "dirichlet"})
    f = lambda x: np.stack([x[:, 0] ** 2 - x[:, 1], x[:, 0] * x[:, 1]], 1)
    u = space.interpolate(f)
    pts = np.random.default_rng(3).uniform(0, 1, (50, 2))
    vals, grads = fem.evaluate_p2(space, u, pts, gradient=True)
    np.testing.assert_allclose(vals, f(pts), atol=1e-13)
    g = np.stack([np.stack([2 * pts[:, 0], -np.ones(50)], 1), np.stack([pts[:, 1], pts[:, 0]], 1)], 1)
    np.testing.assert_allclose(grads, g, atol=1e-12)
    tri, _ = m.locator.locate(pts)
    H = fem.hessian_p2(space, u, tri)
    np.testing.assert_allclose(H[:, 0], np.broadcast_to([[2, 0], [0, 0]], (50, 2, 2)), atol=1e-11)
    np.testing.assert_allclose(H[:, 1], np.broadcast_to([[0, 1], [1, 0]], (50, 2, 2)), atol=1e-11)


def _inf_sup(h):
    m = mesh_rectangle(MacroDomain(), h)
    space = fem.build_space(m, {OUTER: "dirichlet"})
    K = fem.scalar_stiffness(space, np.eye(2))
    T = space.velocity_map
    A = (T.T @ sp.block_diag([K, K]) @ T).toarray()
    B = (fem.divergence_matrix(space) @ T).toarray()
    Mp = np.zeros((space.n_pressure,) * 2)
    loc = np.einsum("mq,qa,qb->mab", space.qw, space.psi, space.psi)
    for t, l in zip(m.triangles, loc):
        Mp[np.ix_(t, t)] += l
    S = B @ np.linalg.solve(A, B.T)
    from scipy.linalg import eigh
    ev = eigh(S, Mp, eigvals_only=True)
    return float(np.sqrt(ev[1]))    # ev[0] ~ 0 is the constant pressure


def test_inf_sup_constant_is_bounded_below():
    betas = [_inf_sup(h) for h in (1 / 4, 1 / 8, 1 / 16)]
    assert min(betas) >= 0.05
    assert betas[-1] > 0.5 * betas[0]


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(-1, 1), st.floats(-1, 1))
def test_solution_is_linear_in_the_data(scale, a, b):
    m = mesh_rectangle(MacroDomain(), 1 / 4)
    space, sys = stokes(m)
    f1 = fem.load_vector(space, lambda x: np.stack([x[..., 1], -x[..., 0]], -1))
    f2 = fem.load_vector(space, lambda x: np.stack([np.cos(x[..., 0]), x[..., 1] ** 2], -1))
    u1, p1 = fem.solve_saddle(sys, f1)
    u2, p2 = fem.solve_saddle(sys, f2)
    u, p = fem.solve_saddle(sys, scale * (a * f1 + b * f2))
    np.testing.assert_allclose(u, scale * (a * u1 + b * u2), atol=1e-12)
    np.testing.assert_allclose(p, scale * (a * p1 + b * p2), atol=1e-11)
