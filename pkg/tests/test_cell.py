import json

import numpy as np
import pytest

from stokes_homog import fem
from stokes_homog.cell import (
    PAIRS, EffectiveTensor, boundary_integral, effective_data, effective_q, effective_tensor, energy_q,
    linear_field, self_convergence, solve_cell_problems,
)
from stokes_homog.coeff import CoefficientSet
from stokes_homog.geometry import CellGeometry


def test_no_obstacle_correctors_vanish(canonical):
    sol = solve_cell_problems(CellGeometry.empty(), canonical, 0.1)
    for i, k in PAIRS:
        n = fem.field_norms(sol.space, sol.chi[i, k])
        assert np.hypot(n.l2, n.h1_semi) <= 1e-8
    eye = np.eye(2)
    np.testing.assert_allclose(effective_q(sol), np.einsum("ij,kh->ijkh", eye, eye), atol=1e-8)


def test_square_obstacle_corrector_is_nontrivial(cell_solution):
    chi = cell_solution.chi[0, 0]
    assert cell_solution.energy(chi, chi) > 1e-3


def test_corrector_constraints(cell_solution):
    s = cell_solution.space
    for i, k in PAIRS:
        chi = cell_solution.chi[i, k]
        # periodic: slave dofs equal their masters
        comps = chi.reshape(2, -1)
        assert np.array_equal(comps[:, s.velocity_root], comps)
        assert np.linalg.norm(s.pressure_map.T @ (cell_solution.system.B @ chi)) <= 1e-10
        assert np.abs(comps @ s.velocity_mass_vector).max() <= 1e-12
        mom, div = cell_solution.residuals[(i, k)]
        assert mom < 1e-9 and div < 1e-10


def test_zero_net_flux_through_obstacle(cell_solution):
    m = cell_solution.mesh
    mask = m.tag_mask("HOLE")
    pts, w, basis = fem.edge_quadrature(m, mask)
    dofs = cell_solution.space.boundary_edge_dofs(mask)
    n = m.normals[mask]
    for i, k in PAIRS:
        c = cell_solution.chi[i, k].reshape(2, -1)
        tr = np.stack([np.einsum("qa,ba->bq", basis, c[d][dofs]) for d in range(2)], -1)
        flux = np.sum(w * np.einsum("bqd,bd->bq", tr, n))
        assert abs(flux) <= 1e-10


def test_tensor_structure(tensor):
    q = tensor.q
    assert tensor.symmetry_defect() <= 1e-8
    assert tensor.min_eigenvalue > 1e-6
    assert abs(q[0, 0, 0, 0] - q[1, 1, 1, 1]) <= 1e-8
    assert 0 < q[0, 0, 0, 0] <= 0.75


def test_energy_route_agrees(cell_solution, tensor):
    np.testing.assert_allclose(energy_q(cell_solution), tensor.q, atol=1e-10)


def test_energy_identity_for_random_gradients(cell_solution, tensor):
    rng = np.random.default_rng(7)
    s = cell_solution.space
    for _ in range(20):
        z = rng.normal(size=(2, 2))   # z[j, h]
        W = sum(z[j, h] * (linear_field(s, j, h) - cell_solution.chi[j, h]) for j, h in PAIRS)
        lhs = np.einsum("ijkh,jh,ik->", tensor.q, z, z)
        assert lhs == pytest.approx(cell_solution.energy(W, W), rel=1e-10)
        assert lhs > 0


def test_null_function_insensitivity(cell_solution, tensor):
    s = cell_solution.space
    shifted = cell_solution.chi.copy()
    shifted[0, 1, : s.n2] += 3.0
    shifted[1, 0, s.n2:] -= 1.5
    moved = type(cell_solution)(cell_solution.cell, cell_solution.coeffs, cell_solution.h,
                                cell_solution.mesh, s, cell_solution.system, shifted,
                                cell_solution.pressure)
    np.testing.assert_allclose(effective_q(moved), tensor.q, atol=1e-13)


def test_rotation_symmetry_of_correctors(cell_solution):
    # chi_22(y) = R chi_11(R^T y) for the quarter turn R; checked pointwise
    y = np.random.default_rng(5).uniform(-0.5, 0.5, (200, 2))
    y = y[np.abs(y).max(1) > 0.3]
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    v = cell_solution.evaluate(y)
    vr = cell_solution.evaluate(y @ R)   # R^T y for each row
    np.testing.assert_allclose(v[:, 1, 1], vr[:, 0, 0] @ R.T, atol=5e-3)


def test_effective_data_closed_forms(square, canonical):
    th, f = effective_data(canonical, square)
    assert th == 2.0
    assert tuple(f) == (0.75, 0.0)
    c = CoefficientSet.from_strings(theta="2+cos(2*pi*y1)")
    th, _ = effective_data(c, square)
    assert th == pytest.approx(4 + 2 / np.pi, abs=1e-10)


def test_effective_data_exact_for_cubics(square):
    c = CoefficientSet.from_strings(theta="1+y1^3+y2^2", f=("y1^2", "y1*y2^2+1"))
    th, f = effective_data(c, square)
    # |dT| = 2, int_dT y2^2 = 2 * (1/2 * 1/16) + 2 * (1/3 * 2/64) ... computed edge by edge
    edge_h = 0.5 * 0.25 ** 2          # horizontal edges: y2 = +-1/4
    edge_v = 2 * 0.25 ** 3 / 3        # vertical edges: int y2^2 over [-1/4, 1/4]
    assert th == pytest.approx(2 + 2 * edge_h + 2 * edge_v, abs=1e-14)
    assert f[0] == pytest.approx(1 / 12 - 1 / 192, abs=1e-14)
    assert f[1] == pytest.approx(0.75, abs=1e-14)


def test_theta_tilde_bounded_below_by_alpha0(square):
    c = CoefficientSet.from_strings(theta="2+cos(2*pi*y1)", alpha0=1.0)
    th, _ = effective_data(c, square)
    assert th >= c.alpha0 * square.perimeter


def test_boundary_integral_of_one_is_perimeter(square):
    assert boundary_integral(square, lambda a, b: np.ones_like(a)) == pytest.approx(2.0, abs=1e-14)


# Extrapolated from nested meshes h = 0.08, 0.04, 0.02 (frozen regression baseline).
RICHARDSON = {(0, 0, 0, 0): 0.7304875864290, (0, 0, 1, 1): 0.6027173824947,
              (0, 1, 0, 1): 0.0195124135710, (0, 1, 1, 0): 0.0180701134051}


@pytest.fixture(scope="module")
def nested(square, canonical):
    return self_convergence(square, canonical, 0.08, 3)


def test_self_convergence(nested):
    assert nested.h == [0.08, 0.04, 0.02]
    assert nested.decreasing()


def test_symmetry_zero_entries_vanish_on_reflected_meshes(nested):
    for q in nested.q:
        mask = np.ones(q.shape, bool)
        for idx in RICHARDSON:
            for key in (idx, idx[::-1], (idx[1], idx[0], idx[3], idx[2]), (idx[2], idx[3], idx[0], idx[1])):
                mask[key] = False
        mask[1, 1, 1, 1] = mask[1, 1, 0, 0] = False
        assert np.abs(q[mask]).max() <= 1e-12


def test_richardson_baseline(nested):
    r = nested.richardson()
    for idx, v in RICHARDSON.items():
        assert r[idx] == pytest.approx(v, rel=1e-9)
    assert r[1, 1, 1, 1] == pytest.approx(r[0, 0, 0, 0], rel=1e-12)


def test_refined_empty_cell_stays_exact(canonical):
    r = self_convergence(CellGeometry.empty(), canonical, 0.2, 3)
    for q in r.q:
        assert np.allclose(q, np.einsum("ij,kh->ijkh", np.eye(2), np.eye(2)), atol=1e-10)


def test_json_round_trip(tmp_path, tensor):
    path = tmp_path / "effective.json"
    path.write_text(json.dumps(tensor.to_dict()))
    back = EffectiveTensor.load(path)
    assert np.array_equal(back.q, tensor.q)
    assert back.theta_tilde == tensor.theta_tilde
    assert np.array_equal(back.f_tilde, tensor.f_tilde)
    assert len([k for k in tensor.to_dict()["q"]]) == 16
