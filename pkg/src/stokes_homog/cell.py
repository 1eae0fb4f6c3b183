"""Periodic cell problems on Y* and the effective coefficients they produce."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import fem
from .coeff import CoefficientSet
from .geometry import CellGeometry
from .mesh import HOLE_CLASS, PERIODIC_X, PERIODIC_Y, TriMesh, boundary_loop, mesh_polygon, mesh_unit_cell, refine_uniform

PAIRS = ((0, 0), (0, 1), (1, 0), (1, 1))


def linear_field(space: fem.DofSpace, i: int, k: int) -> np.ndarray:
    """Interpolant of P_ik(y) = y_i e_k (exact in P2)."""
    u = np.zeros(space.n_velocity)
    u[k * space.n2:(k + 1) * space.n2] = space.coords[:, i]
    return u


@dataclass(eq=False)
class CellSolution:
    """Correctors chi[i][k] (full P2 vectors on the cell mesh) with their pressures."""

    cell: CellGeometry
    coeffs: CoefficientSet
    h: float
    mesh: TriMesh
    space: fem.DofSpace
    system: fem.SaddleSystem
    chi: np.ndarray
    pressure: np.ndarray
    residuals: dict = field(default_factory=dict)
    _extension: object = field(default=None, repr=False)

    def corrector(self, i: int, k: int) -> np.ndarray:
        return self.chi[i, k]

    def energy(self, u: np.ndarray, v: np.ndarray) -> float:
        """Cell bilinear form on full coefficient vectors."""
        return float(u @ (self.system.A @ v))

    def extension(self):
        """Correctors extended into the obstacle by a Stokes Dirichlet solve.

        Returns ``(space, fields)`` on the obstacle mesh, or ``None`` when the
        cell has no obstacle.  Only needed to evaluate chi(x/eps) at points of
        the boundary strip, where cut obstacles are fluid.
        """
        if not self.cell.has_obstacle:
            return None
        if self._extension is None:
            # reuse the cell mesh's obstacle polyline so boundary nodes coincide
            hole = mesh_polygon([tuple(v) for v in boundary_loop(self.mesh, HOLE_CLASS)], self.h)
            flat = [self.chi[i, k] for i, k in PAIRS]
            space, ext = fem.dirichlet_extension(hole, self.space.coords, flat)
            self._extension = (space, np.array(ext).reshape(2, 2, -1))
        return self._extension

    def evaluate(self, y: np.ndarray, gradient: bool = False):
        """chi_ik at periodic points y (n, 2): values (n, 2, 2, 2) [i, k, comp].

        With ``gradient`` also returns d chi^m_ik / dy_l as (n, 2, 2, 2, 2)
        [i, k, m, l].  Points inside the obstacle use the Stokes extension.
        """
        y = np.asarray(y, dtype=float).reshape(-1, 2)
        y = y - np.round(y)
        vals = np.zeros((len(y), 2, 2, 2))
        grads = np.zeros((len(y), 2, 2, 2, 2))
        inside = self.cell.contains(y) if self.cell.has_obstacle else np.zeros(len(y), bool)
        parts = [(self.space, self.chi, ~inside)]
        if inside.any():
            ext_space, ext = self.extension()
            parts.append((ext_space, ext, inside))
        for space, fields, sel in parts:
            if not sel.any():
                continue
            tri, bary = space.mesh.locator.locate(y[sel])
            for i, k in PAIRS:
                v, g = fem.evaluate_p2(space, fields[i, k], None, tri, bary, gradient=True)
                vals[sel, i, k] = v
                grads[sel, i, k] = g
        return (vals, grads) if gradient else vals


def cell_bc(cell: CellGeometry) -> dict:
    bc = {PERIODIC_X: "periodic", PERIODIC_Y: "periodic"}
    if cell.has_obstacle:
        bc[HOLE_CLASS] = "natural"
    return bc


def solve_cell_problems(cell: CellGeometry, c: CoefficientSet, h: float,
                        mesh: TriMesh | None = None) -> CellSolution:
    """Solve the four periodic cell problems with one shared factorisation.

    chi_ik solves a(chi, w) = a(P_ik, w) for all periodic test fields w on
    Y*, with natural conditions on the obstacle, zero discrete divergence,
    and zero mean per velocity component.
    """
    m = mesh_unit_cell(cell, h) if mesh is None else mesh
    space = fem.build_space(m, cell_bc(cell), velocity_mean=True)
    sys = fem.assemble_saddle(space, c, fem.CellScaling())
    chi = np.zeros((2, 2, space.n_velocity))
    pres = np.zeros((2, 2, space.n_pressure))
    residuals = {}
    for i, k in PAIRS:
        rhs = sys.A @ linear_field(space, i, k)
        u, p = fem.solve_saddle(sys, rhs)
        chi[i, k], pres[i, k] = u, p
        residuals[(i, k)] = fem.reduced_residual(sys, u, p, rhs)
    return CellSolution(cell, c, float(h), m, space, sys, chi, pres, residuals)


@dataclass
class EffectiveTensor:
    """Constant homogenised coefficients q[i, j, k, h], theta_tilde, f_tilde (0-based indices)."""

    q: np.ndarray
    theta_tilde: float
    f_tilde: np.ndarray
    h: float | None = None
    preset: str | None = None

    @property
    def matrix(self) -> np.ndarray:
        """M[(i, k), (j, h)] = q[i, j, k, h] with pairs ordered (0,0), (0,1), (1,0), (1,1)."""
        return np.transpose(self.q, (0, 2, 1, 3)).reshape(4, 4)

    @property
    def min_eigenvalue(self) -> float:
        M = self.matrix
        return float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())

    def symmetry_defect(self) -> float:
        """max |q_ijkh - q_jihk| / max |q|."""
        d = np.abs(self.q - np.transpose(self.q, (1, 0, 3, 2))).max()
        return float(d / max(np.abs(self.q).max(), 1e-300))

    def to_dict(self) -> dict:
        entries = {
            f"q{i + 1}{j + 1}{k + 1}{l + 1}": float(self.q[i, j, k, l])
            for i in range(2) for j in range(2) for k in range(2) for l in range(2)
        }
        return {
            "q": entries,
            "theta_tilde": float(self.theta_tilde),
            "f_tilde": [float(v) for v in self.f_tilde],
            "h": self.h,
            "preset": self.preset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EffectiveTensor":
        q = np.zeros((2, 2, 2, 2))
        for key, v in d["q"].items():
            i, j, k, l = (int(ch) - 1 for ch in key[1:])
            q[i, j, k, l] = v
        return cls(q, float(d["theta_tilde"]), np.array(d["f_tilde"], dtype=float),
                   d.get("h"), d.get("preset"))

    @classmethod
    def load(cls, path) -> "EffectiveTensor":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def identity(cls, theta_tilde: float = 0.0, f_tilde=(0.0, 0.0)) -> "EffectiveTensor":
        eye = np.eye(2)
        return cls(np.einsum("ij,kh->ijkh", eye, eye), float(theta_tilde), np.asarray(f_tilde, float))


def effective_q(sol: CellSolution) -> np.ndarray:
    """q_ijkh = delta_kh int a_ij - sum_l int a_il d_l chi^k_jh, by assembly quadrature."""
    s = sol.space
    y = s.qp
    a = sol.coeffs.a_at(y[..., 0], y[..., 1])
    w = s.qw
    mean_a = np.einsum("mq,mqij->ij", w, a)
    q = np.einsum("ij,kh->ijkh", mean_a, np.eye(2))
    for j, hh in PAIRS:
        _, g = fem.at_quadrature(s, sol.chi[j, hh])  # (m, nq, k, l)
        q[:, j, :, hh] -= np.einsum("mq,mqil,mqkl->ik", w, a, g)
    return q


def energy_q(sol: CellSolution) -> np.ndarray:
    """Independent route: q_ijkh = a(P_jh - chi_jh, P_ik - chi_ik)."""
    s = sol.space
    W = {(i, k): linear_field(s, i, k) - sol.chi[i, k] for i, k in PAIRS}
    q = np.zeros((2, 2, 2, 2))
    for i, k in PAIRS:
        for j, hh in PAIRS:
            q[i, j, k, hh] = sol.energy(W[(j, hh)], W[(i, k)])
    return q


def _edge_gauss(n_sub: int = 64):
    t, w = np.polynomial.legendre.leggauss(5)
    t = 0.5 * (t + 1)
    w = 0.5 * w
    s = (np.arange(n_sub)[:, None] + t[None, :]) / n_sub
    return s.ravel(), np.tile(w, n_sub) / n_sub


def boundary_integral(cell: CellGeometry, fn, n_sub: int = 64) -> float:
    """Integral of fn(y1, y2) over the obstacle boundary by composite Gauss rules."""
    if not cell.has_obstacle:
        return 0.0
    v = cell.as_array()
    t, w = _edge_gauss(n_sub)
    total = 0.0
    for a, b in zip(v, np.roll(v, -1, axis=0)):
        p = a[None, :] + t[:, None] * (b - a)[None, :]
        total += np.linalg.norm(b - a) * float(np.sum(w * fn(p[:, 0], p[:, 1])))
    return total


def effective_data(c: CoefficientSet, cell: CellGeometry, mesh: TriMesh | None = None,
                   h: float = 0.05) -> tuple[float, np.ndarray]:
    """theta_tilde = int_dT theta, f_tilde = int_Y* f.

    f_tilde is |Y*| (exact) times the quadrature mean of f, so constant
    forcing gives f * |Y*| without round-off from summing triangle areas.
    """
    theta = boundary_integral(cell, c.theta_at)
    m = mesh_unit_cell(cell, h) if mesh is None else mesh
    p = np.einsum("qv,mvd->mqd", fem.TRI_POINTS, m.nodes[m.triangles])
    w = m.signed_areas[:, None] * fem.TRI_WEIGHTS[None, :]
    f = c.f_at(p[..., 0], p[..., 1])
    mean = np.einsum("mq,mqk->k", w, f) / np.einsum("mq,mqk->k", w, np.ones_like(f))
    return float(theta), float(cell.fluid_area) * mean


def effective_tensor(sol: CellSolution, c: CoefficientSet | None = None) -> EffectiveTensor:
    c = sol.coeffs if c is None else c
    theta, f = effective_data(c, sol.cell, sol.mesh)
    return EffectiveTensor(effective_q(sol), theta, f, sol.h, c.name)


@dataclass
class SelfConvergence:
    """q on nested meshes h0, h0/2, ... with the extrapolated limit."""

    h: list[float]
    q: list[np.ndarray]

    @property
    def differences(self) -> list[np.ndarray]:
        return [np.abs(b - a) for a, b in zip(self.q, self.q[1:])]

    def decreasing(self, floor: float = 1e-12) -> bool:
        """Entrywise |q(h) - q(h/2)| decreasing; differences below ``floor`` count as converged."""
        d = self.differences
        return all(np.all((n < p) | (np.maximum(n, p) <= floor)) for p, n in zip(d, d[1:]))

    def observed_order(self) -> np.ndarray:
        d0, d1 = self.differences[-2:]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where((d0 > 1e-12) & (d1 > 1e-12), np.log2(d0 / d1), np.nan)

    def richardson(self) -> np.ndarray:
        """Entrywise Aitken extrapolation of the last three values."""
        q0, q1, q2 = self.q[-3:]
        den = (q2 - q1) - (q1 - q0)
        safe = np.abs(den) > 1e-14
        return np.where(safe, q2 - (q2 - q1) ** 2 / np.where(safe, den, 1.0), q2)


def self_convergence(cell: CellGeometry, c: CoefficientSet, h0: float = 0.08,
                     levels: int = 3) -> SelfConvergence:
    """Effective q on a mesh of size h0 and its uniform refinements.

    Nested meshes keep the discrete spaces nested, so the differences
    measure discretisation error rather than remeshing noise.
    """
    m = mesh_unit_cell(cell, h0)
    hs, qs = [], []
    for level in range(levels):
        h = h0 / 2 ** level
        qs.append(effective_q(solve_cell_problems(cell, c, h, mesh=m)))
        hs.append(h)
        if level + 1 < levels:
            m = refine_uniform(m)
    return SelfConvergence(hs, qs)
