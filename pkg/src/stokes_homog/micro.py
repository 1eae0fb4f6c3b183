"""Oscillating Stokes problem on the perforated domain and the extension into its holes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import fem
from .coeff import CoefficientSet
from .geometry import CellGeometry, GeometryError, HoleLattice, MacroDomain, hole_lattice
from .mesh import HOLE_CLASS, OUTER, TriMesh, hole_polygon_float, mesh_perforated, mesh_polygon

HOLE_CONDITIONS = ("slip", "natural")


@dataclass(eq=False)
class MicroSolution:
    eps: float
    domain: MacroDomain
    cell: CellGeometry
    coeffs: CoefficientSet
    h: float
    lattice: HoleLattice
    mesh: TriMesh
    space: fem.DofSpace
    system: fem.SaddleSystem
    u: np.ndarray
    p: np.ndarray
    rhs: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def velocity(self, x: np.ndarray, gradient: bool = False):
        return fem.evaluate_p2(self.space, self.u, x, gradient=gradient)

    def pressure_extended(self, x: np.ndarray) -> np.ndarray:
        """Pressure extended by zero: p in the fluid, 0 at points inside holes."""
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        tri, bary = self.mesh.locator.locate(x, strict=False)
        out = np.zeros(len(x))
        ok = tri >= 0
        out[ok] = fem.evaluate_p1(self.space, self.p, None, tri[ok], bary[ok])
        return out

    @property
    def fluid_area(self) -> float:
        return self.mesh.area


def micro_bc(hole_bc: str = "slip") -> dict:
    if hole_bc not in HOLE_CONDITIONS:
        raise ValueError(f"hole condition must be one of {HOLE_CONDITIONS}, got {hole_bc!r}")
    return {OUTER: "dirichlet", HOLE_CLASS: hole_bc}


def solve_micro(
    domain: MacroDomain, cell: CellGeometry, c: CoefficientSet, eps, h: float,
    mesh: TriMesh | None = None, hole_bc: str = "slip",
) -> MicroSolution:
    """Solve the perforated problem with data a(x/eps), eps*theta(x/eps) on holes, f(x/eps).

    ``hole_bc="slip"`` imposes u.n = 0 nodewise on the holes (the model
    problem); ``"natural"`` drops it and keeps only the Robin friction.
    """
    lat = hole_lattice(domain, cell, eps)
    e = float(lat.eps)
    m = mesh_perforated(domain, cell, lat.eps, h) if mesh is None else mesh
    space = fem.build_space(m, micro_bc(hole_bc))
    sys = fem.assemble_saddle(space, c, fem.MicroScaling(e))
    rhs = fem.load_vector(space, lambda x: c.f_at(x[..., 0] / e, x[..., 1] / e))
    u, p = fem.solve_saddle(sys, rhs)
    mom, div = fem.reduced_residual(sys, u, p, rhs)
    sol = MicroSolution(e, domain, cell, c, float(h), lat, m, space, sys, u, p, rhs,
                        {"momentum_residual": mom, "divergence": div})
    sol.diagnostics.update(zip(("grad_norm", "surf_norm", "pressure_norm"), apriori_norms(sol)))
    return sol


def apriori_norms(sol: MicroSolution) -> tuple[float, float, float]:
    """(||grad u||_L2, eps * int_holes |u|^2, ||p||_L2) on the perforated domain."""
    n = fem.field_norms(sol.space, sol.u)
    surf = sol.eps * (n.hole_l2 or 0.0) ** 2
    return n.h1_semi, surf, fem.field_norms(sol.space, sol.p).l2


@dataclass(eq=False)
class ExtendedField:
    """Velocity on the perforated mesh plus Stokes extensions on every hole."""

    sol: MicroSolution
    u: np.ndarray
    hole_space: fem.DofSpace
    shifts: np.ndarray
    hole_fields: np.ndarray
    hole_system: fem.SaddleSystem

    def gradient_norm(self) -> float:
        """||grad (P u)||_L2 over the whole domain."""
        total = fem.field_norms(self.sol.space, self.u).h1_semi ** 2
        for v in self.hole_fields:
            total += fem.field_norms(self.hole_space, v).h1_semi ** 2
        return float(np.sqrt(total))

    def gradient_constant(self) -> float:
        base = fem.field_norms(self.sol.space, self.u).h1_semi
        return self.gradient_norm() / base if base > 0 else 0.0

    def hole_divergence(self) -> float:
        """max over holes of ||B v|| on the hole meshes."""
        if not len(self.hole_fields):
            return 0.0
        return float(max(np.linalg.norm(self.hole_system.B @ v) for v in self.hole_fields))

    def trace_mismatch(self) -> float:
        """max |extension - u| over hole-boundary nodes (identically zero by construction)."""
        s = self.hole_space
        bn = s.dirichlet_nodes
        tree = cKDTree(self.sol.space.coords)
        worst = 0.0
        src = self.u.reshape(2, -1)
        for shift, v in zip(self.shifts, self.hole_fields):
            _, idx = tree.query(s.coords[bn] + shift)
            w = v.reshape(2, -1)[:, bn]
            worst = max(worst, float(np.abs(w - src[:, idx]).max()))
        return worst

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Values at points of the whole domain (holes use the extension)."""
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        tri, bary = self.sol.mesh.locator.locate(x, strict=False)
        out = np.zeros((len(x), 2))
        ok = tri >= 0
        if ok.any():
            out[ok] = fem.evaluate_p2(self.sol.space, self.u, None, tri[ok], bary[ok])
        rest = np.flatnonzero(~ok)
        if len(rest):
            e = self.sol.eps
            verts = self.sol.cell.as_array()
            for j, (shift, v) in enumerate(zip(self.shifts, self.hole_fields)):
                if not len(rest):
                    break
                local = x[rest] - shift
                t2, b2 = self.hole_space.mesh.locator.locate(local, strict=False)
                hit = t2 >= 0
                if hit.any():
                    out[rest[hit]] = fem.evaluate_p2(self.hole_space, v, None, t2[hit], b2[hit])
                    rest = rest[~hit]
            if len(rest):
                raise GeometryError(f"{len(rest)} point(s) outside the domain")
        return out


def extend_field(sol: MicroSolution, u: np.ndarray | None = None) -> ExtendedField:
    """Extend a velocity on the perforated mesh into all holes.

    Every hole is a translate of one reference hole, so one reference mesh
    and one factorisation serve all of them; the hole-boundary nodes of the
    translated reference mesh coincide with those of the perforated mesh.
    """
    u = sol.u if u is None else np.asarray(u, dtype=float)
    lat = sol.lattice
    if not lat.members:
        empty = np.zeros((0, 0))
        ref = mesh_polygon([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)], 0.2)
        space = fem.build_space(ref, {OUTER: "dirichlet"})
        return ExtendedField(sol, u, space, np.zeros((0, 2)), empty,
                             fem.assemble_saddle(space, scale=fem.MacroScaling(np.zeros((2, 2, 2, 2)))))
    for k in lat.members:
        poly = hole_polygon_float(lat, sol.cell, k)
        if not all(0 < x < float(sol.domain.L1) and 0 < y < float(sol.domain.L2) for x, y in poly):
            raise GeometryError(f"hole {k} is not interior to the domain")
    k0 = lat.members[0]
    ref = mesh_polygon(hole_polygon_float(lat, sol.cell, k0), sol.h)
    shifts = np.array([[lat.eps * (k[0] - k0[0]), lat.eps * (k[1] - k0[1])] for k in lat.members], dtype=float)
    space = fem.build_space(ref, {OUTER: "dirichlet"})
    eye = np.eye(2)
    sys = fem.assemble_saddle(space, scale=fem.MacroScaling(np.einsum("ij,kh->ijkh", eye, eye)))
    bn = space.dirichlet_nodes
    tree = cKDTree(sol.space.coords)
    src = u.reshape(2, -1)
    tol = 1e-9 * max(1.0, float(sol.domain.L1))
    fields = []
    for shift in shifts:
        dist, idx = tree.query(space.coords[bn] + shift)
        if np.any(dist > tol):
            raise GeometryError(f"hole boundary does not match the perforated mesh (gap {dist.max():.3g})")
        g = np.zeros(space.n_velocity)
        g[bn] = src[0, idx]
        g[space.n2 + bn] = src[1, idx]
        v, _ = fem.solve_saddle(sys, -(sys.A @ g), -(sys.B @ g))
        fields.append(v + g)
    return ExtendedField(sol, u, space, shifts, np.array(fields), sys)


def extend_into_holes(sol: MicroSolution) -> ExtendedField:
    return extend_field(sol)
