"""Taylor-Hood (P2 velocity / P1 pressure) machinery.

Velocity coefficients are stored component-major: ``u[k * n2 + a]`` is
component k at P2 node a, where P2 nodes are the mesh vertices followed by
the edge midpoints.  Constraints (Dirichlet zeros, nodewise slip, periodic
identification) are applied strongly through a prolongation matrix from a
reduced coefficient vector; mean-value constraints enter as Lagrange
multipliers.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .mesh import HOLE_CLASS, OUTER, PERIODIC_X, PERIODIC_Y, TriMesh, tag_class

log = logging.getLogger(__name__)

# 6-point degree-4 rule on triangles (barycentric points, weights summing to 1)
_A1, _W1 = 0.44594849091596488632, 0.22338158967801146570
_A2, _W2 = 0.09157621350977074346, 0.10995174365532186764
TRI_POINTS = np.array([
    [1 - 2 * _A1, _A1, _A1], [_A1, 1 - 2 * _A1, _A1], [_A1, _A1, 1 - 2 * _A1],
    [1 - 2 * _A2, _A2, _A2], [_A2, 1 - 2 * _A2, _A2], [_A2, _A2, 1 - 2 * _A2],
])
TRI_WEIGHTS = np.array([_W1, _W1, _W1, _W2, _W2, _W2])

# 3-point Gauss-Legendre on [0, 1]
EDGE_POINTS = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
EDGE_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0

_EDGE_LOCAL = ((0, 1), (1, 2), (2, 0))

BC_KINDS = ("dirichlet", "slip", "natural", "periodic")
_ALIASES = {"dirichlet-zero": "dirichlet", "dirichlet_zero": "dirichlet"}


class BoundaryConditionError(ValueError):
    pass


class SingularSystemError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


def p2_values(lam: np.ndarray) -> np.ndarray:
    """P2 basis at barycentric points ``lam`` (..., 3) -> (..., 6)."""
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
    ], axis=-1)


def p2_dlam(lam: np.ndarray) -> np.ndarray:
    """Derivatives of the P2 basis w.r.t. the barycentric coordinates, (..., 6, 3)."""
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    z = np.zeros_like(l0)
    rows = [
        [4 * l0 - 1, z, z],
        [z, 4 * l1 - 1, z],
        [z, z, 4 * l2 - 1],
        [4 * l1, 4 * l0, z],
        [z, 4 * l2, 4 * l1],
        [4 * l2, z, 4 * l0],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


# constant second derivatives w.r.t. barycentric coordinates, (6, 3, 3)
P2_D2LAM = np.zeros((6, 3, 3))
for _i in range(3):
    P2_D2LAM[_i, _i, _i] = 4.0
for _n, (_i, _j) in enumerate(_EDGE_LOCAL):
    P2_D2LAM[3 + _n, _i, _j] = P2_D2LAM[3 + _n, _j, _i] = 4.0


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n)

    def find(self, a: int) -> int:
        p = self.parent
        root = a
        while p[root] != root:
            root = p[root]
        while p[a] != root:
            p[a], a = root, p[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            lo, hi = min(ra, rb), max(ra, rb)
            self.parent[hi] = lo


def normalize_bc(mesh: TriMesh, bc) -> dict[str, str]:
    """Validate a boundary-condition assignment ``{tag class: kind}``.

    ``bc`` may also be a sequence of ``(tag class, kind)`` pairs; assigning
    two different kinds to one class is an error.
    """
    items = bc.items() if isinstance(bc, Mapping) else list(bc)
    out: dict[str, str] = {}
    for cls, kind in items:
        kind = _ALIASES.get(kind, kind)
        if kind not in BC_KINDS:
            raise BoundaryConditionError(f"unknown boundary condition kind {kind!r}")
        if cls in out and out[cls] != kind:
            raise BoundaryConditionError(f"inconsistent conditions on {cls}: {out[cls]} and {kind}")
        out[cls] = kind
    present = mesh.tag_classes()
    for cls in present:
        if cls not in out:
            raise BoundaryConditionError(f"no boundary condition for tag class {cls}")
    for cls in (PERIODIC_X, PERIODIC_Y):
        if cls in present and out[cls] != "periodic":
            raise BoundaryConditionError(f"{cls} edges only support the periodic condition")
    for cls, kind in out.items():
        if kind == "periodic" and cls not in (PERIODIC_X, PERIODIC_Y):
            raise BoundaryConditionError(f"periodic condition is only valid on periodic faces, not {cls}")
    return out


@dataclass(eq=False)
class DofSpace:
    mesh: TriMesh
    bc: dict[str, str]
    velocity_map: sp.csr_matrix
    pressure_map: sp.csr_matrix
    pressure_mean: bool
    velocity_mean: bool
    dirichlet_nodes: np.ndarray
    slip_nodes: np.ndarray
    slip_normals: np.ndarray
    pinned_nodes: np.ndarray
    velocity_root: np.ndarray
    pressure_root: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.mesh.n_nodes

    @property
    def n_edges(self) -> int:
        return len(self.mesh.all_edges)

    @property
    def n2(self) -> int:
        """Scalar P2 node count (vertices + edges)."""
        return self.n_vertices + self.n_edges

    @property
    def n_velocity(self) -> int:
        return 2 * self.n2

    @property
    def n_pressure(self) -> int:
        return self.n_vertices

    @property
    def n_free_velocity(self) -> int:
        return self.velocity_map.shape[1]

    @cached_property
    def tri_dofs(self) -> np.ndarray:
        return np.hstack([self.mesh.triangles, self.n_vertices + self.mesh.triangle_edges])

    @cached_property
    def coords(self) -> np.ndarray:
        e = self.mesh.all_edges
        mid = 0.5 * (self.mesh.nodes[e[:, 0]] + self.mesh.nodes[e[:, 1]])
        return np.vstack([self.mesh.nodes, mid])

    @cached_property
    def grad_lambda(self) -> np.ndarray:
        """(m, 3, 2) gradients of the barycentric coordinates per triangle."""
        p = self.mesh.nodes[self.mesh.triangles]
        area2 = 2 * self.mesh.signed_areas
        g = np.empty((len(p), 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            g[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / area2
            g[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / area2
        return g

    @cached_property
    def qp(self) -> np.ndarray:
        """(m, nq, 2) physical quadrature points."""
        p = self.mesh.nodes[self.mesh.triangles]
        return np.einsum("qv,mvd->mqd", TRI_POINTS, p)

    @cached_property
    def qw(self) -> np.ndarray:
        """(m, nq) quadrature weights including the element area."""
        return self.mesh.signed_areas[:, None] * TRI_WEIGHTS[None, :]

    @cached_property
    def phi(self) -> np.ndarray:
        return p2_values(TRI_POINTS)

    @cached_property
    def dphi(self) -> np.ndarray:
        """(m, nq, 6, 2) physical P2 gradients at quadrature points."""
        return np.einsum("qal,mld->mqad", p2_dlam(TRI_POINTS), self.grad_lambda)

    @cached_property
    def psi(self) -> np.ndarray:
        return TRI_POINTS

    @cached_property
    def pressure_mass_vector(self) -> np.ndarray:
        v = np.zeros(self.n_vertices)
        np.add.at(v, self.mesh.triangles, (self.mesh.signed_areas / 3)[:, None])
        return v

    @cached_property
    def velocity_mass_vector(self) -> np.ndarray:
        """Integrals of the scalar P2 basis functions."""
        loc = np.einsum("mq,qa->ma", self.qw, self.phi)
        v = np.zeros(self.n2)
        np.add.at(v, self.tri_dofs, loc)
        return v

    def boundary_edge_dofs(self, mask: np.ndarray | None = None) -> np.ndarray:
        """(b, 3) P2 nodes (start, end, midpoint) of tagged edges."""
        edges = self.mesh.edges if mask is None else self.mesh.edges[mask]
        mid = self.n_vertices + self.mesh.edge_index(edges)
        return np.column_stack([edges, mid])

    def interpolate(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Nodal P2 interpolant; ``fn`` maps (n, 2) points to (n,) or (n, 2)."""
        vals = np.asarray(fn(self.coords), dtype=float)
        if vals.ndim == 2:
            return vals.T.ravel()
        return vals

    def interpolate_pressure(self, fn) -> np.ndarray:
        return np.asarray(fn(self.mesh.nodes), dtype=float)


def build_space(
    mesh: TriMesh, bc, pressure_mean: bool | str = "auto", velocity_mean: bool = False,
    parallel_tol: float = 1e-10,
) -> DofSpace:
    """Discrete velocity/pressure space with strongly imposed constraints.

    ``pressure_mean="auto"`` adds the zero-mean pressure functional exactly
    when constant pressures are invisible to the divergence form, i.e. when
    no boundary class carries the natural condition.
    """
    bc = normalize_bc(mesh, bc)
    nv = mesh.n_nodes
    n2 = nv + len(mesh.all_edges)
    edge_dofs = np.column_stack([mesh.edges, nv + mesh.edge_index(mesh.edges)]) if len(mesh.edges) else np.zeros((0, 3), dtype=np.int64)
    normals = mesh.normals
    classes = [tag_class(t) for t in mesh.tags]

    dirichlet = np.zeros(n2, dtype=bool)
    slip_dirs: dict[int, list[np.ndarray]] = {}
    for row, cls in zip(range(len(classes)), classes):
        kind = bc[cls]
        if kind == "dirichlet":
            dirichlet[edge_dofs[row]] = True
        elif kind == "slip":
            for a in edge_dofs[row]:
                slip_dirs.setdefault(int(a), []).append(normals[row])

    uf = _UnionFind(n2)
    ufp = _UnionFind(nv)
    if len(mesh.periodic_pairs):
        if not any(k == "periodic" for k in bc.values()):
            raise BoundaryConditionError("mesh has periodic pairs but no periodic condition")
        d = mesh.nodes[mesh.periodic_pairs[:, 1]] - mesh.nodes[mesh.periodic_pairs[:, 0]]
        is_x = np.abs(d[:, 0]) > np.abs(d[:, 1])
        for (m, s) in mesh.periodic_pairs:
            uf.union(int(m), int(s))
            ufp.union(int(m), int(s))
        for cls, sel in ((PERIODIC_X, is_x), (PERIODIC_Y, ~is_x)):
            smap = {int(s): int(m) for m, s in mesh.periodic_pairs[sel]}
            for row in np.flatnonzero([c == cls for c in classes]):
                a, b = (int(v) for v in mesh.edges[row])
                if a in smap and b in smap:
                    master = mesh.edge_index(np.array([[smap[a], smap[b]]]))[0]
                    if master < 0:
                        raise BoundaryConditionError("periodic faces do not mirror edge for edge")
                    uf.union(int(nv + master), int(edge_dofs[row, 2]))

    root = np.array([uf.find(a) for a in range(n2)])
    proot = np.array([ufp.find(a) for a in range(nv)])
    if np.any(dirichlet & (root != np.arange(n2))) or np.any(dirichlet[root] != dirichlet):
        raise BoundaryConditionError("periodic nodes cannot carry Dirichlet conditions")

    slip_nodes, slip_normals, pinned = [], [], []
    for a in sorted(slip_dirs):
        if dirichlet[a]:
            continue
        uniq: list[np.ndarray] = []
        for n in slip_dirs[a]:
            if all(abs(n[0] * u[1] - n[1] * u[0]) > parallel_tol for u in uniq):
                uniq.append(n)
        if len(uniq) >= 2:
            pinned.append(a)
        else:
            slip_nodes.append(a)
            slip_normals.append(uniq[0])
    slip_nodes = np.array(slip_nodes, dtype=np.int64)
    slip_normals = np.array(slip_normals).reshape(-1, 2)
    pinned = np.array(pinned, dtype=np.int64)
    fixed = dirichlet.copy()
    fixed[pinned] = True
    is_slip = np.zeros(n2, dtype=bool)
    is_slip[slip_nodes] = True

    rows, cols, vals = [], [], []
    col = 0
    root_col = {}
    for k in range(2):
        for a in range(n2):
            if fixed[a] or is_slip[a] or root[a] != a:
                continue
            root_col[(k, a)] = col
            col += 1
    for a, n in zip(slip_nodes, slip_normals):
        t = (-n[1], n[0])
        rows += [a, n2 + a]
        cols += [col, col]
        vals += [t[0], t[1]]
        col += 1
    for k in range(2):
        for a in range(n2):
            if fixed[a] or is_slip[a]:
                continue
            rows.append(k * n2 + a)
            cols.append(root_col[(k, int(root[a]))])
            vals.append(1.0)
    vmap = sp.csr_matrix((vals, (rows, cols)), shape=(2 * n2, col))
    vmap.eliminate_zeros()

    proots = np.unique(proot)
    pcol = -np.ones(nv, dtype=np.int64)
    pcol[proots] = np.arange(len(proots))
    pmap = sp.csr_matrix((np.ones(nv), (np.arange(nv), pcol[proot])), shape=(nv, len(proots)))

    if pressure_mean == "auto":
        pressure_mean = "natural" not in bc.values()
    return DofSpace(
        mesh, bc, vmap, pmap, bool(pressure_mean), bool(velocity_mean),
        np.flatnonzero(dirichlet), slip_nodes, slip_normals, pinned, root, proot,
    )


# ---------------------------------------------------------------------------
# coefficient scalings


@dataclass(frozen=True)
class MicroScaling:
    """Coefficients at x/eps and boundary mass eps * theta(x/eps) on holes."""
    eps: float


@dataclass(frozen=True)
class CellScaling:
    """Coefficients at y, no boundary mass."""


@dataclass(frozen=True)
class MacroScaling:
    """Constant fourth-order tensor q[i, j, k, h] and volume mass theta_tilde."""
    q: np.ndarray
    theta: float = 0.0


# ---------------------------------------------------------------------------
# assembly


def _assemble(dofs_r, dofs_c, loc, shape) -> sp.csr_matrix:
    r = np.broadcast_to(dofs_r[:, :, None], loc.shape)
    c = np.broadcast_to(dofs_c[:, None, :], loc.shape)
    return sp.csr_matrix((loc.ravel(), (r.ravel(), c.ravel())), shape=shape)


def scalar_stiffness(space: DofSpace, C) -> sp.csr_matrix:
    """K[a, b] = sum_ij int C_ij d_j phi_b d_i phi_a, C constant (2, 2) or (m, nq, 2, 2)."""
    C = np.asarray(C, dtype=float)
    G = space.dphi
    if C.ndim == 2:
        loc = np.einsum("mq,mqai,ij,mqbj->mab", space.qw, G, C, G)
    else:
        loc = np.einsum("mq,mqai,mqij,mqbj->mab", space.qw, G, C, G)
    return _assemble(space.tri_dofs, space.tri_dofs, loc, (space.n2, space.n2))


def scalar_mass(space: DofSpace, weight=None) -> sp.csr_matrix:
    w = space.qw if weight is None else space.qw * weight
    loc = np.einsum("mq,qa,qb->mab", w, space.phi, space.phi)
    return _assemble(space.tri_dofs, space.tri_dofs, loc, (space.n2, space.n2))


def edge_quadrature(mesh: TriMesh, mask: np.ndarray):
    """Points (b, 3, 2), weights (b, 3) and P2 trace basis (3 points x 3 nodes) of tagged edges.

    Node order per edge is (start vertex, end vertex, midpoint).
    """
    edges = mesh.edges[mask]
    p0 = mesh.nodes[edges[:, 0]]
    p1 = mesh.nodes[edges[:, 1]]
    L = np.linalg.norm(p1 - p0, axis=1)
    t = EDGE_POINTS
    pts = p0[:, None, :] + t[None, :, None] * (p1 - p0)[:, None, :]
    w = L[:, None] * EDGE_WEIGHTS[None, :]
    basis = np.stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)], axis=1)
    return pts, w, basis


def edge_mass(space: DofSpace, mask: np.ndarray, weight: Callable | None = None) -> sp.csr_matrix:
    pts, w, basis = edge_quadrature(space.mesh, mask)
    if weight is not None:
        w = w * weight(pts)
    loc = np.einsum("bq,qa,qc->bac", w, basis, basis)
    dofs = space.boundary_edge_dofs(mask)
    return _assemble(dofs, dofs, loc, (space.n2, space.n2))


def divergence_matrix(space: DofSpace) -> sp.csr_matrix:
    """B[p_a, (k, b)] = -int psi_a d_k phi_b."""
    blocks = []
    for k in range(2):
        loc = -np.einsum("mq,qa,mqb->mab", space.qw, space.psi, space.dphi[..., k])
        blocks.append(_assemble(space.mesh.triangles, space.tri_dofs, loc, (space.n_vertices, space.n2)))
    return sp.hstack(blocks).tocsr()


def load_vector(space: DofSpace, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """F[(k, b)] = int f_k phi_b with ``f`` mapping points (..., 2) -> (..., 2)."""
    vals = np.asarray(f(space.qp), dtype=float)
    out = np.zeros(2 * space.n2)
    for k in range(2):
        loc = np.einsum("mq,mq,qa->ma", space.qw, vals[..., k], space.phi)
        np.add.at(out[k * space.n2:(k + 1) * space.n2], space.tri_dofs, loc)
    return out


@dataclass(eq=False)
class SaddleSystem:
    """Block system [[A, B^T], [B, 0]] on the unconstrained coefficient vectors."""

    space: DofSpace
    A: sp.csr_matrix
    B: sp.csr_matrix
    ordering: str = "MMD_AT_PLUS_A"
    _lu: object = field(default=None, repr=False)
    _robust: bool = field(default=False, repr=False)

    @cached_property
    def reduced(self) -> sp.csc_matrix:
        s = self.space
        T, Tp = s.velocity_map, s.pressure_map
        Ar = (T.T @ self.A @ T).tocsr()
        Br = (Tp.T @ self.B @ T).tocsr()
        nu, npr = Ar.shape[0], Br.shape[0]
        blocks = [[Ar, Br.T], [Br, None]]
        extra = []
        if s.velocity_mean:
            mv = s.velocity_mass_vector
            C = sp.vstack([
                sp.csr_matrix(np.concatenate([mv, np.zeros(s.n2)])[None, :]) @ T,
                sp.csr_matrix(np.concatenate([np.zeros(s.n2), mv])[None, :]) @ T,
            ])
            extra.append((C, None))
        if s.pressure_mean:
            extra.append((None, sp.csr_matrix(s.pressure_mass_vector[None, :]) @ Tp))
        for cu, cp in extra:
            rows = (cu if cu is not None else cp).shape[0]
            blocks[0].append(cu.T if cu is not None else sp.csr_matrix((nu, rows)))
            blocks[1].append(cp.T if cp is not None else sp.csr_matrix((npr, rows)))
        for cu, cp in extra:
            rows = (cu if cu is not None else cp).shape[0]
            row = [cu if cu is not None else sp.csr_matrix((rows, nu)),
                   cp if cp is not None else sp.csr_matrix((rows, npr))]
            row += [None] * len(extra)
            blocks.append(row)
        return sp.bmat(blocks, format="csc")

    @property
    def n_multipliers(self) -> int:
        return 2 * self.space.velocity_mean + self.space.pressure_mean

    def check_nullspace(self) -> None:
        """Raise for the known singular configurations before factorising."""
        s = self.space
        T, Tp = s.velocity_map, s.pressure_map
        BrT = (Tp.T @ self.B @ T).T.tocsr()
        scale = abs(self.B).max() if self.B.nnz else 1.0
        adj = sp.csr_matrix(
            (np.ones(3 * s.mesh.n_triangles),
             (s.mesh.triangles[:, [0, 1, 2]].ravel(), s.mesh.triangles[:, [1, 2, 0]].ravel())),
            shape=(s.n_vertices, s.n_vertices),
        )
        ncomp, labels = connected_components(adj, directed=False)
        null = 0
        for c in range(ncomp):
            chi = (labels == c).astype(float)
            red = np.asarray(Tp.T @ chi) > 0
            if np.abs(BrT @ red.astype(float)).max(initial=0.0) <= 1e-10 * scale * max(1, s.n_vertices) ** 0.5:
                null += 1
        if null > int(s.pressure_mean):
            raise SingularSystemError(
                f"{null} constant-pressure null mode(s) with {int(s.pressure_mean)} mean "
                "constraint(s): missing pressure mean constraint or disconnected fluid region"
            )
        if not s.velocity_mean:
            for k in range(2):
                const = np.zeros(s.n_velocity)
                const[k * s.n2:(k + 1) * s.n2] = 1.0
                # a constant is representable iff no node is fixed or slip
                red = np.asarray(T.T @ const).ravel() > 0
                red = red.astype(float)
                if np.allclose(T @ red, const):
                    Ar_c = T.T @ (self.A @ (T @ red))
                    if np.abs(Ar_c).max(initial=0.0) <= 1e-10 * max(abs(self.A).max(), 1.0):
                        raise SingularSystemError(
                            "constant velocities are in the null space: add the velocity mean constraint"
                        )

    def factorize(self, robust: bool = False):
        """SuperLU factorisation of the reduced matrix, cached.

        The default uses ``self.ordering`` in symmetric mode with diagonal
        preference; minimum degree on A+A^T keeps fill lowest for
        component-decoupled viscosity blocks, COLAMD for coupled ones.
        ``robust`` switches to COLAMD with partial pivoting.
        """
        if self._lu is None or (robust and not self._robust):
            self.check_nullspace()
            opts = (dict(permc_spec="COLAMD", diag_pivot_thresh=1.0) if robust else
                    dict(permc_spec=self.ordering, diag_pivot_thresh=0.0,
                         options=dict(SymmetricMode=True)))
            try:
                self._lu = spla.splu(self.reduced, **opts)
                self._robust = robust
            except RuntimeError as exc:
                raise SingularSystemError(f"singular reduced system: {exc}") from exc
        return self._lu


def assemble_saddle(space: DofSpace, c=None, scale=CellScaling()) -> SaddleSystem:
    """Assemble the viscosity form (+ boundary or volume mass) and the divergence coupling."""
    n2 = space.n2
    if isinstance(scale, MacroScaling):
        q = np.asarray(scale.q, dtype=float)
        blocks = [[scalar_stiffness(space, q[:, :, k, h]) for h in range(2)] for k in range(2)]
        A = sp.bmat(blocks).tocsr()
        coupled = bool(np.any(q[:, :, 0, 1]) or np.any(q[:, :, 1, 0]))
        if scale.theta:
            M = scalar_mass(space) * scale.theta
            A = A + sp.block_diag([M, M])
    else:
        if isinstance(scale, MicroScaling):
            eps = float(scale.eps)
            y = space.qp / eps
        else:
            eps = None
            y = space.qp
        C = c.a_at(y[..., 0], y[..., 1])
        K = scalar_stiffness(space, C)
        A = sp.block_diag([K, K]).tocsr()
        if eps is not None:
            mask = space.mesh.tag_mask(HOLE_CLASS)
            if mask.any():
                M = edge_mass(space, mask, lambda p: eps * c.theta_at(p[..., 0] / eps, p[..., 1] / eps))
                A = A + sp.block_diag([M, M])
        coupled = False
    return SaddleSystem(space, A.tocsr(), divergence_matrix(space),
                        ordering="COLAMD" if coupled else "MMD_AT_PLUS_A")


def solve_saddle(sys: SaddleSystem, rhs_u: np.ndarray, rhs_p: np.ndarray | None = None):
    """Solve for (u, p) on the full coefficient vectors; mean constraints are homogeneous."""
    s = sys.space
    T, Tp = s.velocity_map, s.pressure_map
    rhs_u = np.asarray(rhs_u, dtype=float)
    K = sys.reduced
    b = np.zeros(K.shape[0])
    nu = T.shape[1]
    npr = Tp.shape[1]
    b[:nu] = T.T @ rhs_u
    if rhs_p is not None:
        b[nu:nu + npr] = Tp.T @ rhs_p
    if not np.any(b):
        return np.zeros(s.n_velocity), np.zeros(s.n_pressure)
    # solve for the rhs scaled to unit max-norm so tiny or huge data cannot under/overflow
    nb = np.abs(b).max()
    b = b / nb
    for robust in (False, True):
        lu = sys.factorize(robust=robust)
        x = lu.solve(b)
        for _ in range(3):
            r = b - K @ x
            if np.linalg.norm(r) <= 1e-13:
                break
            x += lu.solve(r)
        rel = np.linalg.norm(b - K @ x)
        if np.isfinite(rel) and rel <= 1e-10:
            break
        if sys._robust:
            break
        log.warning("residual %.3g after fast factorisation, refactoring with pivoting", rel)
    if not np.isfinite(rel) or rel > 1e-10:
        raise SolverError(f"reduced system residual {rel:.3g} exceeds 1e-10")
    x *= nb
    u = T @ x[:nu]
    p = Tp @ x[nu:nu + npr]
    if s.pressure_mean:
        m = s.pressure_mass_vector
        p = p - (m @ p) / m.sum()
    return u, p


def reduced_residual(sys: SaddleSystem, u: np.ndarray, p: np.ndarray, rhs_u: np.ndarray) -> tuple[float, float]:
    """(momentum residual on free rows, ||B u||) for a computed solution."""
    s = sys.space
    T = s.velocity_map
    mom = T.T @ (sys.A @ u + sys.B.T @ p - rhs_u)
    div = s.pressure_map.T @ (sys.B @ u)
    return float(np.linalg.norm(mom)), float(np.linalg.norm(div))


# ---------------------------------------------------------------------------
# evaluation and norms


def split_velocity(space: DofSpace, u: np.ndarray) -> np.ndarray:
    return np.asarray(u).reshape(2, space.n2)


def at_quadrature(space: DofSpace, u: np.ndarray):
    """Values and gradients of a scalar (n2) or vector (2 n2) P2 field at quadrature points.

    Returns ``(vals, grads)`` with shapes (m, nq[, 2]) and (m, nq[, 2], 2).
    """
    u = np.asarray(u, dtype=float)
    if u.size == space.n2:
        loc = u[space.tri_dofs]
        vals = np.einsum("qa,ma->mq", space.phi, loc)
        grads = np.einsum("mqad,ma->mqd", space.dphi, loc)
        return vals, grads
    comps = [at_quadrature(space, c) for c in split_velocity(space, u)]
    return np.stack([c[0] for c in comps], axis=-1), np.stack([c[1] for c in comps], axis=-2)


def pressure_at_quadrature(space: DofSpace, p: np.ndarray) -> np.ndarray:
    return np.einsum("qa,ma->mq", space.psi, np.asarray(p)[space.mesh.triangles])


def evaluate_p2(space: DofSpace, u: np.ndarray, points: np.ndarray, tri=None, bary=None, gradient: bool = False):
    """Point values (and optionally gradients) of a P2 field at arbitrary points."""
    if tri is None:
        tri, bary = space.mesh.locator.locate(points)
    u = np.asarray(u, dtype=float)
    comps = split_velocity(space, u) if u.size == 2 * space.n2 else u[None, :]
    dofs = space.tri_dofs[tri]
    phi = p2_values(bary)
    vals = np.stack([np.einsum("na,na->n", phi, c[dofs]) for c in comps], axis=-1)
    if not gradient:
        return vals if len(comps) > 1 else vals[:, 0]
    G = np.einsum("nal,nld->nad", p2_dlam(bary), space.grad_lambda[tri])
    grads = np.stack([np.einsum("nad,na->nd", G, c[dofs]) for c in comps], axis=-2)
    if len(comps) == 1:
        return vals[:, 0], grads[:, 0]
    return vals, grads


def hessian_p2(space: DofSpace, u: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Piecewise-constant second derivatives of a vector P2 field, (n, 2, 2, 2) [k, a, b]."""
    comps = split_velocity(space, u)
    gl = space.grad_lambda[tri]
    H = np.einsum("Aij,nix,njy->nAxy", P2_D2LAM, gl, gl)
    dofs = space.tri_dofs[tri]
    return np.stack([np.einsum("nAxy,nA->nxy", H, c[dofs]) for c in comps], axis=1)


def evaluate_p1(space: DofSpace, p: np.ndarray, points: np.ndarray, tri=None, bary=None) -> np.ndarray:
    if tri is None:
        tri, bary = space.mesh.locator.locate(points)
    return np.einsum("na,na->n", bary, np.asarray(p)[space.mesh.triangles[tri]])


@dataclass
class FieldNorms:
    l2: float
    h1_semi: float
    hole_l2: float | None = None
    l2_error: float | None = None
    h1_semi_error: float | None = None


def field_norms(
    space: DofSpace, u: np.ndarray, exact: Callable | None = None,
    exact_grad: Callable | None = None, mesh: TriMesh | None = None,
) -> FieldNorms:
    """L2 / H1-seminorm of a P2 field (scalar or vector) or L2 of a P1 pressure.

    ``exact`` maps points (..., 2) to reference values; ``exact_grad`` to
    reference gradients, shaped like the field's gradients.
    """
    if mesh is not None and mesh is not space.mesh:
        raise ValueError("field lives on a different mesh")
    u = np.asarray(u, dtype=float)
    w = space.qw
    if u.size == space.n_vertices and u.size not in (space.n2, 2 * space.n2):
        vals = pressure_at_quadrature(space, u)
        out = FieldNorms(float(np.sqrt(np.sum(w * vals ** 2))), float("nan"))
        if exact is not None:
            out.l2_error = float(np.sqrt(np.sum(w * (vals - exact(space.qp)) ** 2)))
        return out
    vals, grads = at_quadrature(space, u)
    sq = vals ** 2 if vals.ndim == 2 else np.sum(vals ** 2, axis=-1)
    gsq = np.sum(grads ** 2, axis=tuple(range(2, grads.ndim)))
    out = FieldNorms(float(np.sqrt(np.sum(w * sq))), float(np.sqrt(np.sum(w * gsq))))
    mask = space.mesh.tag_mask(HOLE_CLASS)
    if mask.any():
        pts, ew, basis = edge_quadrature(space.mesh, mask)
        dofs = space.boundary_edge_dofs(mask)
        comps = split_velocity(space, u) if u.size == 2 * space.n2 else u[None, :]
        tr = np.stack([np.einsum("qa,ba->bq", basis, c[dofs]) for c in comps], axis=-1)
        out.hole_l2 = float(np.sqrt(np.sum(ew * np.sum(tr ** 2, axis=-1))))
    if exact is not None:
        ref = np.asarray(exact(space.qp), dtype=float)
        d = (vals - ref) ** 2
        out.l2_error = float(np.sqrt(np.sum(w * (d if d.ndim == 2 else d.sum(-1)))))
    if exact_grad is not None:
        dg = (grads - np.asarray(exact_grad(space.qp), dtype=float)) ** 2
        out.h1_semi_error = float(np.sqrt(np.sum(w * np.sum(dg, axis=tuple(range(2, dg.ndim))))))
    return out


def energy(sys: SaddleSystem, u: np.ndarray) -> float:
    return float(u @ (sys.A @ u))


def dirichlet_extension(mesh: TriMesh, src_coords: np.ndarray, src_fields: Sequence[np.ndarray],
                        tol: float = 1e-9):
    """Divergence-free extension of velocity traces into a Dirichlet region.

    ``mesh`` covers the region with OUTER-tagged boundary whose nodes coincide
    with P2 nodes of the source space (``src_coords``).  Each source field
    (component-major, 2 * len(src_coords)) provides the boundary data; the
    interior is filled by a Stokes solve with identity viscosity.  Returns the
    space and one extended coefficient vector per field.
    """
    from scipy.spatial import cKDTree

    space = build_space(mesh, {OUTER: "dirichlet"})
    n2s = len(src_coords)
    bnodes = space.dirichlet_nodes
    dist, idx = cKDTree(src_coords).query(space.coords[bnodes])
    if np.any(dist > tol):
        raise ValueError(f"extension boundary does not match the source mesh (gap {dist.max():.3g})")
    eye = np.eye(2)
    sys = assemble_saddle(space, scale=MacroScaling(np.einsum("ij,kh->ijkh", eye, eye)))
    out = []
    for f in src_fields:
        f = np.asarray(f, dtype=float).reshape(2, n2s)
        g = np.zeros(space.n_velocity)
        g[bnodes] = f[0, idx]
        g[space.n2 + bnodes] = f[1, idx]
        u, _ = solve_saddle(sys, -(sys.A @ g), -(sys.B @ g))
        out.append(u + g)
    return space, out
