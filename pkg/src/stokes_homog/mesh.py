"""Triangular meshes of the perforated cell and of the perforated domain.

Boundary polylines are split into pieces of length <= h *before*
triangulation and handed to Triangle with Steiner points on segments
disabled, so tagged boundaries are exactly the input polylines and
periodic faces can be mirrored node for node.
"""
from __future__ import annotations

import math
import re
from fractions import Fraction
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import triangle

from .geometry import CellGeometry, MacroDomain, hole_lattice, signed_area

OUTER = "OUTER"
PERIODIC_X = "PERIODIC_X"
PERIODIC_Y = "PERIODIC_Y"
HOLE_CLASS = "HOLE"
MIN_ANGLE = 25.0
QUALITY_FLOOR = 15.0


class MeshingError(RuntimeError):
    pass


def hole_tag(i: int) -> str:
    return f"HOLE({i})"


def tag_class(tag: str) -> str:
    """``HOLE(3)`` -> ``HOLE``; other tags are their own class."""
    return HOLE_CLASS if tag.startswith("HOLE") else tag


def hole_id(tag: str) -> int:
    m = re.fullmatch(r"HOLE\((\d+)\)", tag)
    if m is None:
        raise ValueError(f"not a hole tag: {tag}")
    return int(m.group(1))


@dataclass(frozen=True, eq=False)
class TriMesh:
    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tags: tuple[str, ...]
    periodic_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    target_area: float | None = None

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float).reshape(-1, 2)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        edges = np.ascontiguousarray(self.edges, dtype=np.int64).reshape(-1, 2)
        pairs = np.ascontiguousarray(self.periodic_pairs, dtype=np.int64).reshape(-1, 2)
        for a in (nodes, tris, edges, pairs):
            a.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "periodic_pairs", pairs)
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.tags) != len(edges):
            raise ValueError("one tag per boundary edge required")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self) -> float:
        return float(self.signed_areas.sum())

    @cached_property
    def all_edges(self) -> np.ndarray:
        """Unique undirected edges, sorted node pairs, in a deterministic order."""
        return self._edge_data[0]

    @cached_property
    def triangle_edges(self) -> np.ndarray:
        """(m, 3) edge ids of local edges (v0 v1), (v1 v2), (v2 v0)."""
        return self._edge_data[1]

    @cached_property
    def _edge_data(self):
        t = self.triangles
        loc = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1).reshape(-1, 2)
        loc = np.sort(loc, axis=1)
        uniq, inv = np.unique(loc, axis=0, return_inverse=True)
        return uniq, inv.reshape(-1, 3)

    @cached_property
    def edge_triangle_count(self) -> np.ndarray:
        return np.bincount(self.triangle_edges.ravel(), minlength=len(self.all_edges))

    def edge_index(self, pairs: np.ndarray) -> np.ndarray:
        """Ids in :attr:`all_edges` of node pairs; -1 where absent."""
        pairs = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
        n = self.n_nodes
        keys = self.all_edges[:, 0] * n + self.all_edges[:, 1]
        q = pairs[:, 0] * n + pairs[:, 1]
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, len(keys) - 1)
        return np.where(keys[pos] == q, pos, -1)

    @cached_property
    def normals(self) -> np.ndarray:
        """Unit normals of tagged edges pointing away from the adjacent triangle."""
        if len(self.edges) == 0:
            return np.zeros((0, 2))
        eid = self.edge_index(self.edges)
        if np.any(eid < 0):
            raise ValueError("tagged edge is not a mesh edge")
        owner = np.full(len(self.all_edges), -1, dtype=np.int64)
        te = self.triangle_edges
        owner[te.ravel()] = np.repeat(np.arange(len(te)), 3)
        tri = owner[eid]
        p0 = self.nodes[self.edges[:, 0]]
        p1 = self.nodes[self.edges[:, 1]]
        d = p1 - p0
        n = np.stack([d[:, 1], -d[:, 0]], axis=1)
        n /= np.linalg.norm(n, axis=1)[:, None]
        centroid = self.nodes[self.triangles[tri]].mean(axis=1)
        flip = np.einsum("ij,ij->i", centroid - p0, n) > 0
        n[flip] *= -1
        return n

    @property
    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]], axis=1)

    def tag_mask(self, cls: str) -> np.ndarray:
        return np.array([tag_class(t) == cls for t in self.tags], dtype=bool)

    def tag_classes(self) -> set[str]:
        return {tag_class(t) for t in self.tags}

    def hole_ids(self) -> list[int]:
        return sorted({hole_id(t) for t in self.tags if t.startswith("HOLE")})

    def boundary_length(self, cls: str) -> float:
        return float(self.edge_lengths[self.tag_mask(cls)].sum())

    def min_angle(self) -> float:
        return float(triangle_angles(self.nodes, self.triangles).min()) if self.n_triangles else 0.0

    @cached_property
    def locator(self) -> "Locator":
        return Locator(self)


def triangle_angles(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = nodes[tris]
    out = np.empty((len(tris), 3))
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        v = p[:, (i + 2) % 3] - p[:, i]
        c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out[:, i] = np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))
    return out


def _split(a, b, h: float) -> list[tuple[float, float]]:
    """Points a, ..., excluding b, with spacing <= h (computed in float)."""
    ax, ay = float(a[0]), float(a[1])
    bx, by = float(b[0]), float(b[1])
    n = max(1, math.ceil(math.hypot(bx - ax, by - ay) / h - 1e-9))
    return [(ax + (bx - ax) * i / n, ay + (by - ay) * i / n) for i in range(n)]


def polygon_loop(poly: Sequence, h: float) -> np.ndarray:
    """Counterclockwise boundary points of ``poly`` split to spacing <= h."""
    pts = []
    if signed_area(poly) < 0:
        poly = poly[::-1]
    for i in range(len(poly)):
        pts.extend(_split(poly[i], poly[(i + 1) % len(poly)], h))
    return np.array(pts)


def _cross2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _interior_point(loop: np.ndarray) -> np.ndarray:
    n = len(loop)
    seg = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    t = triangle.triangulate({"vertices": loop, "segments": seg}, "pQ")
    tri = t["triangles"]
    areas = np.abs(_cross2(t["vertices"][tri[:, 1]] - t["vertices"][tri[:, 0]],
                            t["vertices"][tri[:, 2]] - t["vertices"][tri[:, 0]]))
    return t["vertices"][tri[np.argmax(areas)]].mean(axis=0)


class _PSLG:
    def __init__(self):
        self.points: list[tuple[float, float]] = []
        self.segments: list[tuple[int, int]] = []
        self.tags: list[str] = []
        self.holes: list[np.ndarray] = []

    def add_loop(self, pts, tags) -> list[int]:
        start = len(self.points)
        self.points.extend(map(tuple, pts))
        n = len(pts)
        idx = list(range(start, start + n))
        for i in range(n):
            self.segments.append((idx[i], idx[(i + 1) % n]))
            self.tags.append(tags[i] if isinstance(tags, list) else tags)
        return idx

    def triangulate(self, h: float, target_area: float | None, pairs=None) -> TriMesh:
        max_area = h * h * math.sqrt(3) / 4
        data = {"vertices": np.array(self.points), "segments": np.array(self.segments)}
        if self.holes:
            data["holes"] = np.array(self.holes)
        out = triangle.triangulate(data, f"pq{MIN_ANGLE:g}YQa{max_area:.15f}")
        nodes = out["vertices"]
        if not np.array_equal(nodes[: len(self.points)], data["vertices"]):
            raise MeshingError("mesher moved input boundary vertices")
        tris = _orient(nodes, out["triangles"])
        nodes, tris = _split_corner_triangles(nodes, tris, np.array(self.segments))
        pp = np.zeros((0, 2), dtype=np.int64) if pairs is None else np.asarray(pairs)
        return TriMesh(nodes, tris, np.array(self.segments), self.tags, pp, target_area)


def _orient(nodes, tris):
    tris = np.array(tris, dtype=np.int64)
    p = nodes[tris]
    a = _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    tris[a < 0] = tris[a < 0][:, [0, 2, 1]]
    return tris


def _split_corner_triangles(nodes, tris, boundary_segments):
    """Bisect the interior edge of every triangle with two boundary edges.

    Taylor-Hood pressure stability needs each triangle to own a vertex off
    the Dirichlet boundary; the bisection also splits the neighbour.
    """
    nb = len(nodes)
    bkeys = {tuple(sorted(map(int, s))) for s in boundary_segments}
    nodes = [tuple(p) for p in nodes]
    tris = [tuple(map(int, t)) for t in tris]
    edge_owner: dict[tuple[int, int], list[int]] = {}
    for ti, t in enumerate(tris):
        for i in range(3):
            edge_owner.setdefault(tuple(sorted((t[i], t[(i + 1) % 3]))), []).append(ti)
    targets = []
    for ti, t in enumerate(tris):
        local = [tuple(sorted((t[i], t[(i + 1) % 3]))) for i in range(3)]
        nbnd = sum(k in bkeys for k in local)
        if nbnd >= 2:
            inner = [k for k in local if k not in bkeys]
            if inner:
                targets.append(inner[0])
    if not targets:
        return np.array(nodes[:nb] + nodes[nb:]), np.array(tris, dtype=np.int64)
    dead = set()
    new_tris = []
    for key in dict.fromkeys(targets):
        owners = edge_owner[key]
        if any(o in dead for o in owners):
            continue
        a, b = key
        m = len(nodes)
        nodes.append(((nodes[a][0] + nodes[b][0]) / 2, (nodes[a][1] + nodes[b][1]) / 2))
        for o in owners:
            t = tris[o]
            c = next(v for v in t if v not in key)
            # keep orientation: replace a then b by m
            new_tris.append(tuple(m if v == b else v for v in t))
            new_tris.append(tuple(m if v == a else v for v in t))
            dead.add(o)
    kept = [t for i, t in enumerate(tris) if i not in dead]
    return np.array(nodes), np.array(kept + new_tris, dtype=np.int64)


def _face_coords(n: int) -> list[float]:
    return [-0.5 + i / n for i in range(n)] + [0.5]


_HALF = Fraction(1, 2)
_INTERNAL = "_internal"
_FACE = "_face"


def _symmetry_group(cell: CellGeometry) -> list[np.ndarray] | None:
    """Reflections of the square leaving the obstacle invariant (None if not both axes)."""
    flips = [np.diag([sx, sy]) for sx in (1, -1) for sy in (1, -1)]
    if not cell.has_obstacle:
        return flips + [f @ np.array([[0, 1], [1, 0]]) for f in flips]
    v = list(cell.vertices)
    edges = {frozenset((v[i], v[(i + 1) % len(v)])) for i in range(len(v))}

    def keeps(M):
        f = lambda q: (M[0, 0] * q[0] + M[0, 1] * q[1], M[1, 0] * q[0] + M[1, 1] * q[1])
        return {frozenset(map(f, e)) for e in edges} == edges

    if not all(keeps(M) for M in flips):
        return None
    swap = np.array([[0, 1], [1, 0]])
    return flips + [f @ swap for f in flips] if keeps(swap) else flips


def _clip_convex(poly: list, region: list) -> list:
    """Exact Sutherland-Hodgman clip of ``poly`` against a convex CCW ``region``."""
    pts = list(poly)
    for r0, r1 in zip(region, region[1:] + region[:1]):
        side = lambda q: (r1[0] - r0[0]) * (q[1] - r0[1]) - (r1[1] - r0[1]) * (q[0] - r0[0])
        out = []
        for a, b in zip(pts, pts[1:] + pts[:1]):
            ca, cb = side(a), side(b)
            if ca >= 0:
                out.append(a)
            if (ca > 0 > cb) or (ca < 0 < cb):
                t = ca / (ca - cb)
                out.append((a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])))
        pts = out
    return pts


def _fundamental_polygon(cell: CellGeometry, region: list):
    """Fluid part of the fundamental region with per-edge classes, or None."""
    n = len(region)
    if not cell.has_obstacle:
        return region, [_INTERNAL] + [_FACE] * (n - 2) + [_INTERNAL]
    if not cell.contains(np.zeros((1, 2)))[0]:
        return None
    piece = _clip_convex(list(cell.vertices), region)
    origin = (0, 0)
    if origin not in piece:
        return None
    k = piece.index(origin)
    piece = piece[k:] + piece[:k]
    a, *chain, b = piece[1:]

    def on_edge(q, r0, r1):
        return (r1[0] - r0[0]) * (q[1] - r0[1]) - (r1[1] - r0[1]) * (q[0] - r0[0]) == 0

    def strictly_inside(q):
        return all((r1[0] - r0[0]) * (q[1] - r0[1]) - (r1[1] - r0[1]) * (q[0] - r0[0]) > 0
                   for r0, r1 in zip(region, region[1:] + region[:1]))

    if not (on_edge(a, region[0], region[1]) and on_edge(b, region[-1], region[0])):
        return None
    if not all(strictly_inside(q) for q in chain):
        return None
    poly = [a, *region[1:], b, *chain[::-1]]
    classes = [_INTERNAL] + [_FACE] * (n - 2) + [_INTERNAL] + [hole_tag(0)] * (len(chain) + 1)
    return poly, classes


def _symmetric_cell_mesh(cell: CellGeometry, h: float) -> TriMesh | None:
    """Mesh a fundamental region of the obstacle's symmetry group and reflect it.

    The result is invariant under the group node for node, so coefficients
    that vanish by symmetry vanish to round-off on every mesh.
    """
    group = _symmetry_group(cell)
    if group is None:
        return None
    if len(group) == 8:
        region = [(0, 0), (_HALF, 0), (_HALF, _HALF)]
    else:
        region = [(0, 0), (_HALF, 0), (_HALF, _HALF), (0, _HALF)]
    fp = _fundamental_polygon(cell, region)
    if fp is None:
        return None
    poly, classes = fp
    pts, seg_class = [], []
    for i, cls in enumerate(classes):
        piece = _split(poly[i], poly[(i + 1) % len(poly)], h)
        pts.extend(piece)
        seg_class.extend([cls] * len(piece))
    loop = np.array(pts)
    m = len(loop)
    seg = np.stack([np.arange(m), (np.arange(m) + 1) % m], axis=1)
    max_area = h * h * math.sqrt(3) / 4
    out = triangle.triangulate({"vertices": loop, "segments": seg}, f"pq{MIN_ANGLE:g}YQa{max_area:.15f}")
    base = out["vertices"]
    if not np.array_equal(base[:m], loop):
        raise MeshingError("mesher moved input boundary vertices")
    ids: dict[tuple[float, float], int] = {}
    nodes, tris, edges, tags = [], [], [], []

    def node_id(q):
        key = (float(q[0]) + 0.0, float(q[1]) + 0.0)
        if key not in ids:
            ids[key] = len(nodes)
            nodes.append(key)
        return ids[key]

    for M in group:
        mapped = [node_id(q) for q in base @ M.T.astype(float)]
        tris.extend([mapped[t] for t in tri] for tri in out["triangles"])
        for (i, j), cls in zip(seg, seg_class):
            if cls == _INTERNAL:
                continue
            a, b = mapped[i], mapped[j]
            if cls == _FACE:
                cls = PERIODIC_X if abs(nodes[a][0]) == 0.5 and abs(nodes[b][0]) == 0.5 else PERIODIC_Y
            edges.append((a, b))
            tags.append(cls)
    pairs = []
    try:
        for (x, y), i in ids.items():
            if x == -0.5:
                pairs.append((i, ids[(0.5, y)]))
        for (x, y), i in ids.items():
            if y == -0.5:
                pairs.append((i, ids[(x, 0.5)]))
    except KeyError as exc:
        raise MeshingError(f"reflected mesh has no periodic partner for {exc}") from None
    arr = np.array(nodes)
    t = _orient(arr, tris)
    arr, t = _split_corner_triangles(arr, t, np.array(edges))
    target = float(cell.fluid_area) if cell.has_obstacle else 1.0
    return TriMesh(arr, t, np.array(edges), tags, np.array(pairs), target)


def mesh_unit_cell(cell: CellGeometry, h: float) -> TriMesh:
    """Mesh Y \\ T with periodic face identification built by mirroring."""
    if not 0 < h < 0.25:
        raise MeshingError(f"cell mesh size must satisfy 0 < h < 1/4, got {h}")
    if cell.has_obstacle and cell.margin() < h / 2:
        raise MeshingError(
            f"obstacle is {cell.margin():.3g} from the cell boundary, below h/2 = {h / 2:.3g}"
        )
    sym = _symmetric_cell_mesh(cell, h)
    if sym is not None:
        return sym
    n = math.ceil(1.0 / h - 1e-9)
    c = _face_coords(n)
    g = _PSLG()
    bottom = [(x, -0.5) for x in c[:-1]]
    right = [(0.5, y) for y in c[:-1]]
    top = [(x, 0.5) for x in c[::-1][:-1]]
    left = [(-0.5, y) for y in c[::-1][:-1]]
    tags = [PERIODIC_Y] * n + [PERIODIC_X] * n + [PERIODIC_Y] * n + [PERIODIC_X] * n
    idx = g.add_loop(bottom + right + top + left, tags)
    b_ids = idx[:n] + [idx[n]]
    r_ids = idx[n:2 * n] + [idx[2 * n]]
    t_ids = (idx[2 * n:3 * n] + [idx[3 * n]])[::-1]
    l_ids = (idx[3 * n:] + [idx[0]])[::-1]
    pairs = [(l_ids[j], r_ids[j]) for j in range(n + 1)]
    pairs += [(b_ids[i], t_ids[i]) for i in range(n + 1)]
    target = 1.0
    if cell.has_obstacle:
        loop = polygon_loop(cell.as_array(), h)
        g.add_loop(loop, hole_tag(0))
        g.holes.append(_interior_point(loop))
        target = float(cell.fluid_area)
    return g.triangulate(h, target, pairs)



def refine_uniform(m: TriMesh) -> TriMesh:
    """Red refinement: every triangle into four through its edge midpoints.

    Boundary edges keep their tags and periodic pairs extend to the new
    midpoints, so a sequence of refinements gives nested meshes of the
    same polygonal domain.
    """
    nodes = [tuple(p) for p in m.nodes]
    mid: dict[tuple[int, int], int] = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in mid:
            mid[key] = len(nodes)
            pa, pb = m.nodes[a], m.nodes[b]
            nodes.append(((pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2))
        return mid[key]

    tris = []
    for a, b, c in m.triangles:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        tris += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    edges, tags = [], []
    for (a, b), t in zip(m.edges, m.tags):
        k = midpoint(a, b)
        edges += [(a, k), (k, b)]
        tags += [t, t]
    # corners sit in one pair per face direction, so map per translation
    partner: dict[tuple, dict[int, int]] = {}
    for a, b in m.periodic_pairs.tolist():
        shift = tuple(np.round(m.nodes[b] - m.nodes[a], 12))
        partner.setdefault(shift, {})[a] = b
    pairs = [tuple(p) for p in m.periodic_pairs.tolist()]
    for a, b in m.edges.tolist():
        for pm in partner.values():
            if a in pm and b in pm:
                key = (min(pm[a], pm[b]), max(pm[a], pm[b]))
                if key in mid:
                    pairs.append((midpoint(a, b), mid[key]))
    target = None if m.target_area is None else m.target_area
    return TriMesh(np.array(nodes), np.array(tris, dtype=np.int64), np.array(edges), tags,
                   np.array(pairs, dtype=np.int64).reshape(-1, 2), target)


def mesh_rectangle(domain: MacroDomain, h: float) -> TriMesh:
    """Structured mesh of the rectangle with alternating diagonals.

    The diagonal of each corner square passes through the domain corner so
    that no triangle has two edges on the boundary.
    """
    L1, L2 = float(domain.L1), float(domain.L2)
    n1 = max(2, math.ceil(L1 / h - 1e-9))
    n2 = max(2, math.ceil(L2 / h - 1e-9))
    xs = np.array([L1 * i / n1 for i in range(n1 + 1)])
    ys = np.array([L2 * j / n2 for j in range(n2 + 1)])
    X, Yg = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.stack([X.ravel(), Yg.ravel()], axis=1)

    def vid(i, j):
        return i * (n2 + 1) + j

    tris = []
    for i in range(n1):
        for j in range(n2):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            slash = (i + j) % 2 == 0
            if (i, j) in ((0, 0), (n1 - 1, n2 - 1)):
                slash = True
            elif (i, j) in ((n1 - 1, 0), (0, n2 - 1)):
                slash = False
            if slash:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    edges = []
    for i in range(n1):
        edges.append((vid(i, 0), vid(i + 1, 0)))
    for j in range(n2):
        edges.append((vid(n1, j), vid(n1, j + 1)))
    for i in range(n1, 0, -1):
        edges.append((vid(i, n2), vid(i - 1, n2)))
    for j in range(n2, 0, -1):
        edges.append((vid(0, j), vid(0, j - 1)))
    return TriMesh(nodes, np.array(tris), np.array(edges), [OUTER] * len(edges), target_area=L1 * L2)


def _outer_loop(domain: MacroDomain, h: float) -> np.ndarray:
    L1, L2 = float(domain.L1), float(domain.L2)
    return polygon_loop([(0.0, 0.0), (L1, 0.0), (L1, L2), (0.0, L2)], h)


def mesh_perforated(domain: MacroDomain, cell: CellGeometry, eps, h: float) -> TriMesh:
    """Mesh the domain minus the holes eps(k + T), k in the hole lattice."""
    lat = hole_lattice(domain, cell, eps)
    e = float(lat.eps)
    if h > e / 4 * (1 + 1e-12):
        raise MeshingError(f"mesh size h = {h:g} too large: need h <= eps/4 = {e / 4:g}")
    g = _PSLG()
    g.add_loop(_outer_loop(domain, h), OUTER)
    if lat.members:
        seed = _interior_point(cell.as_array())
    for i, k in enumerate(lat.members):
        g.add_loop(polygon_loop(hole_polygon_float(lat, cell, k), h), hole_tag(i))
        g.holes.append(e * (np.asarray(k, dtype=float) + seed))
    target = float(domain.area) - len(lat.members) * e * e * float(cell.area)
    return g.triangulate(h, target)


def hole_polygon_float(lat, cell: CellGeometry, k) -> list[tuple[float, float]]:
    return [(float(x), float(y)) for x, y in lat.hole_polygon(cell, k)]


def mesh_polygon(poly: Sequence, h: float, tag: str = OUTER) -> TriMesh:
    """Mesh the interior of a polygon (used for hole interiors)."""
    g = _PSLG()
    g.add_loop(polygon_loop(list(poly), h), tag)
    return g.triangulate(h, abs(float(signed_area([(float(x), float(y)) for x, y in poly]))))



def boundary_loop(m: TriMesh, cls: str) -> np.ndarray:
    """Ordered points of the single closed polyline formed by edges of tag class ``cls``."""
    edges = m.edges[m.tag_mask(cls)]
    if not len(edges):
        raise MeshingError(f"mesh has no {cls} edges")
    nxt: dict[int, list[int]] = {}
    for a, b in edges.tolist():
        nxt.setdefault(a, []).append(b)
        nxt.setdefault(b, []).append(a)
    if any(len(v) != 2 for v in nxt.values()):
        raise MeshingError(f"{cls} edges do not form simple loops")
    start = int(edges[0, 0])
    order, prev, cur = [start], -1, start
    while True:
        a, b = nxt[cur]
        step = a if a != prev else b
        if step == start:
            break
        order.append(step)
        prev, cur = cur, step
    if len(order) != len(nxt):
        raise MeshingError(f"{cls} edges form more than one loop")
    return m.nodes[order]

@dataclass
class MeshDiagnostics:
    passed: bool
    min_angle: float
    area_sum: float
    target_area: float | None
    negative_triangles: int
    conformity_violations: int
    orphan_tags: int
    periodic_mismatch: float
    messages: list[str]


def validate_mesh(m: TriMesh, min_angle: float = 20.0) -> MeshDiagnostics:
    msgs = []
    areas = m.signed_areas
    neg = int(np.sum(areas <= 0))
    if neg:
        msgs.append(f"{neg} triangle(s) with non-positive signed area")
    counts = m.edge_triangle_count
    bad_count = int(np.sum(counts > 2))
    boundary_edges = np.flatnonzero(counts == 1)
    tagged = m.edge_index(m.edges) if len(m.edges) else np.zeros(0, dtype=np.int64)
    orphan = int(np.sum(tagged < 0))
    untagged = len(set(boundary_edges.tolist()) - set(tagged.tolist()))
    tagged_interior = int(np.sum(counts[tagged[tagged >= 0]] != 1)) if len(tagged) else 0
    conformity = bad_count + untagged + tagged_interior
    if conformity:
        msgs.append(
            f"conformity: {bad_count} edge(s) in >2 triangles, {untagged} untagged "
            f"boundary edge(s), {tagged_interior} tagged interior edge(s)"
        )
    if orphan:
        msgs.append(f"{orphan} tagged edge(s) not present in the triangulation")
    angle = m.min_angle()
    if angle < min_angle:
        msgs.append(f"minimum angle {angle:.2f} below {min_angle}")
    area = m.area
    if m.target_area is not None and abs(area - m.target_area) > 1e-10 * max(1.0, abs(m.target_area)):
        msgs.append(f"area sum {area!r} differs from target {m.target_area!r}")
    mismatch = 0.0
    if len(m.periodic_pairs):
        d = m.nodes[m.periodic_pairs[:, 1]] - m.nodes[m.periodic_pairs[:, 0]]
        shift = np.abs(d)
        ok = ((shift[:, 0] == 1.0) & (shift[:, 1] == 0.0)) | ((shift[:, 0] == 0.0) & (shift[:, 1] == 1.0))
        mismatch = float(np.max(np.minimum(np.abs(shift - [1, 0]).max(1), np.abs(shift - [0, 1]).max(1))))
        if not ok.all():
            msgs.append(f"periodic pairs not exact translates (max defect {mismatch:.3g})")
    return MeshDiagnostics(
        not msgs, angle, area, m.target_area, neg, conformity, orphan, mismatch, msgs
    )


def write_mesh(m: TriMesh, path) -> None:
    lines = [f"NODES {m.n_nodes}"]
    lines += [f"{x!r} {y!r}" for x, y in m.nodes.tolist()]
    lines.append(f"TRIANGLES {m.n_triangles}")
    lines += [f"{i} {j} {k}" for i, j, k in m.triangles.tolist()]
    lines.append(f"EDGES {len(m.edges)}")
    lines += [f"{i} {j} {t}" for (i, j), t in zip(m.edges.tolist(), m.tags)]
    lines.append(f"PERIODIC {len(m.periodic_pairs)}")
    lines += [f"{i} {j}" for i, j in m.periodic_pairs.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> TriMesh:
    it = iter(Path(path).read_text().splitlines())

    def section(name):
        head = next(it).split()
        if len(head) != 2 or head[0] != name:
            raise ValueError(f"expected '{name} <count>', got {' '.join(head)!r}")
        return [next(it).split() for _ in range(int(head[1]))]

    nodes = np.array([[float(a), float(b)] for a, b in section("NODES")]).reshape(-1, 2)
    tris = np.array([[int(v) for v in r] for r in section("TRIANGLES")], dtype=np.int64).reshape(-1, 3)
    rows = section("EDGES")
    edges = np.array([[int(r[0]), int(r[1])] for r in rows], dtype=np.int64).reshape(-1, 2)
    tags = [r[2] for r in rows]
    pairs = np.array([[int(a), int(b)] for a, b in section("PERIODIC")], dtype=np.int64).reshape(-1, 2)
    return TriMesh(nodes, tris, edges, tags, pairs)


class PointLocationError(ValueError):
    pass


class Locator:
    """Bucket-grid point location returning triangle ids and barycentric coordinates."""

    def __init__(self, m: TriMesh):
        self.mesh = m
        p = m.nodes[m.triangles]
        lo, hi = p.min(axis=1), p.max(axis=1)
        self.origin = m.nodes.min(axis=0)
        span = m.nodes.max(axis=0) - self.origin
        size = max(float(np.max(hi - lo)), 1e-12)
        self.size = size
        self.shape = np.maximum(1, np.ceil(span / size).astype(int) + 1)
        i0 = np.floor((lo - self.origin) / size).astype(int)
        i1 = np.floor((hi - self.origin) / size).astype(int)
        cells, owners = [], []
        tid = np.arange(len(p))
        for di in range(int((i1 - i0)[:, 0].max()) + 1):
            for dj in range(int((i1 - i0)[:, 1].max()) + 1):
                ok = (i0[:, 0] + di <= i1[:, 0]) & (i0[:, 1] + dj <= i1[:, 1])
                cells.append((i0[ok, 0] + di) * self.shape[1] + i0[ok, 1] + dj)
                owners.append(tid[ok])
        cells = np.concatenate(cells)
        owners = np.concatenate(owners)
        order = np.lexsort((owners, cells))
        self.cell_ids = cells[order]
        self.owners = owners[order]
        self.start = np.searchsorted(self.cell_ids, np.arange(self.shape[0] * self.shape[1] + 1))
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        self.p0 = p[:, 0]
        self.inv = np.stack([np.stack([d2[:, 1], -d2[:, 0]], -1), np.stack([-d1[:, 1], d1[:, 0]], -1)], 1) / det[:, None, None]

    def barycentric(self, tri: np.ndarray, pts: np.ndarray) -> np.ndarray:
        rel = pts - self.p0[tri]
        l12 = np.einsum("nij,nj->ni", self.inv[tri], rel)
        return np.column_stack([1 - l12.sum(axis=1), l12])

    def locate(self, pts, tol: float = 1e-10, strict: bool = True):
        """Return ``(tri, bary)``; points outside the mesh get ``tri = -1`` unless strict."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        ij = np.floor((pts - self.origin) / self.size).astype(int)
        ij = np.clip(ij, 0, self.shape - 1)
        cell = ij[:, 0] * self.shape[1] + ij[:, 1]
        s, e = self.start[cell], self.start[cell + 1]
        best = np.full(len(pts), -1, dtype=np.int64)
        score = np.full(len(pts), -np.inf)
        for slot in range(int((e - s).max()) if len(pts) else 0):
            live = np.flatnonzero(s + slot < e)
            tri = self.owners[s[live] + slot]
            lam = self.barycentric(tri, pts[live]).min(axis=1)
            upd = lam > score[live]
            score[live[upd]] = lam[upd]
            best[live[upd]] = tri[upd]
        found = score >= -tol
        if strict and not found.all():
            bad = pts[~found][0]
            raise PointLocationError(f"point ({bad[0]!r}, {bad[1]!r}) lies outside the mesh")
        best[~found] = -1
        bary = np.zeros((len(pts), 3))
        ok = best >= 0
        bary[ok] = self.barycentric(best[ok], pts[ok])
        return best, bary
