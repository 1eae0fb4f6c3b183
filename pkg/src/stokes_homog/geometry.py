"""Periodic perforated geometry: obstacle, hole lattice and their measures.

Coordinates of the unit cell are centred, Y = (-1/2, 1/2)^2.  A hole of the
lattice is the scaled copy eps*(k + T) for an integer pair k.  When eps and
the obstacle vertices are rational all containment and area computations are
carried out in exact ``Fraction`` arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Sequence, Union

import numpy as np

Scalar = Union[Fraction, float]
FLOAT_TOL = 1e-12


class GeometryError(ValueError):
    pass


class InvalidScaleError(GeometryError):
    pass


def _exact(v) -> Scalar:
    if isinstance(v, (Fraction, int)):
        return Fraction(v)
    if isinstance(v, Rational):
        return Fraction(v.numerator, v.denominator)
    return Fraction(float(v))


def as_scale(eps) -> Scalar:
    """Normalise a scale parameter.

    Integers, fractions and floats within 1e-12 of a reciprocal integer
    become exact fractions; any other float stays a float.
    """
    if isinstance(eps, str):
        eps = Fraction(eps)
    if isinstance(eps, (Fraction, int)) or isinstance(eps, Rational):
        return Fraction(eps)
    x = float(eps)
    if x > 0:
        n = round(1.0 / x)
        if n > 0 and abs(1.0 / x - n) < 1e-12 * max(1.0, n):
            return Fraction(1, n)
    return x


def signed_area(poly: Sequence[Sequence[Scalar]]) -> Scalar:
    n = len(poly)
    s = 0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return s / 2


def perimeter(poly: Sequence[Sequence[float]]) -> float:
    p = np.asarray(poly, dtype=float)
    return float(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1).sum())


def _segments_cross(p, q, r, s) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 0) - (v < 0)

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2, o3, o4 = orient(p, q, r), orient(p, q, s), orient(r, s, p), orient(r, s, q)
    if o1 != o2 and o3 != o4:
        return True
    return (
        (o1 == 0 and on_seg(p, q, r)) or (o2 == 0 and on_seg(p, q, s))
        or (o3 == 0 and on_seg(r, s, p)) or (o4 == 0 and on_seg(r, s, q))
    )


def is_simple(poly: Sequence[Sequence[Scalar]]) -> bool:
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            c, d = poly[j], poly[(j + 1) % n]
            if _segments_cross(a, b, c, d):
                return False
    return True


@dataclass(frozen=True)
class CellGeometry:
    """Unit cell Y with one polygonal obstacle T (counterclockwise vertices).

    ``vertices`` is empty only for the obstacle-free verification cell built
    by :meth:`empty`.
    """

    vertices: tuple[tuple[Scalar, Scalar], ...]
    dimension: int = 2

    def __post_init__(self):
        if self.dimension != 2:
            raise GeometryError("only N = 2 is implemented")
        if not self.vertices:
            return
        verts = tuple((_exact(x), _exact(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise GeometryError("obstacle needs at least 3 vertices")
        a = signed_area(verts)
        if a == 0:
            raise GeometryError("degenerate obstacle polygon: zero area")
        if a < 0:
            verts = verts[::-1]
        if any(abs(c) >= Fraction(1, 2) for v in verts for c in v):
            raise GeometryError("obstacle must lie strictly inside Y = (-1/2, 1/2)^2")
        if not is_simple(verts):
            raise GeometryError("obstacle polygon is self-intersecting")
        object.__setattr__(self, "vertices", verts)

    @classmethod
    def square(cls, half_width=Fraction(1, 4)) -> "CellGeometry":
        w = _exact(half_width)
        return cls(((-w, -w), (w, -w), (w, w), (-w, w)))

    @classmethod
    def polygon(cls, vertices: Iterable[Sequence]) -> "CellGeometry":
        return cls(tuple((v[0], v[1]) for v in vertices))

    @classmethod
    def regular_polygon(cls, radius: float, n: int, phase: float = 0.0) -> "CellGeometry":
        """Polygon inscribed in the circle of ``radius``; float vertices."""
        t = phase + 2 * np.pi * np.arange(n) / n
        return cls(tuple((float(radius * np.cos(s)), float(radius * np.sin(s))) for s in t))

    @classmethod
    def empty(cls) -> "CellGeometry":
        return cls(())

    @property
    def has_obstacle(self) -> bool:
        return bool(self.vertices)

    @property
    def area(self) -> Scalar:
        return signed_area(self.vertices) if self.vertices else Fraction(0)

    @property
    def fluid_area(self) -> Scalar:
        return 1 - self.area

    @property
    def perimeter(self) -> float:
        return perimeter(self.vertices) if self.vertices else 0.0

    def as_array(self) -> np.ndarray:
        return np.array(self.vertices, dtype=float).reshape(-1, 2)

    def margin(self) -> float:
        """Distance from the obstacle to the cell boundary."""
        if not self.vertices:
            return 0.5
        return 0.5 - float(max(abs(c) for v in self.vertices for c in v))

    def contains(self, y: np.ndarray) -> np.ndarray:
        """Closed-set membership of points ``y`` (..., 2) in the obstacle."""
        y = np.asarray(y, dtype=float)
        if not self.vertices:
            return np.zeros(y.shape[:-1], dtype=bool)
        return points_in_polygon(y, self.as_array())


@dataclass(frozen=True)
class MacroDomain:
    L1: Scalar = Fraction(1)
    L2: Scalar = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "L1", _exact(self.L1))
        object.__setattr__(self, "L2", _exact(self.L2))
        if self.L1 <= 0 or self.L2 <= 0:
            raise GeometryError("domain side lengths must be positive")

    @property
    def area(self) -> Scalar:
        return self.L1 * self.L2

    def corners(self):
        return ((0, 0), (self.L1, 0), (self.L1, self.L2), (0, self.L2))


@dataclass(frozen=True)
class HoleLattice:
    eps: Scalar
    members: tuple[tuple[int, int], ...]
    boundary_members: tuple[tuple[int, int], ...]

    def hole_polygon(self, cell: CellGeometry, k) -> list[tuple[Scalar, Scalar]]:
        return [(self.eps * (k[0] + x), self.eps * (k[1] + y)) for x, y in cell.vertices]


def _check_scale(domain: MacroDomain, eps) -> Scalar:
    e = as_scale(eps)
    if not e > 0:
        raise InvalidScaleError(f"scale must be positive, got {eps!r}")
    if not e < min(domain.L1, domain.L2):
        raise InvalidScaleError(f"scale {eps!r} must be below min(L1, L2)")
    return e


def _inside_open(v: Scalar, hi: Scalar, exact: bool) -> bool:
    if exact:
        return 0 < v < hi
    return FLOAT_TOL < float(v) < float(hi) - FLOAT_TOL


def hole_lattice(domain: MacroDomain, cell: CellGeometry, eps) -> HoleLattice:
    """All k with eps(k+T) inside the open domain, plus those straddling its boundary."""
    e = _check_scale(domain, eps)
    if not cell.has_obstacle:
        return HoleLattice(e, (), ())
    exact = isinstance(e, Fraction)
    verts = cell.vertices if exact else [(float(x), float(y)) for x, y in cell.vertices]
    xs = [v[0] for v in verts]
    ys = [v[1] for v in verts]
    L1, L2 = (domain.L1, domain.L2) if exact else (float(domain.L1), float(domain.L2))
    k1_lo = math.floor(-max(xs)) - 1
    k1_hi = math.ceil(L1 / e - min(xs)) + 1
    k2_lo = math.floor(-max(ys)) - 1
    k2_hi = math.ceil(L2 / e - min(ys)) + 1
    members, boundary = [], []
    for k1 in range(k1_lo, k1_hi + 1):
        for k2 in range(k2_lo, k2_hi + 1):
            hx = [e * (k1 + x) for x in xs]
            hy = [e * (k2 + y) for y in ys]
            if all(_inside_open(x, L1, exact) for x in hx) and all(_inside_open(y, L2, exact) for y in hy):
                members.append((k1, k2))
                continue
            # bounding boxes must overlap with positive area before clipping
            if max(hx) <= 0 or min(hx) >= L1 or max(hy) <= 0 or min(hy) >= L2:
                continue
            poly = [(e * (k1 + x), e * (k2 + y)) for x, y in verts]
            if clip_to_rectangle(poly, L1, L2) and signed_area(clip_to_rectangle(poly, L1, L2)) != 0:
                boundary.append((k1, k2))
    return HoleLattice(e, tuple(members), tuple(boundary))


def clip_to_rectangle(poly, L1, L2) -> list:
    """Sutherland-Hodgman clipping of ``poly`` against [0, L1] x [0, L2]."""

    def clip(pts, inside, intersect):
        out = []
        n = len(pts)
        for i in range(n):
            cur, nxt = pts[i], pts[(i + 1) % n]
            cin, nin = inside(cur), inside(nxt)
            if cin:
                out.append(cur)
                if not nin:
                    out.append(intersect(cur, nxt))
            elif nin:
                out.append(intersect(cur, nxt))
        return out

    def cut_x(c):
        def f(p, q):
            t = (c - p[0]) / (q[0] - p[0])
            return (c, p[1] + t * (q[1] - p[1]))
        return f

    def cut_y(c):
        def f(p, q):
            t = (c - p[1]) / (q[1] - p[1])
            return (p[0] + t * (q[0] - p[0]), c)
        return f

    pts = list(poly)
    for inside, inter in (
        (lambda p: p[0] >= 0, cut_x(0)),
        (lambda p: p[0] <= L1, cut_x(L1)),
        (lambda p: p[1] >= 0, cut_y(0)),
        (lambda p: p[1] <= L2, cut_y(L2)),
    ):
        if not pts:
            break
        pts = clip(pts, inside, inter)
    return pts


def residual_measure(domain: MacroDomain, cell: CellGeometry, eps) -> Scalar:
    """Area of the obstacle pieces cut by the domain boundary.

    This is the measure of the strip between the perforated domain and the
    set of points of the domain lying outside every scaled obstacle copy.
    """
    lat = hole_lattice(domain, cell, eps)
    total = Fraction(0) if isinstance(lat.eps, Fraction) else 0.0
    for k in lat.boundary_members:
        piece = clip_to_rectangle(lat.hole_polygon(cell, k), domain.L1, domain.L2)
        if piece:
            total += abs(signed_area(piece))
    return total


def obstacle_cover_measure(domain: MacroDomain, cell: CellGeometry, eps) -> Scalar:
    """Area of the union of all scaled obstacle copies intersected with the domain."""
    lat = hole_lattice(domain, cell, eps)
    total = Fraction(0) if isinstance(lat.eps, Fraction) else 0.0
    for k in lat.members + lat.boundary_members:
        piece = clip_to_rectangle(lat.hole_polygon(cell, k), domain.L1, domain.L2)
        if piece:
            total += abs(signed_area(piece))
    return total


def fluid_area(domain: MacroDomain, cell: CellGeometry, eps) -> Scalar:
    """Measure of the perforated domain (domain minus the interior holes)."""
    lat = hole_lattice(domain, cell, eps)
    return domain.area - len(lat.members) * lat.eps ** 2 * cell.area


def indicator_means(cell: CellGeometry) -> tuple[Scalar, Scalar, float]:
    """(|T|, |Y*|, |dT|): means of the solid and fluid indicators and the obstacle perimeter."""
    if cell.has_obstacle and cell.area <= 0:
        raise GeometryError("degenerate obstacle")
    return cell.area, 1 - cell.area, cell.perimeter


def points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Closed point-in-polygon test by winding crossing plus on-edge detection."""
    pts = np.asarray(pts, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    inside = np.zeros(x.shape, dtype=bool)
    on_edge = np.zeros(x.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        cond = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= cond & (x < xc)
        cross = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)
        seg_len = math.hypot(x1 - x0, y1 - y0)
        within = (
            (np.minimum(x0, x1) - 1e-14 <= x) & (x <= np.maximum(x0, x1) + 1e-14)
            & (np.minimum(y0, y1) - 1e-14 <= y) & (y <= np.maximum(y0, y1) + 1e-14)
        )
        on_edge |= within & (np.abs(cross) <= 1e-13 * max(seg_len, 1.0))
    return inside | on_edge


def solid_indicator(cell: CellGeometry, y: np.ndarray) -> np.ndarray:
    """Indicator of the periodic solid set Theta at cell coordinates ``y``."""
    y = np.asarray(y, dtype=float)
    return cell.contains(y - np.round(y))


def fluid_indicator(cell: CellGeometry, y: np.ndarray) -> np.ndarray:
    return ~solid_indicator(cell, y)
