"""Two-scale pairings, the first-order corrector, the limit variational residual and the eps-sweep."""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import fem
from .cell import PAIRS, CellSolution, EffectiveTensor, boundary_integral, effective_tensor, solve_cell_problems
from .coeff import CoefficientSet
from .expr import TWO_SCALE_VARIABLES, Expr, compile_expr, parse_expr
from .geometry import CellGeometry, MacroDomain, as_scale, fluid_area, hole_lattice
from .macro import MacroSolution, solve_macro
from .micro import MicroSolution, apriori_norms, solve_micro
from .mesh import HOLE_CLASS, TriMesh

log = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "epsilon", "holes", "fluid_area", "l2_vel_err", "h1_corrector_err",
    "grad_norm", "surf_norm", "pressure_norm", "pair_phi1", "pair_phi2",
)


class StageError(RuntimeError):
    """Failure inside one stage of the sweep; ``stage`` names it."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage


@dataclass(frozen=True)
class TwoScaleTest:
    """Test function psi(x, y), Y-periodic in y."""

    expr: Expr

    @classmethod
    def parse(cls, text: str) -> "TwoScaleTest":
        return cls(parse_expr(text, TWO_SCALE_VARIABLES))

    @classmethod
    def product(cls, x_part: str = "1", y_part: str = "1") -> "TwoScaleTest":
        return cls.parse(f"({x_part})*({y_part})")

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return compile_expr(self.expr)(x1=x[..., 0], x2=x[..., 1], y1=y[..., 0], y2=y[..., 1])

    def periodicity_defect(self, n: int = 33) -> float:
        s = np.linspace(0.0, 1.0, n)
        x = np.stack(np.meshgrid(s, s, indexing="ij"), -1).reshape(-1, 2)
        t = np.linspace(-0.5, 0.5, n)
        worst = 0.0
        for xi in x[:: max(1, len(x) // 9)]:
            for d in ((1.0, 0.0), (0.0, 1.0)):
                lo = np.stack([np.full(n, -0.5), t], -1) if d[0] else np.stack([t, np.full(n, -0.5)], -1)
                hi = lo + np.array(d)
                xx = np.broadcast_to(xi, lo.shape)
                worst = max(worst, float(np.abs(self(xx, hi) - self(xx, lo)).max()))
        return worst


def mesh_quadrature(mesh: TriMesh):
    """Degree-4 quadrature points (m, nq, 2) and weights (m, nq) on a mesh."""
    p = np.einsum("qv,mvd->mqd", fem.TRI_POINTS, mesh.nodes[mesh.triangles])
    return p, mesh.signed_areas[:, None] * fem.TRI_WEIGHTS[None, :]


def _field_at(field, where, pts, component):
    """Scalar field values at quadrature points; ``field`` is callable or P2 coefficients."""
    if callable(field):
        return np.asarray(field(pts), dtype=float)
    space = where
    vals, _ = fem.at_quadrature(space, field)
    return vals if vals.ndim == 2 else vals[..., component]


def volume_pairing(field, t: TwoScaleTest, eps, where, component: int = 0) -> float:
    """int u(x) psi(x, x/eps) dx by mesh quadrature.

    ``field`` is a callable of points or a P2 coefficient vector, in which
    case ``where`` must be its DofSpace; otherwise ``where`` may be a mesh.
    """
    e = float(as_scale(eps))
    mesh = where.mesh if isinstance(where, fem.DofSpace) else where
    pts, w = mesh_quadrature(mesh)
    u = _field_at(field, where, pts, component)
    return float(np.sum(w * u * t(pts, pts / e)))


def cell_grid(n: int = 64) -> tuple[np.ndarray, float]:
    """Cell-centred n x n rule on Y (exact for trigonometric polynomials of degree < n)."""
    s = -0.5 + (np.arange(n) + 0.5) / n
    y = np.stack(np.meshgrid(s, s, indexing="ij"), -1).reshape(-1, 2)
    return y, 1.0 / (n * n)


def limit_volume_pairing(u0: Callable, t: TwoScaleTest, mesh: TriMesh, n_cell: int = 64) -> float:
    """int_Omega int_Y u0(x, y) psi(x, y) dy dx; ``u0`` takes (x, y) arrays."""
    pts, w = mesh_quadrature(mesh)
    x = pts.reshape(-1, 2)
    wx = w.ravel()
    y, wy = cell_grid(n_cell)
    total = 0.0
    for lo in range(0, len(x), 256):
        xs = x[lo:lo + 256, None, :]
        X = np.broadcast_to(xs, (len(xs), len(y), 2))
        Yb = np.broadcast_to(y[None], X.shape)
        total += float(np.sum(wx[lo:lo + 256, None] * wy * u0(X, Yb) * t(X, Yb)))
    return total


def _hole_mask(mesh: TriMesh) -> np.ndarray:
    mask = mesh.tag_mask(HOLE_CLASS)
    if not mask.any():
        raise ValueError("mesh has no HOLE-tagged edges")
    return mask


def surface_pairing(field, t: TwoScaleTest, eps, where, component: int = 0) -> float:
    """eps * int over hole boundaries of u psi(x, x/eps) dsigma."""
    e = float(as_scale(eps))
    mesh = where.mesh if isinstance(where, fem.DofSpace) else where
    mask = _hole_mask(mesh)
    pts, w, basis = fem.edge_quadrature(mesh, mask)
    if callable(field):
        u = np.asarray(field(pts), dtype=float)
    else:
        space = where
        dofs = space.boundary_edge_dofs(mask)
        c = np.asarray(field, dtype=float)
        c = c.reshape(2, -1)[component] if c.size == 2 * space.n2 else c
        u = np.einsum("qa,ba->bq", basis, c[dofs])
    return e * float(np.sum(w * u * t(pts, pts / e)))


def surface_limit(u0: Callable, t: TwoScaleTest, cell: CellGeometry, mesh: TriMesh,
                  n_sub: int = 16) -> float:
    """int_Omega int_dT u0(x) psi(x, y) dsigma(y) dx."""
    pts, w = mesh_quadrature(mesh)
    x = pts.reshape(-1, 2)
    wx = w.ravel() * np.asarray(u0(x), dtype=float)

    def inner(y1, y2):
        y = np.stack([y1, y2], -1)
        X = np.broadcast_to(x[:, None, :], (len(x), len(y), 2))
        return np.einsum("n,nk->k", wx, t(X, np.broadcast_to(y[None], X.shape)))

    return boundary_integral(cell, inner, n_sub)


# ---------------------------------------------------------------------------
# corrector


@dataclass(eq=False)
class CorrectedField:
    """x -> u0(x) + eps u1(x, x/eps) with u1(x, y) = -sum_ik d_i u0^k(x) chi_ik(y)."""

    macro: MacroSolution
    cell: CellSolution
    eps: float

    def evaluate(self, x: np.ndarray, gradient: bool = False):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        e = self.eps
        tri, bary = self.macro.mesh.locator.locate(x)
        u0, G = fem.evaluate_p2(self.macro.space, self.macro.u, None, tri, bary, gradient=True)
        chi, dchi = self.cell.evaluate(x / e, gradient=True)
        # G[n, k, i] = d_i u0^k ; chi[n, i, k, m] = component m of chi_ik
        u1 = -np.einsum("nki,nikm->nm", G, chi)
        val = u0 + e * u1
        if not gradient:
            return val
        H = fem.hessian_p2(self.macro.space, self.macro.u, tri)  # [n, k, i, l]
        grad = G - np.einsum("nki,nikml->nml", G, dchi) - e * np.einsum("nkil,nikm->nml", H, chi)
        return val, grad


def corrector_field(macro: MacroSolution, cell: CellSolution, eps) -> CorrectedField:
    return CorrectedField(macro, cell, float(as_scale(eps)))


def compare_on_micro(sol: MicroSolution, corrected: CorrectedField, chunk: int = 20000):
    """Errors of u0 and of the corrected field against u_eps on the perforated domain.

    Returns ``(l2 err of u0, H1 err of u0, H1 err of corrected)``; H1 is the
    full norm (L2 plus gradient part).
    """
    s = sol.space
    uq, gq = fem.at_quadrature(s, sol.u)
    pts = s.qp.reshape(-1, 2)
    w = s.qw.ravel()
    uq = uq.reshape(-1, 2)
    gq = gq.reshape(-1, 2, 2)
    acc = np.zeros(4)
    macro = corrected.macro
    for lo in range(0, len(pts), chunk):
        sl = slice(lo, lo + chunk)
        p = pts[sl]
        tri, bary = macro.mesh.locator.locate(p)
        u0, g0 = fem.evaluate_p2(macro.space, macro.u, None, tri, bary, gradient=True)
        uc, gc = corrected.evaluate(p, gradient=True)
        ww = w[sl]
        acc[0] += np.sum(ww * np.sum((uq[sl] - u0) ** 2, -1))
        acc[1] += np.sum(ww * np.sum((gq[sl] - g0) ** 2, (-2, -1)))
        acc[2] += np.sum(ww * np.sum((uq[sl] - uc) ** 2, -1))
        acc[3] += np.sum(ww * np.sum((gq[sl] - gc) ** 2, (-2, -1)))
    return float(np.sqrt(acc[0])), float(np.sqrt(acc[0] + acc[1])), float(np.sqrt(acc[2] + acc[3]))


# ---------------------------------------------------------------------------
# limit variational residual


@dataclass(frozen=True)
class TestPair:
    """phi0(x) vector field on Omega and phi1(x, y) = phi(x) w(y) with w periodic, divergence-free.

    phi0 = b(x) * (c1 + c2 * sin(pi x1) ..) is built from a bump times
    low modes; w = curl s(y) for a periodic stream function s.
    """

    __test__ = False  # not a pytest class despite the name

    c0: np.ndarray  # (2, K) coefficients of phi0 modes
    c1: np.ndarray  # (K,) coefficients of phi
    s: np.ndarray   # (M,) stream-function coefficients

    MODES = ((0, 0), (1, 0), (0, 1), (1, 1))
    STREAM = ((1, 0, "sin"), (0, 1, "sin"), (1, 1, "cos"), (1, -1, "sin"), (2, 1, "cos"))

    @classmethod
    def random(cls, rng: np.random.Generator) -> "TestPair":
        k = len(cls.MODES)
        return cls(rng.standard_normal((2, k)), rng.standard_normal(k), rng.standard_normal(len(cls.STREAM)))

    def _basis(self, x):
        """Scalar functions b(x) m_j(x) with b = sin^2(pi x1) sin^2(pi x2); values and gradients."""
        s1, s2 = np.sin(np.pi * x[..., 0]), np.sin(np.pi * x[..., 1])
        c1, c2 = np.cos(np.pi * x[..., 0]), np.cos(np.pi * x[..., 1])
        b = s1 ** 2 * s2 ** 2
        db = np.stack([2 * np.pi * s1 * c1 * s2 ** 2, 2 * np.pi * s2 * c2 * s1 ** 2], -1)
        vals, grads = [], []
        for a, bb in self.MODES:
            m = np.cos(a * np.pi * x[..., 0]) * np.cos(bb * np.pi * x[..., 1])
            dm = np.stack([-a * np.pi * np.sin(a * np.pi * x[..., 0]) * np.cos(bb * np.pi * x[..., 1]),
                           -bb * np.pi * np.cos(a * np.pi * x[..., 0]) * np.sin(bb * np.pi * x[..., 1])], -1)
            vals.append(b * m)
            grads.append(db * m[..., None] + b[..., None] * dm)
        return np.stack(vals, -1), np.stack(grads, -2)

    def phi0(self, x):
        """Values (..., 2) and gradients (..., 2, 2) [k, i] = d_i phi0^k."""
        v, g = self._basis(x)
        return np.einsum("kj,...j->...k", self.c0, v), np.einsum("kj,...ji->...ki", self.c0, g)

    def phi(self, x):
        v, _ = self._basis(x)
        return v @ self.c1

    def w(self, y):
        """w = (d s/d y2, -d s/d y1); values (..., 2), gradients (..., 2, 2) [m, l] = d_l w^m."""
        val = np.zeros(y.shape[:-1] + (2,))
        grad = np.zeros(y.shape[:-1] + (2, 2))
        tp = 2 * np.pi
        for c, (a, b, kind) in zip(self.s, self.STREAM):
            arg = tp * (a * y[..., 0] + b * y[..., 1])
            f, df, d2f = ((np.sin(arg), np.cos(arg), -np.sin(arg)) if kind == "sin"
                          else (np.cos(arg), -np.sin(arg), -np.cos(arg)))
            ds = tp * np.stack([a * df, b * df], -1)
            d2 = tp * tp * d2f[..., None, None] * np.array([[a * a, a * b], [a * b, b * b]])
            val += c * np.stack([ds[..., 1], -ds[..., 0]], -1)
            grad[..., 0, :] += c * d2[..., 1, :]
            grad[..., 1, :] -= c * d2[..., 0, :]
        return val, grad


def cell_quadrature(sol: CellSolution):
    s = sol.space
    return s.qp.reshape(-1, 2), s.qw.ravel()


def two_scale_form(cell: CellSolution, first: TestPair, second: TestPair, mesh: TriMesh) -> float:
    """a_Omega on two test pairs: int int a_ij D_j u^k D_i v^k + theta_tilde int u0 . v0.

    With D u = grad phi0(x) + phi(x) grad w(y) every term factorises into an
    x-integral times a y-integral.
    """
    x, wx = mesh_quadrature(mesh)
    x, wx = x.reshape(-1, 2), wx.ravel()
    y, wy = cell_quadrature(cell)
    a = cell.coeffs.a_at(y[:, 0], y[:, 1])
    u0, du0 = first.phi0(x)
    v0, dv0 = second.phi0(x)
    pu, pv = first.phi(x), second.phi(x)
    _, dwu = first.w(y)
    _, dwv = second.w(y)
    ma = np.einsum("n,nij->ij", wy, a)
    total = np.einsum("n,nkj,ij,nki->", wx, du0, ma, dv0)
    total += np.einsum("n,n,nkj->kj", wx, pv, du0).ravel() @ np.einsum("m,mij,mki->kj", wy, a, dwv).ravel()
    total += np.einsum("n,n,nki->ki", wx, pu, dv0).ravel() @ np.einsum("m,mij,mkj->ki", wy, a, dwu).ravel()
    total += np.sum(wx * pu * pv) * np.einsum("m,mij,mkj,mki->", wy, a, dwu, dwv)
    theta = boundary_integral(cell.cell, cell.coeffs.theta_at)
    return float(total + theta * np.einsum("n,nk,nk->", wx, u0, v0))


def two_scale_residual(
    macro: MacroSolution, cell: CellSolution, test: TestPair,
    forcing: Callable[[np.ndarray], np.ndarray] | None = None,
) -> float:
    """a_Omega((u0, u1), (phi0, phi1)) - int p0 div phi0 - l_Omega(phi).

    u1 = -sum d_i u0^k chi_ik.  The double integrals over Omega x Y* are
    products of x- and y-integrands, so they are evaluated as products of
    the single-scale quadratures.  ``forcing`` replaces the constant mean
    force by an x-dependent field (verification only).
    """
    c = cell.coeffs
    sp = macro.space
    x = sp.qp.reshape(-1, 2)
    wx = sp.qw.ravel()
    u0, G = fem.at_quadrature(sp, macro.u)
    u0 = u0.reshape(-1, 2)
    G = G.reshape(-1, 2, 2)  # [k, i]
    p0 = fem.pressure_at_quadrature(sp, macro.p).ravel()
    f0, dphi0 = test.phi0(x)
    phi = test.phi(x)

    y, wy = cell_quadrature(cell)
    a = c.a_at(y[:, 0], y[:, 1])
    _, dw = test.w(y)
    # K[m, h, k, i] = int_Y* sum_j a_ij d_j (P_mh - chi_mh)^k  (equals q_imkh)
    # L[m, h] = int_Y* sum a_ij d_j (P_mh - chi_mh)^k d_i w^k
    K = np.zeros((2, 2, 2, 2))
    L = np.zeros((2, 2))
    cs = cell.space
    for m, h in PAIRS:
        _, g = fem.at_quadrature(cs, cell.chi[m, h])
        g = -g.reshape(-1, 2, 2)
        g[:, h, m] += 1.0
        flux = np.einsum("nij,nkj->nki", a, g)
        K[m, h] = np.einsum("n,nki->ki", wy, flux)
        L[m, h] = np.einsum("n,nki,nki->", wy, flux, dw)
    vol = np.einsum("n,nhm,mhki,nki->", wx, G, K, dphi0)
    vol += np.einsum("n,nhm,n,mh->", wx, G, phi, L)
    theta = boundary_integral(cell.cell, c.theta_at)
    surf = theta * np.einsum("n,nk,nk->", wx, u0, f0)
    pres = np.einsum("n,n,n->", wx, p0, np.einsum("nkk->n", dphi0))
    if forcing is None:
        fy = c.f_at(y[:, 0], y[:, 1])
        ftilde = np.einsum("n,nk->k", wy, fy)
        load = np.einsum("n,nk,k->", wx, f0, ftilde)
    else:
        load = np.einsum("n,nk,nk->", wx, f0, forcing(x))
    return float(vol + surf - pres - load)


def two_scale_residual_direct(
    macro: MacroSolution, cell: CellSolution, test: TestPair,
    forcing: Callable[[np.ndarray], np.ndarray] | None = None,
) -> float:
    """Same quantity by brute-force double quadrature of D_j u^k D_i phi^k (oracle route)."""
    c = cell.coeffs
    sp = macro.space
    x = sp.qp.reshape(-1, 2)
    wx = sp.qw.ravel()
    u0, G = fem.at_quadrature(sp, macro.u)
    u0, G = u0.reshape(-1, 2), G.reshape(-1, 2, 2)
    p0 = fem.pressure_at_quadrature(sp, macro.p).ravel()
    f0, dphi0 = test.phi0(x)
    phi = test.phi(x)
    y, wy = cell_quadrature(cell)
    a = c.a_at(y[:, 0], y[:, 1])
    _, dw = test.w(y)
    dchi = np.zeros((len(y), 2, 2, 2, 2))  # [n, i, k, m, l]
    for i, k in PAIRS:
        _, g = fem.at_quadrature(cell.space, cell.chi[i, k])
        dchi[:, i, k] = g.reshape(-1, 2, 2)
    total = 0.0
    for n in range(len(x)):
        # D_j u^m = d_j u0^m - sum_ik d_i u0^k d_{y_j} chi^m_ik
        Du = G[n][None] - np.einsum("ki,yikml->yml", G[n], dchi)
        Dphi = dphi0[n][None] + phi[n] * dw
        total += wx[n] * np.einsum("y,yij,ykj,yki->", wy, a, Du, Dphi)
    theta = boundary_integral(cell.cell, c.theta_at)
    total += theta * np.einsum("n,nk,nk->", wx, u0, f0)
    total -= np.einsum("n,n,n->", wx, p0, np.einsum("nkk->n", dphi0))
    if forcing is None:
        ft = np.einsum("n,nk->k", wy, c.f_at(y[:, 0], y[:, 1]))
        total -= np.einsum("n,nk,k->", wx, f0, ft)
    else:
        total -= np.einsum("n,nk,nk->", wx, f0, forcing(x))
    return float(total)


def residual_scale(macro: MacroSolution, cell: CellSolution, test: TestPair,
                   forcing: Callable | None = None) -> float:
    """Sum of the magnitudes of the residual's individual terms (normalisation)."""
    sp = macro.space
    x = sp.qp.reshape(-1, 2)
    wx = sp.qw.ravel()
    u0, G = fem.at_quadrature(sp, macro.u)
    p0 = fem.pressure_at_quadrature(sp, macro.p).ravel()
    f0, dphi0 = test.phi0(x)
    l2 = lambda v: float(np.sqrt(np.sum(wx * np.sum(v.reshape(len(wx), -1) ** 2, -1))))
    q = np.abs(effective_tensor(cell).q).max()
    _, dw = test.w(cell_quadrature(cell)[0])
    phi = test.phi(x)
    force = (np.abs(cell.coeffs.f_at(*cell_quadrature(cell)[0].T)).max() if forcing is None
             else l2(forcing(x)))
    return (q * l2(G) * (l2(dphi0) + l2(phi) * np.abs(dw).max())
            + l2(u0) * l2(f0) * 4 + l2(p0) * l2(dphi0) + force * l2(f0))


# ---------------------------------------------------------------------------
# sweep


@dataclass
class SweepConfig:
    cell: CellGeometry = field(default_factory=CellGeometry.square)
    coeffs: CoefficientSet = field(default_factory=lambda: CoefficientSet.from_strings(name="canonical"))
    domain: MacroDomain = field(default_factory=MacroDomain)
    eps: Sequence = (0.25, 0.125, 0.0625)
    h_cell: float = 0.04
    h_macro: float = 1 / 32
    h_micro_factor: float = 0.25
    hole_bc: str = "slip"
    seed: int = 0


PRESSURE_TESTS = {
    "pair_phi0": lambda x: np.ones(x.shape[:-1]),
    "pair_phi1": lambda x: np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]),
    "pair_phi2": lambda x: x[..., 0] * (1 - x[..., 0]) * x[..., 1] * (1 - x[..., 1]),
}


@dataclass
class ConvergenceReport:
    rows: list[dict]
    tensor: EffectiveTensor
    limit: dict
    config: SweepConfig

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def pressure_pairings(sol: MicroSolution, macro: MacroSolution) -> dict:
    """int (p_eps extended by zero - p0) phi over the domain for the fixed test functions."""
    pts_e, w_e = sol.space.qp, sol.space.qw
    pe = fem.pressure_at_quadrature(sol.space, sol.p)
    pts_0, w_0 = macro.space.qp, macro.space.qw
    p0 = fem.pressure_at_quadrature(macro.space, macro.p)
    return {k: float(np.sum(w_e * pe * g(pts_e)) - np.sum(w_0 * p0 * g(pts_0)))
            for k, g in PRESSURE_TESTS.items()}


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, exc) from exc


def _sweep_row(cfg: SweepConfig, macro: MacroSolution, cellsol: CellSolution, e) -> dict:
    ef = float(e)
    sol = _stage(f"micro eps={ef:g}", solve_micro, cfg.domain, cfg.cell, cfg.coeffs, e,
                 ef * cfg.h_micro_factor, hole_bc=cfg.hole_bc)
    corr = corrector_field(macro, cellsol, e)
    l2, h1_u0, h1_corr = _stage(f"compare eps={ef:g}", compare_on_micro, sol, corr)
    g, s, p = apriori_norms(sol)
    row = {
        "epsilon": ef,
        "holes": len(sol.lattice.members),
        "fluid_area": float(fluid_area(cfg.domain, cfg.cell, e)),
        "l2_vel_err": l2,
        "h1_corrector_err": h1_corr,
        "h1_u0_err": h1_u0,
        "grad_norm": g,
        "surf_norm": s,
        "pressure_norm": p,
        "mesh_fluid_area": sol.mesh.area,
    }
    row.update(pressure_pairings(sol, macro))
    log.info("eps=%g l2=%.4g h1corr=%.4g h1u0=%.4g", ef, l2, h1_corr, h1_u0)
    return row


def convergence_sweep(cfg: SweepConfig, on_row: Callable[[dict], None] | None = None,
                      workers: int = 1) -> ConvergenceReport:
    """Cell problems once, the macro problem once, the micro problem per eps.

    The per-eps stages are independent; with ``workers > 1`` they run on a
    thread pool and the rows are still assembled in decreasing-eps order,
    so the report does not depend on the worker count.
    """
    cellsol = _stage("cell", solve_cell_problems, cfg.cell, cfg.coeffs, cfg.h_cell)
    tensor = _stage("cell", effective_tensor, cellsol)
    macro = _stage("macro", solve_macro, tensor, cfg.domain, cfg.h_macro)
    eps_list = sorted((as_scale(e) for e in cfg.eps), reverse=True)
    cellsol.extension()  # build the shared lazy state before any worker starts
    run = lambda e: _sweep_row(cfg, macro, cellsol, e)
    if workers > 1 and len(eps_list) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(eps_list))) as pool:
            rows = list(pool.map(run, eps_list))
    else:
        rows = [run(e) for e in eps_list]
    if on_row is not None:
        for row in rows:
            on_row(row)
    u0n = fem.field_norms(macro.space, macro.u)
    limit = {
        "fluid_area": float(cfg.cell.fluid_area * cfg.domain.area),
        "u0_l2": u0n.l2,
        "u0_grad": u0n.h1_semi,
        "p0_l2": fem.field_norms(macro.space, macro.p).l2,
    }
    return ConvergenceReport(rows, tensor, limit, cfg)
