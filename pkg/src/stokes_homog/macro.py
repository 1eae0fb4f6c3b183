"""Homogenised Stokes-type system with constant effective coefficients on the whole domain."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fem
from .cell import EffectiveTensor
from .geometry import MacroDomain
from .mesh import OUTER, TriMesh, mesh_rectangle


class IndefiniteTensorError(ValueError):
    pass


@dataclass(eq=False)
class MacroSolution:
    mesh: TriMesh
    space: fem.DofSpace
    system: fem.SaddleSystem
    u: np.ndarray
    p: np.ndarray
    tensor: EffectiveTensor
    h: float

    def velocity(self, x: np.ndarray, gradient: bool = False):
        return fem.evaluate_p2(self.space, self.u, x, gradient=gradient)

    def pressure(self, x: np.ndarray) -> np.ndarray:
        return fem.evaluate_p1(self.space, self.p, x)


def solve_macro(
    tensor: EffectiveTensor, domain: MacroDomain = MacroDomain(), h: float = 1 / 32,
    forcing: Callable[[np.ndarray], np.ndarray] | None = None, mesh: TriMesh | None = None,
    min_eig: float = 0.0,
) -> MacroSolution:
    """Solve sum q_ijkh int d_j u^h d_i v^k + theta int u.v - int p div v = int f.v, u = 0 on the boundary.

    ``forcing`` overrides the constant f_tilde (used for manufactured
    solutions).  Tensors whose 4x4 matrix is not positive definite are
    refused.
    """
    lam = tensor.min_eigenvalue
    if not lam > min_eig:
        raise IndefiniteTensorError(
            f"effective tensor matrix is not positive definite: min eigenvalue {lam:.6g}\n"
            f"{np.array2string(tensor.matrix, precision=6)}"
        )
    m = mesh_rectangle(domain, h) if mesh is None else mesh
    space = fem.build_space(m, {OUTER: "dirichlet"})
    sys = fem.assemble_saddle(space, scale=fem.MacroScaling(tensor.q, tensor.theta_tilde))
    if forcing is None:
        f0 = np.asarray(tensor.f_tilde, dtype=float)
        forcing = lambda x: np.broadcast_to(f0, x.shape)
    rhs = fem.load_vector(space, forcing)
    u, p = fem.solve_saddle(sys, rhs)
    return MacroSolution(m, space, sys, u, p, tensor, float(h))


@dataclass(frozen=True)
class ManufacturedSolution:
    """u = curl psi with psi = sin^2(pi x1) sin^2(pi x2), p = sin(2 pi x1) sin(2 pi x2)."""

    q: np.ndarray
    theta: float

    @staticmethod
    def velocity(x: np.ndarray) -> np.ndarray:
        s1, c1 = np.sin(np.pi * x[..., 0]), np.cos(np.pi * x[..., 0])
        s2, c2 = np.sin(np.pi * x[..., 1]), np.cos(np.pi * x[..., 1])
        return np.stack([2 * np.pi * s1 ** 2 * s2 * c2, -2 * np.pi * s1 * c1 * s2 ** 2], -1)

    @staticmethod
    def velocity_gradient(x: np.ndarray) -> np.ndarray:
        """(..., 2, 2) with [k, j] = d u^k / d x_j."""
        a, b = np.pi * x[..., 0], np.pi * x[..., 1]
        p = np.pi
        g = np.empty(x.shape[:-1] + (2, 2))
        # u1 = pi sin^2(a) sin(2b),  u2 = -pi sin(2a) sin^2(b)
        g[..., 0, 0] = p * p * np.sin(2 * a) * np.sin(2 * b)
        g[..., 0, 1] = 2 * p * p * np.sin(a) ** 2 * np.cos(2 * b)
        g[..., 1, 0] = -2 * p * p * np.cos(2 * a) * np.sin(b) ** 2
        g[..., 1, 1] = -p * p * np.sin(2 * a) * np.sin(2 * b)
        return g

    @staticmethod
    def velocity_hessian(x: np.ndarray) -> np.ndarray:
        """(..., 2, 2, 2) with [k, i, j] = d^2 u^k / d x_i d x_j."""
        a, b = np.pi * x[..., 0], np.pi * x[..., 1]
        p3 = np.pi ** 3
        H = np.empty(x.shape[:-1] + (2, 2, 2))
        H[..., 0, 0, 0] = 2 * p3 * np.cos(2 * a) * np.sin(2 * b)
        H[..., 0, 0, 1] = H[..., 0, 1, 0] = 2 * p3 * np.sin(2 * a) * np.cos(2 * b)
        H[..., 0, 1, 1] = -4 * p3 * np.sin(a) ** 2 * np.sin(2 * b)
        H[..., 1, 0, 0] = 4 * p3 * np.sin(2 * a) * np.sin(b) ** 2
        H[..., 1, 0, 1] = H[..., 1, 1, 0] = -2 * p3 * np.cos(2 * a) * np.sin(2 * b)
        H[..., 1, 1, 1] = -2 * p3 * np.sin(2 * a) * np.cos(2 * b)
        return H

    @staticmethod
    def pressure(x: np.ndarray) -> np.ndarray:
        return np.sin(2 * np.pi * x[..., 0]) * np.sin(2 * np.pi * x[..., 1])

    @staticmethod
    def pressure_gradient(x: np.ndarray) -> np.ndarray:
        a, b = 2 * np.pi * x[..., 0], 2 * np.pi * x[..., 1]
        return 2 * np.pi * np.stack([np.cos(a) * np.sin(b), np.sin(a) * np.cos(b)], -1)

    def forcing(self, x: np.ndarray) -> np.ndarray:
        """f^k = -sum_ijh q_ijkh d_i d_j u^h + theta u^k + d_k p."""
        H = self.velocity_hessian(x)
        Qu = -np.einsum("ijkh,...hij->...k", self.q, H)
        return Qu + self.theta * self.velocity(x) + self.pressure_gradient(x)


def mms_forcing(q: np.ndarray | None = None, theta: float = 0.0) -> ManufacturedSolution:
    eye = np.eye(2)
    q = np.einsum("ij,kh->ijkh", eye, eye) if q is None else np.asarray(q, dtype=float)
    return ManufacturedSolution(q, float(theta))


def mms_errors(sol: MacroSolution, ms: ManufacturedSolution) -> tuple[float, float, float]:
    """(L2 velocity error, H1-seminorm velocity error, L2 pressure error)."""
    nv = fem.field_norms(sol.space, sol.u, exact=ms.velocity, exact_grad=ms.velocity_gradient)
    npr = fem.field_norms(sol.space, sol.p, exact=ms.pressure)
    return nv.l2_error, nv.h1_semi_error, npr.l2_error


def mms_study(hs=(1 / 16, 1 / 32, 1 / 64), q=None, theta: float = 0.0, domain=MacroDomain()):
    """Errors and observed orders of the manufactured-solution test over mesh sizes."""
    ms = mms_forcing(q, theta)
    tensor = EffectiveTensor(ms.q, theta, np.zeros(2))
    errs = []
    for h in hs:
        sol = solve_macro(tensor, domain, h, forcing=ms.forcing)
        errs.append(mms_errors(sol, ms))
    errs = np.array(errs)
    ratios = np.log(np.array(hs[:-1]) / np.array(hs[1:]))
    orders = np.log(errs[:-1] / errs[1:]) / ratios[:, None]
    return errs, orders
