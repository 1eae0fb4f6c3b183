"""Y-periodic coefficient data a_ij(y), theta(y), f(y) and hypothesis checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import CELL_VARIABLES, Expr, compile_expr, parse_expr, to_string

PERIODICITY_TOL = 1e-9
PERIODICITY_WARN = 1e-6


@dataclass(frozen=True)
class CoefficientSet:
    """Viscosity matrix, slip friction and forcing on the unit cell.

    Only the upper triangle of ``a`` is stored; ``a21`` mirrors ``a12``.
    """

    a11: Expr
    a12: Expr
    a22: Expr
    theta: Expr
    f: tuple[Expr, Expr]
    alpha: float = 1.0
    alpha0: float = 1.0
    name: str = "custom"

    @classmethod
    def from_strings(
        cls,
        a: Sequence[Sequence[str]] | None = None,
        theta: str = "1",
        f: Sequence[str] = ("1", "0"),
        alpha: float = 1.0,
        alpha0: float = 1.0,
        name: str = "custom",
        *,
        a11: str | None = None,
        a12: str | None = None,
        a22: str | None = None,
    ) -> "CoefficientSet":
        if a is not None:
            a11, a12, a22 = a[0][0], a[0][1], a[1][1]
            if a[1][0] != a[0][1] and parse_expr(a[1][0]) != parse_expr(a[0][1]):
                raise ValueError("coefficient matrix must be symmetric: a12 != a21")
        a11 = "1" if a11 is None else a11
        a12 = "0" if a12 is None else a12
        a22 = "1" if a22 is None else a22
        if len(f) != 2:
            raise ValueError("forcing must have two components")
        return cls(
            parse_expr(a11), parse_expr(a12), parse_expr(a22), parse_expr(theta),
            (parse_expr(f[0]), parse_expr(f[1])), float(alpha), float(alpha0), name,
        )

    def scaled(self, factor: float) -> "CoefficientSet":
        """Multiply a and theta by ``factor`` (f unchanged)."""
        from .expr import Binary, Num

        s = Num(float(factor))
        return CoefficientSet(
            Binary("*", s, self.a11), Binary("*", s, self.a12), Binary("*", s, self.a22),
            Binary("*", s, self.theta), self.f, self.alpha * factor, self.alpha0 * factor,
            f"{self.name}*{factor:g}",
        )

    def with_forcing(self, f: Sequence[str]) -> "CoefficientSet":
        return CoefficientSet(
            self.a11, self.a12, self.a22, self.theta, (parse_expr(f[0]), parse_expr(f[1])),
            self.alpha, self.alpha0, self.name,
        )

    def a_at(self, y1, y2) -> np.ndarray:
        """Matrix field with shape ``broadcast(y1, y2).shape + (2, 2)``."""
        a11 = compile_expr(self.a11)(y1=y1, y2=y2)
        a12 = compile_expr(self.a12)(y1=y1, y2=y2)
        a22 = compile_expr(self.a22)(y1=y1, y2=y2)
        return np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)

    def theta_at(self, y1, y2) -> np.ndarray:
        return compile_expr(self.theta)(y1=y1, y2=y2)

    def f_at(self, y1, y2) -> np.ndarray:
        return np.stack([compile_expr(g)(y1=y1, y2=y2) for g in self.f], -1)

    def expressions(self) -> dict[str, Expr]:
        return {
            "a11": self.a11, "a12": self.a12, "a22": self.a22, "theta": self.theta,
            "f1": self.f[0], "f2": self.f[1],
        }

    def to_dict(self) -> dict:
        return {
            "a": [[to_string(self.a11), to_string(self.a12)],
                  [to_string(self.a12), to_string(self.a22)]],
            "theta": to_string(self.theta),
            "f": [to_string(g) for g in self.f],
            "alpha": self.alpha,
            "alpha0": self.alpha0,
            "name": self.name,
        }


def preset(name: str) -> CoefficientSet:
    """Built-in coefficient sets: ``identity``, ``laminate``, ``checkerboard``."""
    if name == "identity":
        return CoefficientSet.from_strings(name=name)
    if name == "laminate":
        return CoefficientSet.from_strings(a11="2+sin(2*pi*y1)", a22="2+sin(2*pi*y1)", name=name)
    if name == "checkerboard":
        g = "2+cos(2*pi*y1)*cos(2*pi*y2)"
        return CoefficientSet.from_strings(a11=g, a22=g, name=name)
    raise KeyError(f"unknown coefficient preset {name!r}")


PRESETS = ("identity", "laminate", "checkerboard")


@dataclass
class HypothesisReport:
    min_eig: float
    min_theta: float
    max_defect: float
    defects: dict[str, float]
    alpha: float
    alpha0: float
    passed: bool
    warnings: list[str] = field(default_factory=list)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [
            f"{status}: min eig(a) = {self.min_eig:.12g} (alpha = {self.alpha:g}), "
            f"min theta = {self.min_theta:.12g} (alpha0 = {self.alpha0:g}), "
            f"periodicity defect = {self.max_defect:.3g}",
        ]
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def check_hypotheses(
    c: CoefficientSet, grid: int = 64, n_random: int = 1000, seed: int = 0,
    tol: float = 1e-12,
) -> HypothesisReport:
    """Sample ellipticity, positivity of theta and Y-periodicity of every expression.

    The grid is ``grid x grid`` points ``-1/2 + j/grid`` plus ``n_random``
    uniform points.  Periodicity is probed on the faces y_i = -1/2 against
    the translated points on y_i = +1/2.  ``tol`` is the relative slack on
    the ellipticity and positivity comparisons.
    """
    rng = np.random.default_rng(seed)
    t = -0.5 + np.arange(grid) / grid
    g1, g2 = np.meshgrid(t, t, indexing="ij")
    r = rng.uniform(-0.5, 0.5, size=(n_random, 2))
    y1 = np.concatenate([g1.ravel(), r[:, 0]])
    y2 = np.concatenate([g2.ravel(), r[:, 1]])

    eig = np.linalg.eigvalsh(c.a_at(y1, y2))
    min_eig = float(eig[:, 0].min())
    min_theta = float(c.theta_at(y1, y2).min())

    s = np.concatenate([t, rng.uniform(-0.5, 0.5, size=n_random // 10)])
    lo = np.full_like(s, -0.5)
    defects = {}
    for key, e in c.expressions().items():
        g = compile_expr(e)
        d1 = np.abs(g(y1=lo + 1.0, y2=s) - g(y1=lo, y2=s))
        d2 = np.abs(g(y1=s, y2=lo + 1.0) - g(y1=s, y2=lo))
        defects[key] = float(max(d1.max(), d2.max()))
    max_defect = max(defects.values())

    warnings = []
    if PERIODICITY_TOL < max_defect <= PERIODICITY_WARN:
        warnings.append(f"small periodicity defect {max_defect:.3g}")
    passed = (
        min_eig >= c.alpha * (1 - tol)
        and min_theta >= c.alpha0 * (1 - tol)
        and max_defect <= PERIODICITY_TOL
    )
    return HypothesisReport(
        min_eig, min_theta, max_defect, defects, c.alpha, c.alpha0, passed, warnings
    )


__all__ = [
    "CELL_VARIABLES", "CoefficientSet", "HypothesisReport", "PRESETS",
    "check_hypotheses", "preset",
]
