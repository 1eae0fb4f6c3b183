"""Convergence sweep over eps = 1/4, 1/8, 1/16 for the probe forcing.

Runs the full pipeline (cell problems, macro problem, one micro problem per
eps) and prints the report.  With u0 = 0 the L2 error is the size of u_eps
itself, which shrinks roughly like eps^2.
"""
from fractions import Fraction

from stokes_homog.coeff import CoefficientSet
from stokes_homog.micro import extend_into_holes, solve_micro
from stokes_homog.twoscale import SweepConfig, convergence_sweep

coeffs = CoefficientSet.from_strings(f=("sin(2*pi*y2)", "0"))
cfg = SweepConfig(coeffs=coeffs, eps=(Fraction(1, 4), Fraction(1, 8), Fraction(1, 16)))
rep = convergence_sweep(cfg, workers=3)
print(rep.to_csv(), end="")
print("limit:", {k: round(v, 6) for k, v in rep.limit.items()})

# the extension into the holes keeps the gradient under control
for e in cfg.eps:
    ext = extend_into_holes(solve_micro(cfg.domain, cfg.cell, coeffs, e, float(e) / 4))
    print(f"eps={float(e):<6g} extension constant {ext.gradient_constant():.3f}, "
          f"hole divergence {ext.hole_divergence():.1e}")
