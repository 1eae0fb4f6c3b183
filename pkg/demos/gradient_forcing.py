"""Why the canonical preset has no flow, and what a real flow looks like.

Every coefficient depends on the fast variable only, so the mean force
f_tilde is a constant vector and therefore a gradient.  The macro problem
answers with u0 = 0 and p0 = f_tilde.x - c.  On the perforated domain with
slip holes the constant force f = (1, 0) is balanced the same way: u_eps = 0
and p_eps = x1 - c.  A force that varies with the fast variable, such as
(sin 2 pi y2, 0), still has f_tilde = 0 but drives a genuine micro flow.
"""
import numpy as np

from stokes_homog.cell import effective_tensor, solve_cell_problems
from stokes_homog.coeff import CoefficientSet
from stokes_homog.geometry import CellGeometry, MacroDomain
from stokes_homog.macro import solve_macro
from stokes_homog.micro import apriori_norms, solve_micro

cell, dom = CellGeometry.square(), MacroDomain()
canonical = CoefficientSet.from_strings(name="canonical")
probe = canonical.with_forcing(("sin(2*pi*y2)", "0"))

t = effective_tensor(solve_cell_problems(cell, canonical, 0.08))
macro = solve_macro(t, dom, 1 / 16)
x = np.random.default_rng(0).random((200, 2))
print(f"macro: max |u0| = {np.abs(macro.velocity(x)).max():.1e}, "
      f"max |p0 - 0.75 (x1 - 1/2)| = {np.abs(macro.pressure(x) - 0.75 * (x[:, 0] - 0.5)).max():.1e}")

for name, c in (("canonical", canonical), ("probe", probe)):
    for e in (1 / 4, 1 / 8):
        sol = solve_micro(dom, cell, c, e, e / 4)
        g, s, p = apriori_norms(sol)
        print(f"{name:9s} eps={e:<6g} ||grad u|| = {g:.3e}  eps int|u|^2 = {s:.3e}  ||p|| = {p:.3e}")
