"""Numerical homogenization of Stokes flow through periodically perforated media with slip on the holes."""

__version__ = "0.1.0"

from .cell import CellSolution, EffectiveTensor, effective_data, effective_tensor, solve_cell_problems
from .coeff import CoefficientSet, check_hypotheses, preset
from .geometry import CellGeometry, MacroDomain, fluid_area, hole_lattice, residual_measure
from .macro import MacroSolution, solve_macro
from .micro import MicroSolution, extend_into_holes, solve_micro
from .twoscale import ConvergenceReport, SweepConfig, TwoScaleTest, convergence_sweep

__all__ = [
    "CellGeometry", "CellSolution", "CoefficientSet", "ConvergenceReport", "EffectiveTensor",
    "MacroDomain", "MacroSolution", "MicroSolution", "SweepConfig", "TwoScaleTest",
    "check_hypotheses", "convergence_sweep", "effective_data", "effective_tensor",
    "extend_into_holes", "fluid_area", "hole_lattice", "preset", "residual_measure",
    "solve_cell_problems", "solve_macro", "solve_micro",
]
