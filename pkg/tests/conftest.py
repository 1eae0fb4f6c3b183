"""Shared, session-cached solves for the canonical configuration."""
import sys

import pytest

from stokes_homog.cell import effective_tensor, solve_cell_problems
from stokes_homog.coeff import CoefficientSet
from stokes_homog.geometry import CellGeometry, MacroDomain
from stokes_homog.macro import solve_macro


@pytest.fixture(scope="session")
def square():
    return CellGeometry.square()


@pytest.fixture(scope="session")
def canonical():
    return CoefficientSet.from_strings(name="canonical")


@pytest.fixture(scope="session")
def unit_domain():
    return MacroDomain()


@pytest.fixture(scope="session")
def cell_solution(square, canonical):
    return solve_cell_problems(square, canonical, 0.04)


@pytest.fixture(scope="session")
def tensor(cell_solution):
    return effective_tensor(cell_solution)


@pytest.fixture(scope="session")
def macro_solution(tensor, unit_domain):
    return solve_macro(tensor, unit_domain, 1 / 32)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance")
    for n in sorted(results, key=lambda n: n or 99):
        terminalreporter.write_line(results[n].line() if n else results[n].detail)
