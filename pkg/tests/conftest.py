import logging

import numpy as np
import pytest

from egp_topopt.model import (GridSpec, LoadCase, MaterialSpec, ProblemDefinition, X, Y,
                              make_inverter_problem, make_mbb_problem)

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_solver_warnings():
    logging.getLogger("egp_topopt").setLevel(logging.ERROR)
    yield


@pytest.fixture
def small_mbb():
    return make_mbb_problem(6, 2)


@pytest.fixture
def small_inverter():
    return make_inverter_problem(8, 8)


def cantilever_1x1(load=-1.0, material=None):
    """One Q4 element, left edge clamped, vertical load at the top-right node."""
    grid = GridSpec(1, 1)
    left = grid.node(0, np.array([0, 1]))
    fixed = np.concatenate([grid.dof(left, X), grid.dof(left, Y)])
    case = LoadCase(forces=((int(grid.dof(grid.node(1, 0), Y)), load),),
                    fixed_dofs=tuple(int(d) for d in fixed))
    return ProblemDefinition(grid=grid, material=material or MaterialSpec(),
                             load_cases=(case,), volume_fraction=0.5)


def with_zero_load(p):
    """Copy of ``p`` whose load case carries no force; construction refuses
    such problems, so the validated instance is patched after the fact."""
    zero = LoadCase(forces=((int(p.load_cases[0].forces[0][0]), 0.0),),
                    fixed_dofs=p.load_cases[0].fixed_dofs)
    q = p.replace()
    object.__setattr__(q, "load_cases", (zero,))
    return q
