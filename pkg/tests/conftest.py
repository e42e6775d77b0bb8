import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tltreach.dynamics import Dubins3, Integrator1D
from tltreach.geometry import Box, Labeling
from tltreach.grid import Grid
from tltreach.hjsolver import SolveOptions
from tltreach.tlt import construct

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

INF = np.inf


def planar_box(x0, x1, y0, y1) -> Box:
    """Box over (x, y) leaving the heading free."""
    return Box((x0, y0, -INF), (x1, y1, INF))


@pytest.fixture(scope="session")
def line_grid():
    return Grid((-2.0,), (2.0,), (401,))


@pytest.fixture(scope="session")
def integrator():
    return Integrator1D()


@pytest.fixture(scope="session")
def dubins_grid():
    return Grid((-5, -5, -np.pi), (5, 5, np.pi), (41, 41, 41), (False, False, True))


@pytest.fixture(scope="session")
def corridor_lab():
    return Labeling({"road": planar_box(-4.5, 4.5, -2.5, 2.5),
                     "goal": planar_box(2.5, 4.5, -1.5, 1.5)}, 3)


@pytest.fixture(scope="session")
def corridor(dubins_grid, corridor_lab):
    """The desk-scale "road U goal" tree, built once per session."""
    return construct("road U goal", corridor_lab, Dubins3(1.0, 1.0), dubins_grid, SolveOptions(10.0))


@pytest.fixture(scope="session")
def parking_lab():
    return Labeling({
        "road": planar_box(-4.5, 4.5, -4.5, -0.5),
        "top": planar_box(-4.5, 4.5, 1.5, 4.5),
        "passL": planar_box(-4.5, -1.5, -4.5, 4.5),
        "passR": planar_box(1.5, 4.5, -4.5, 4.5),
        "spot": planar_box(-1.0, 1.0, 2.5, 4.5),
    }, 3)


PARKING_FORMULA = "((road | passL | top) U spot) | ((road | passR | top) U spot)"


@pytest.fixture(scope="session")
def parking(parking_lab):
    grid = Grid((-5, -5, -np.pi), (5, 5, np.pi), (31, 31, 31), (False, False, True))
    return construct(PARKING_FORMULA, parking_lab, Dubins3(1.0, 1.5), grid, SolveOptions(20.0))
