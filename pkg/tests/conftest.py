import numpy as np
import pytest

from katosde.fields import (as_drift, constant_field, make_example, mollify,
                            sample_to_grid)
from katosde.pde import GridSpec, choose_horizon, picard_solve


@pytest.fixture(scope="session")
def power_product():
    return make_example("power_product", (-0.25, -0.25), 2, 1.0)


@pytest.fixture(scope="session")
def pp_drift(power_product):
    return as_drift(power_product)


@pytest.fixture(scope="session")
def mollified_drift_grid(pp_drift):
    """Level-6 mollified power-product drift, sampled once onto a lattice."""
    bn = mollify(pp_drift, 6)
    return sample_to_grid(bn, 2.0, 64, 192).as_field(
        {**bn.metadata, "drift_id": "pp_mollified_6"})


@pytest.fixture(scope="session")
def const_drift_solution():
    """Mild solution with f = b for the constant drift (0.5, 0)."""
    b = constant_field(np.array([0.5, 0.0]), 2, 1.0)
    budget = choose_horizon(b, b)
    sol = picard_solve(b, b, budget, GridSpec(box=1.0, time_steps=64,
                                              space_steps=64))
    return b, budget, sol


@pytest.fixture(scope="session")
def singular_solution(mollified_drift_grid):
    """Mild solution with f = b for the mollified power-product drift."""
    bg = mollified_drift_grid
    budget = choose_horizon(bg, bg, t_grid=np.geomspace(0.05, 5e-4, 8))
    sol = picard_solve(bg, bg, budget,
                       GridSpec(box=1.0, time_steps=64, space_steps=64))
    return bg, budget, sol
