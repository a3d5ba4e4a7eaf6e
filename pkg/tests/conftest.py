import numpy as np
import pytest

from irwri_kit.acquisition import line_geometry, random_signatures
from irwri_kit.grid_model import Grid2D, velocity_to_squared_slowness


def random_velocity(nz, nx, seed=0, lo=1500.0, hi=3000.0):
    """Smooth-ish random velocity: random field plus a depth gradient."""
    rng = np.random.default_rng(seed)
    base = np.linspace(lo, hi, nz)[:, None] * np.ones((1, nx))
    return base * (1 + 0.1 * rng.uniform(-1, 1, (nz, nx)))


@pytest.fixture
def small_grid():
    return Grid2D(12, 10, 20.0, 20.0, npml=4, free_surface_top=True)


@pytest.fixture
def tiny_grid():
    """Grid with N <= 200 unknowns for dense oracles."""
    return Grid2D(8, 6, 25.0, 25.0, npml=2, free_surface_top=True)


@pytest.fixture
def small_setup(small_grid):
    v = random_velocity(small_grid.nz, small_grid.nx, seed=3)
    m = velocity_to_squared_slowness(v, small_grid)
    geom = line_geometry(small_grid, 3, 6, source_depth=1, receiver_depth=0)
    sig = random_signatures(3, seed=5)
    return m, geom, sig


@pytest.fixture
def tiny_setup(tiny_grid):
    v = random_velocity(tiny_grid.nz, tiny_grid.nx, seed=7)
    m = velocity_to_squared_slowness(v, tiny_grid)
    geom = line_geometry(tiny_grid, 2, 5, source_depth=1, receiver_depth=0, margin=1)
    sig = random_signatures(2, seed=11)
    return m, geom, sig


# Acceptance verdicts, filled by test_acceptance.py and echoed in the terminal summary.
ACCEPTANCE = {}


def record_acceptance(number, title, passed, detail):
    ACCEPTANCE[number] = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    print(ACCEPTANCE[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
