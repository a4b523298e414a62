from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent / "fixtures"

#: A minimal valid two-dimensional snapshot (x-major, y cycling fastest).
#: The committed fixtures are one-dimensional runs; this covers the 2D
#: layout without dragging a whole 2D run into the repository.
SNAPSHOT_2D_TEXT = "\n".join(
    ["x,y,rho,Z,rhostar,u,v,pi"]
    + [
        f"{x},{y},0.4,0.5,0.8,0.1,0.0,0.2"
        for x in (0.25, 0.75)
        for y in (0.25, 0.5, 0.75)
    ]
) + "\n"


@pytest.fixture
def snapshot_2d_text():
    return SNAPSHOT_2D_TEXT


@pytest.fixture
def run_congested():
    return FIXTURES / "run_congested"


@pytest.fixture
def run_flat():
    return FIXTURES / "run_flat"


@pytest.fixture
def report_dir():
    return FIXTURES / "report"
