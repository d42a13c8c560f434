import sys

import numpy as np
import pytest

from nullwave.geometry import ObstacleShape, build_grid


@pytest.fixture(scope="session")
def disk_grid():
    """Disk of radius 0.3 on a 0.05 grid over [-3, 3]^2."""
    return build_grid(ObstacleShape("disk", 0.3), 0.05, 3.0)


@pytest.fixture(scope="session")
def star_grid():
    shape = ObstacleShape("star", 0.3, ((0.0, 0.0), (0.1, 0.0)))
    return build_grid(shape, 0.05, 3.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)



def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in list(sys.modules.items()) if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
