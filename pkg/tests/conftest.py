import warnings

import numpy as np
import pytest

from nlfrac.errors import ContractionRegimeWarning
from nlfrac.grid import build_grid

TWO_PI = 2 * np.pi


def grid_1d(N=64, omega=(2.0, 4.0), w1=(4.4, 6.0), w2=(0.3, 1.6)):
    spec = {"omega": {"type": "box", "lo": [omega[0]], "hi": [omega[1]]}}
    if w1:
        spec["w1"] = {"type": "box", "lo": [w1[0]], "hi": [w1[1]]}
    if w2:
        spec["w2"] = {"type": "box", "lo": [w2[0]], "hi": [w2[1]]}
    return build_grid(1, N, TWO_PI, spec)


def grid_2d(N=32):
    return build_grid(2, N, TWO_PI, {
        "omega": {"type": "ball", "center": [3.1, 3.1], "radius": 1.2},
        "w1": {"type": "box", "lo": [4.8, 2.5], "hi": [5.8, 3.7]},
        "w2": {"type": "box", "lo": [0.5, 2.5], "hi": [1.4, 3.7]},
    })


@pytest.fixture
def g1():
    return grid_1d()


@pytest.fixture
def g2():
    return grid_2d()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def quiet_regime():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ContractionRegimeWarning)
        yield


# one summary line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
