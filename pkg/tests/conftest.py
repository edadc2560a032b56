import functools

import numpy as np
import pytest

from cgmres.continuation import ContinuationConfig, initialize_U0
from cgmres.model import MinTimeModel

X0 = np.zeros(2)


@functools.lru_cache(maxsize=None)
def _operating_point(N):
    model = MinTimeModel()
    U = initialize_U0(model, X0, 0.0, ContinuationConfig(N=N))
    U.data.flags.writeable = False
    return model, U


@pytest.fixture(scope="session")
def operating_point():
    """Post-initialization benchmark unknowns at ``t = 0``, cached per N."""
    return _operating_point


@pytest.fixture
def mintime():
    return MinTimeModel()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
