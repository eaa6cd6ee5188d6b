import sys

import numpy as np
import pytest

from prnet.model import ModelConfig, build
from prnet.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def t64():
    """Build a float64 tensor from an array-like."""
    return lambda a: Tensor(np.asarray(a, dtype=np.float64))


@pytest.fixture(scope="session")
def prnet4_rot():
    return build(ModelConfig(encoders=4, rotate=True), seed=0)


@pytest.fixture(scope="session")
def prnet1():
    return build(ModelConfig(encoders=1), seed=0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n].line())
