import numpy as np
import pytest

from securemimo.channel import ErrorModel, SystemDims, draw_channel_set
from securemimo.numerics import make_rng

ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def small_dims():
    return SystemDims(K_T=2, K_R=2, K_E=1, N_T=4, N_R=2, N_E=2, N_s=2, sigma_nl=0.5, sigma_ne=0.5, sigma_zt=0.3)


@pytest.fixture
def small_channels(small_dims):
    return draw_channel_set(small_dims, make_rng(7), ErrorModel.stochastic(0.04), ErrorModel.stochastic(0.09))
