import numpy as np
import pytest

from gfscma.codebook import build_constellation
from gfscma.model import SystemConfig, from_sparsity, validate_config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cfg_small():
    return from_sparsity(2, 3, 0.25, 10)


@pytest.fixture
def cfg_tiny():
    return validate_config(SystemConfig(K=4, N=3, J=3, I=2, d_f=2))


@pytest.fixture
def qpsk():
    return build_constellation(4, 1.0, 0.25)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
