import numpy as np
import pytest

from zowcvx.core import RngStream
from zowcvx.problems import generate_blind_deconvolution, generate_phase_retrieval


@pytest.fixture
def rng():
    return RngStream(20240611)


@pytest.fixture(scope="session")
def phase_10_30():
    return generate_phase_retrieval(10, 30, RngStream(7))


@pytest.fixture(scope="session")
def blind_5_15():
    return generate_blind_deconvolution(5, 15, RngStream(8))


def chi2_uniform_pvalue(counts):
    from scipy.stats import chisquare
    return chisquare(np.asarray(counts)).pvalue


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
