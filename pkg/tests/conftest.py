import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rmfnl.sparse_core import ObservedMatrix
from rmfnl.surrogate import FactorPair

settings.register_profile(
    "rmfnl", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("rmfnl")

_ACCEPTANCE = pytest.StashKey[list]()


def random_problem(m, n, r=2, density=0.6, seed=0, lam=0.3, outliers=0.0):
    """Small observed matrix with full row/column coverage plus factors."""
    rng = np.random.default_rng(seed)
    mask = rng.random((m, n)) < density
    mask[np.arange(m), rng.integers(0, n, m)] = True
    mask[rng.integers(0, m, n), np.arange(n)] = True
    M = rng.standard_normal((m, r)) @ rng.standard_normal((n, r)).T
    M += 0.1 * rng.standard_normal((m, n))
    if outliers:
        hit = rng.random((m, n)) < outliers
        M[hit] += rng.choice([-5.0, 5.0], size=hit.sum())
    data = ObservedMatrix.from_dense(M, mask)
    factors = FactorPair(rng.standard_normal((m, r)), rng.standard_normal((n, r)), lam)
    return data, factors


@pytest.fixture
def problem():
    return random_problem


@pytest.fixture(scope="session")
def acceptance_log(pytestconfig):
    return pytestconfig.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
