import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nearfield import ArrayGeometry, GridSpec, LocalizerConfig, SourceTruth

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

LAMBDA = 0.01


@pytest.fixture
def geom9():
    return ArrayGeometry(9, LAMBDA / 2, LAMBDA)


@pytest.fixture
def small_grid():
    return GridSpec.from_degrees(-40, 40, 0.5, 0, 12, 0.2)


@pytest.fixture(autouse=True)
def _quiet_degenerate():
    from nearfield import DegenerateSubspaceWarning
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSubspaceWarning)
        yield


def random_psd(rng, m, rank=None):
    rank = m if rank is None else rank
    b = rng.standard_normal((m, rank)) + 1j * rng.standard_normal((m, rank))
    return b @ b.conj().T


def random_hermitian(rng, m):
    a = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    return a + a.conj().T


def oracle_cfg(m):
    return LocalizerConfig(grid=GridSpec.from_degrees(-40, 40, 0.5, 0, 12, 0.2), fft_size=max(64, 2 * m))


def random_oracle_scene(seed):
    """On-grid sources at least three beamwidths apart in sin(theta)."""
    rng = np.random.default_rng(seed)
    m = int(rng.choice([17, 33, 65]))
    cfg = oracle_cfg(m)
    a_nodes, r_nodes = cfg.grid.angles(), cfg.grid.ranges()
    k = int(rng.integers(1, 4))
    for _ in range(1000):
        ia = np.sort(rng.choice(a_nodes.size, k, replace=False))
        if k == 1 or np.min(np.diff(np.sin(a_nodes[ia]))) >= 6 / m:
            break
    else:
        ia, k = ia[:1], 1
    ir = rng.choice(np.flatnonzero((r_nodes >= 1) & (r_nodes <= 10)), k)
    truth = SourceTruth(tuple(zip(r_nodes[ir], a_nodes[ia])))
    return ArrayGeometry.from_carrier(m, 30e9), cfg, truth


# acceptance lines collected by tests/test_acceptance.py, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
