import numpy as np
import pytest

from rials.rand_stream import Lane, StreamKey

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda text: int(text.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def key():
    return StreamKey(12345, Lane.MEASUREMENT, 7)


@pytest.fixture
def rng():
    # test-side randomness for probe inputs only; library randomness goes through rand_stream
    return np.random.default_rng(20240611)


ACCEPTANCE_SEED = 2024


@pytest.fixture(scope="session")
def desk_sweep():
    """Desk-scale phase-transition sweep shared by the experiment and acceptance tests."""
    import time

    from rials.experiments import ExperimentConfig, run_sweep

    cfg = ExperimentConfig(trials=50, inits=("random", "spectral"), master_seed=ACCEPTANCE_SEED)
    t0 = time.perf_counter()
    result = run_sweep(cfg, jobs=1)
    result.elapsed = time.perf_counter() - t0
    return result
