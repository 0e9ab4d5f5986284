import numpy as np
import pytest

from simalign.simsurface import StackConfig

# filled by test_acceptance.py, printed once at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


def crandn(gen, *shape):
    return gen.standard_normal(shape) + 1j * gen.standard_normal(shape)


@pytest.fixture
def small_stack(gen):
    """L = 3 stack with at most 9 elements per layer and random phases."""
    stack = StackConfig([4, 9, 6, 5]).build()
    return stack.randomize(gen)


@pytest.fixture(scope="session")
def default_rows():
    """All six methods on the default synthetic setup at infinite SNR, six seeds."""
    from simalign.bench import ExperimentConfig, evaluate

    failures = []
    rows = evaluate(ExperimentConfig(), failures)
    assert not failures
    return rows
