import numpy as np
import pytest

from entkcone.data import synth_blobs
from entkcone.nn import ArchSpec, init_model

ACCEPTANCE = {}


@pytest.fixture
def tiny_mlp():
    return init_model(ArchSpec("mlp", (8, 3), "tanh", 4, 3), 0)


@pytest.fixture
def blobs():
    return synth_blobs(0, 10, 4, 3, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion(request):
    """Record one acceptance line; printed in the terminal summary."""

    def record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        assert passed, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")
