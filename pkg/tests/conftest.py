import numpy as np
import pytest

from icmlp import _kernels
from icmlp.numerics import Rng


@pytest.fixture(scope="session", autouse=True)
def _jit_warmup():
    _kernels.warmup()


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def np_rng():
    return np.random.default_rng(99)


# Acceptance criteria record (number, title, passed, seconds, detail) here and
# get one summary line each at the end of the run.
CRITERIA = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, secs, detail in sorted(CRITERIA):
        terminalreporter.write_line(
            f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {title}  ({secs:.2f} s)  {detail}")
