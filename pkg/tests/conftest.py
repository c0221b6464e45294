import numpy as np
import pytest

from dsspread.campaign import get_setup
from dsspread.config import ExperimentConfig


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_setup():
    """ODSS data block with the 32-symbol ODSS preamble and the 32 x 250 dictionary."""
    return get_setup(ExperimentConfig(), "ODSS")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


_REPORT: dict[int, str] = {}


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(n: int, ok: bool, detail: str) -> bool:
        _REPORT[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_REPORT[n])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_REPORT):
        terminalreporter.write_line(_REPORT[n])
