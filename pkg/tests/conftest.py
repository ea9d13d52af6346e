import numpy as np
import pytest
from hypothesis import settings

from thetaflow.littlewood_paley import build_filter_bank
from thetaflow.model import FluidParams
from thetaflow.spectral import Grid

settings.register_profile("thetaflow", max_examples=25, deadline=None)
settings.load_profile("thetaflow")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid32():
    return Grid(2, 32, 1.0)


@pytest.fixture(scope="session")
def grid64():
    return Grid(2, 64, 4.0)


@pytest.fixture(scope="session")
def bank64(grid64):
    return build_filter_bank(grid64, 1)


@pytest.fixture(scope="session")
def params():
    return FluidParams()


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {name}: {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
