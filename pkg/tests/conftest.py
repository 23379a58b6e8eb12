import numpy as np
import pytest

from asymagg.harness import cached_setup
from asymagg.params import default_params, toy_params

_ACCEPTANCE: list[tuple[int, bool, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def toy():
    return toy_params(L=64, n=8)


@pytest.fixture(scope="session")
def toy_setup(toy):
    return cached_setup(toy, True)


@pytest.fixture(scope="session")
def small():
    """Default widths with a single block of 256 coordinates."""
    return default_params(L=256, n=4)


@pytest.fixture(scope="session")
def small_setup(small):
    return cached_setup(small, True)


@pytest.fixture
def criterion():
    """Record one acceptance line; the terminal summary prints all of them."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.append((number, bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
