import numpy as np
import pytest
from hypothesis import settings

# numba compiles on first use, so the first example of some properties is slow
settings.register_profile("qsim", deadline=None, max_examples=60)
settings.load_profile("qsim")

_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one criterion outcome; the lines are printed in the terminal summary."""

    def record(label: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE.append((label, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
        return bool(ok)

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
