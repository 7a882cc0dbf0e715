import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; all lines are repeated in the terminal summary."""
    def _emit(criterion: int, ok: bool, detail: str):
        line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return ok
    return _emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
