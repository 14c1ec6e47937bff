import time

import pytest

from safexplore.config import ScenarioConfig

ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def default_nn():
    """Network trained once per session on the default dataset; returns (model, data, seconds)."""
    from safexplore.neural import train_from_config

    t0 = time.perf_counter()
    model, data = train_from_config(ScenarioConfig())
    return model, data, time.perf_counter() - t0


@pytest.fixture
def report():
    """Record an acceptance outcome: ``report(number, passed, detail)``."""

    def record(number: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE[number] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
