from __future__ import annotations

import pytest

from setrend.sim import Trajectory, load_scenario, run

_CACHE: dict[str, Trajectory] = {}


@pytest.fixture(scope="session")
def bundled_run():
    """Run a bundled scenario once per session and share the trajectory."""

    def get(name: str) -> Trajectory:
        if name not in _CACHE:
            _CACHE[name] = run(load_scenario(name))
        return _CACHE[name]

    return get


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(criterion: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}" + (f": {detail}" if detail else "")
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
