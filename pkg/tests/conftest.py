import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

_ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion; echoed in the terminal summary."""

    def _report(criterion: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        print(line)
        _ACCEPTANCE.append(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
