import pytest

_REPORT: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; all lines are echoed in the terminal summary."""

    def add(name: str, passed: bool, detail: str) -> None:
        _REPORT.append(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")

    return add


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
