"""Collects one PASS/FAIL line per acceptance criterion and prints them after the run."""
import pytest

_LINES: dict = {}


@pytest.fixture
def criterion():
    """``criterion(n, title, ok, detail)`` records the outcome and fails the test when ``ok`` is false."""

    def record(n: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}" + (f": {detail}" if detail else "")
        _LINES[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_LINES):
            terminalreporter.write_line(_LINES[n])
