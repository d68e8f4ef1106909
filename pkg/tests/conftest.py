"""Collects one pass/fail line per acceptance criterion and prints them at the end of the run."""

import pytest

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(n, title, ok, detail)`` records the verdict, then asserts it."""

    def record(n: int, title: str, ok: bool, detail: str) -> None:
        ACCEPTANCE[n] = (title, bool(ok), detail)
        assert ok, f"criterion {n} ({title}): {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 12):
        if n not in ACCEPTANCE:
            terminalreporter.write_line(f"{n:>2}. NOT RUN (deselected or errored before a verdict)")
            continue
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{n:>2}. {'PASS' if ok else 'FAIL'}  {title}: {detail}")
