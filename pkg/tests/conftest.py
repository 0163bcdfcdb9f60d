import os

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record a one-line verdict for the end-of-run acceptance summary."""

    def _record(criterion: int, name: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  [{criterion}] {name}: {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)


def pytest_configure(config):
    # keep BLAS single-threaded so timings match the single-core budget
    os.environ.setdefault("OMP_NUM_THREADS", "1")
