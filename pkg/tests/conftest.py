import numpy as np
import pytest

from tinyasc.frontend import AudioClip

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def accept():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def one_second_noise():
    rng = np.random.default_rng(1234)
    return AudioClip(rng.uniform(-0.5, 0.5, 44100), 44100)
