import numpy as np
import pytest

from agekit.core import DEFAULT_VDD, Waveform

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[criterion])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


def digital(bits, tid="t", vdd=DEFAULT_VDD, dt=1e-3) -> Waveform:
    return Waveform(tid, dt, [vdd if b else 0.0 for b in bits])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
