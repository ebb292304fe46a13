import numpy as np
import pytest

from chaoscast.dynamics import Lorenz96Config, simulate_lorenz96


@pytest.fixture(scope="session")
def l96_small():
    """Normalized Lorenz-96 (J=8) series, 6000 samples, half for training."""
    cfg = Lorenz96Config(J=8, F=8, dt=0.01, t_transient=10, t_total=70, seed=0)
    return simulate_lorenz96(cfg).normalized()


ACCEPTANCE_LINES = []


def record_acceptance(number, passed, detail):
    """Remember one criterion outcome; the lines are printed in the terminal summary."""
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
