import numpy as np
import pytest
import torch

from crossfusor.platoon import window_platoons
from crossfusor.synthetic import generate_mixed


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def synth_windows():
    """Small mixed-scenario window set shared by read-only tests."""
    return window_platoons(generate_mixed(9, seed=3), stride_frames=10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gen(seed=0):
    return torch.Generator().manual_seed(seed)


# one line per acceptance criterion, repeated in the terminal summary
CRITERIA_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
