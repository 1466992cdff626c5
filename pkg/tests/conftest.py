import numpy as np
import pytest

from drivewm.trajectory import PoseSequence, yaw_matrix


def make_sequence(xy, yaws=None, rate=10.0, z=None):
    """Pose sequence from planar points and headings (z=0 unless given)."""
    xy = np.asarray(xy, dtype=float)
    n = len(xy)
    yaws = np.zeros(n) if yaws is None else np.asarray(yaws, dtype=float)
    z = np.zeros(n) if z is None else np.asarray(z, dtype=float)
    rot = np.stack([yaw_matrix(a) for a in yaws])
    pos = np.column_stack([xy, z])
    return PoseSequence(rot, pos, np.arange(n) / rate, rate)


def arc_sequence(speed, omega, n, rate):
    """Exact samples of uniform circular motion starting at the origin heading +x."""
    t = np.arange(n) / rate
    h = omega * t
    if omega == 0:
        xy = np.column_stack([speed * t, np.zeros(n)])
    else:
        r = speed / omega
        xy = np.column_stack([r * np.sin(h), r * (1 - np.cos(h))])
    return make_sequence(xy, h, rate)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_RESULTS = {}


def record_acceptance(number, title, ok, detail=""):
    """Print and remember one criterion's outcome for the end-of-run summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
