import numpy as np
import pytest

from gazeload.core import GazeSession, SessionMeta


def make_session(n=10, hz=200.0, pid="P01", tlx=3, start_us=0, dirs=None, pupil=3.0,
                 valid=True, t_us=None):
    t = np.round(np.arange(n) * 1e6 / hz).astype(np.int64) if t_us is None else np.asarray(t_us)
    if dirs is None:
        dirs = np.tile([0.0, 0.0, 1.0], (n, 1))
    p = np.full(n, pupil, dtype=float) if np.isscalar(pupil) else np.asarray(pupil, float)
    v = np.full(n, valid, dtype=bool) if np.isscalar(valid) else np.asarray(valid, bool)
    return GazeSession(SessionMeta(pid, tlx, start_us, hz), t, dirs, dirs, p, p.copy(), v, v.copy())


def rotating_dirs(n, deg_per_sample, start_deg=0.0):
    ang = np.radians(start_deg + deg_per_sample * np.arange(n))
    return np.column_stack([np.sin(ang), np.zeros(n), np.cos(ang)])


@pytest.fixture
def session_factory():
    return make_session


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
