import numpy as np
import pytest

from dkrc import SnapshotDataset


def rotation_system(rho=0.995, angle=0.1, b=0.02):
    A = rho * np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    return A, np.array([[0.0], [b]])


def linear_trajectories(A, B, n_traj=20, steps=200, seed=0):
    """Simulated (states, controls) pairs of x' = A x + B u with uniform inputs."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_traj):
        x = rng.uniform(-1, 1, len(A))
        u = rng.uniform(-1, 1, (steps, B.shape[1]))
        xs = [x]
        for k in range(steps):
            xs.append(A @ xs[-1] + B @ u[k])
        out.append((np.array(xs), u))
    return out


def linear_dataset(A, B, **kw):
    trajs = linear_trajectories(A, B, **kw)
    X = np.hstack([s[:-1].T for s, _ in trajs])
    Y = np.hstack([s[1:].T for s, _ in trajs])
    U = np.hstack([u.T for _, u in trajs])
    return SnapshotDataset(X, Y, U)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record(number, title, passed, detail):
    """Log one acceptance verdict; the lines are replayed in the terminal summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] acceptance {number:>2}: {title} -- {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
