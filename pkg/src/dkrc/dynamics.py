"""Forced pendulum simulator and Koopman snapshot assembly.

The pendulum follows the classic gym ``Pendulum`` equations with the angle
measured from the upright position::

    theta_ddot = 3 g / (2 l) * sin(theta) + 3 / (m l^2) * u

integrated with semi-implicit Euler (velocity first, then angle).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import EmptyDatasetError, InvalidInputError, LengthMismatchError


@dataclass(frozen=True)
class PendulumParams:
    gravity: float = 10.0
    mass: float = 1.0
    length: float = 1.0
    dt: float = 0.001
    max_torque: float = 2.0
    max_speed: float = 8.0

    def __post_init__(self):
        for name in ("dt", "mass", "length", "max_torque", "max_speed"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidInputError(f"{name} must be a positive finite number, got {value!r}")
        if not math.isfinite(self.gravity):
            raise InvalidInputError("gravity must be finite")

    def to_dict(self):
        return asdict(self)

    def energy(self, theta, theta_dot):
        """Total mechanical energy; conserved by the unforced continuous dynamics."""
        inertia = self.mass * self.length ** 2 / 3.0
        return 0.5 * inertia * np.square(theta_dot) + 0.5 * self.mass * self.gravity * self.length * np.cos(theta)


class State(NamedTuple):
    theta: float
    theta_dot: float

    @property
    def wrapped_theta(self) -> float:
        return wrap_angle(self.theta)


def wrap_angle(theta):
    """Map angles into (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def _step(theta, theta_dot, u, gravity, mass, length, dt, max_torque, max_speed):
    # shared arithmetic path for step(), simulate() and snapshot replay
    u = min(max(u, -max_torque), max_torque)
    acc = 3.0 * gravity / (2.0 * length) * math.sin(theta) + 3.0 / (mass * length ** 2) * u
    new_dot = theta_dot + acc * dt
    new_dot = min(max(new_dot, -max_speed), max_speed)
    return theta + new_dot * dt, new_dot


def step(params: PendulumParams, x: Sequence[float], u: float) -> State:
    """Advance one time step of length ``params.dt``."""
    theta, theta_dot = float(x[0]), float(x[1])
    u = float(u)
    if not (math.isfinite(theta) and math.isfinite(theta_dot) and math.isfinite(u)):
        raise InvalidInputError(f"non-finite state or control: x={tuple(x)!r}, u={u!r}")
    p = params
    return State(*_step(theta, theta_dot, u, p.gravity, p.mass, p.length, p.dt, p.max_torque, p.max_speed))


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float = 1.0
    frequency: float = 1.0  # Hz
    phase: float = 0.0


Policy = Union[str, Sinusoid, Sequence[float], np.ndarray]


@dataclass
class Trajectory:
    """States has shape (T+1, 2) holding (theta, theta_dot); controls has shape (T,)."""

    states: np.ndarray
    controls: np.ndarray
    t0: float = 0.0
    dt: float = 0.001

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 2)
        self.controls = np.asarray(self.controls, dtype=float).reshape(-1)
        if len(self.controls) != len(self.states) - 1:
            raise LengthMismatchError(
                f"trajectory has {len(self.states)} states but {len(self.controls)} controls")

    def __len__(self):
        return len(self.states)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.states))

    @property
    def theta(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def wrapped_theta(self) -> np.ndarray:
        return wrap_angle(self.states[:, 0])


def _control_sequence(params, policy, n_steps, seed):
    if isinstance(policy, str):
        if policy == "zero":
            return np.zeros(n_steps)
        if policy in ("random", "random-uniform", "random-uniform-torque"):
            rng = np.random.default_rng(seed)
            return rng.uniform(-params.max_torque, params.max_torque, size=n_steps)
        if policy == "sinusoidal":
            rng = np.random.default_rng(seed)
            policy = Sinusoid(params.max_torque, rng.uniform(0.2, 2.0), rng.uniform(0, 2 * np.pi))
        else:
            raise InvalidInputError(f"unknown policy {policy!r}")
    if isinstance(policy, Sinusoid):
        t = params.dt * np.arange(n_steps)
        return policy.amplitude * np.sin(2 * np.pi * policy.frequency * t + policy.phase)
    seq = np.asarray(policy, dtype=float).reshape(-1)
    if len(seq) < n_steps:
        raise LengthMismatchError(f"replay sequence has {len(seq)} controls, need {n_steps}")
    return seq[:n_steps].copy()


def simulate(params: PendulumParams, x0: Sequence[float], policy: Policy = "zero",
             n_steps: int = 1000, seed: int = 0, t0: float = 0.0) -> Trajectory:
    """Roll the pendulum forward ``n_steps`` times under a control policy.

    ``policy`` is ``"zero"``, ``"random"`` (uniform torque resampled each
    step), ``"sinusoidal"``, a :class:`Sinusoid`, or an explicit control
    sequence to replay.  Recorded controls are the clamped torques actually
    applied.
    """
    if n_steps < 1:
        raise InvalidInputError("n_steps must be >= 1")
    theta, theta_dot = float(x0[0]), float(x0[1])
    if not (math.isfinite(theta) and math.isfinite(theta_dot)):
        raise InvalidInputError(f"non-finite initial state {tuple(x0)!r}")
    u_seq = np.clip(_control_sequence(params, policy, n_steps, seed), -params.max_torque, params.max_torque)
    if not np.all(np.isfinite(u_seq)):
        raise InvalidInputError("control sequence contains non-finite values")

    p = params
    states = np.empty((n_steps + 1, 2))
    states[0] = theta, theta_dot
    for k, u in enumerate(u_seq.tolist()):
        theta, theta_dot = _step(theta, theta_dot, u, p.gravity, p.mass, p.length, p.dt,
                                 p.max_torque, p.max_speed)
        states[k + 1] = theta, theta_dot
    return Trajectory(states, u_seq, t0=t0, dt=p.dt)


@dataclass
class SnapshotDataset:
    """Column-aligned snapshot matrices.

    ``X[:, j]`` is advanced to ``Y[:, j]`` by control ``U[:, j]``.  ``traj_id``
    and ``t_index`` record which trajectory and time step each column came
    from so per-step side information (e.g. spectrogram latents) can be aligned.
    """

    X: np.ndarray
    Y: np.ndarray
    U: np.ndarray
    traj_id: np.ndarray = field(default=None)
    t_index: np.ndarray = field(default=None)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        M = self.X.shape[1]
        if self.Y.shape != self.X.shape or self.U.shape[1] != M:
            raise LengthMismatchError(
                f"snapshot matrices disagree: X{self.X.shape}, Y{self.Y.shape}, U{self.U.shape}")
        if self.traj_id is None:
            self.traj_id = np.zeros(M, dtype=int)
        if self.t_index is None:
            self.t_index = np.arange(M)

    @property
    def M(self) -> int:
        return self.X.shape[1]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.U.shape[0]


def build_snapshots(trajectories: Sequence[Trajectory]) -> SnapshotDataset:
    """Stack (x_t, x_{t+1}, u_t) triples without crossing trajectory boundaries."""
    if not trajectories:
        raise EmptyDatasetError("no trajectories given")
    xs, ys, us, ids, ts = [], [], [], [], []
    for i, traj in enumerate(trajectories):
        if len(traj.states) < 2:
            raise EmptyDatasetError(f"trajectory {i} has fewer than 2 states")
        T = len(traj.controls)
        xs.append(traj.states[:-1])
        ys.append(traj.states[1:])
        us.append(traj.controls)
        ids.append(np.full(T, i))
        ts.append(np.arange(T))
    return SnapshotDataset(
        X=np.concatenate(xs).T,
        Y=np.concatenate(ys).T,
        U=np.concatenate(us)[None, :],
        traj_id=np.concatenate(ids),
        t_index=np.concatenate(ts),
    )


def random_initial_states(rng: np.random.Generator, count: int,
                          theta_range=(-np.pi, np.pi), theta_dot_range=(-1.0, 1.0)) -> np.ndarray:
    theta = rng.uniform(*theta_range, size=count)
    theta_dot = rng.uniform(*theta_dot_range, size=count)
    return np.column_stack([theta, theta_dot])


def generate_trajectories(params: PendulumParams, n_trajectories: int, n_steps: int,
                          seed: int, policy: Policy = "random",
                          theta_range=(-np.pi, np.pi), theta_dot_range=(-1.0, 1.0)) -> list:
    """Training data: random initial conditions, one child seed per trajectory."""
    seq = np.random.SeedSequence(seed)
    ic_seed, *traj_seeds = seq.spawn(n_trajectories + 1)
    x0s = random_initial_states(np.random.default_rng(ic_seed), n_trajectories, theta_range, theta_dot_range)
    return [
        simulate(params, x0, policy, n_steps, seed=int(ts.generate_state(1)[0]))
        for x0, ts in zip(x0s, traj_seeds)
    ]
