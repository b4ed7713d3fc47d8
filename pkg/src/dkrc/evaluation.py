"""Open-loop prediction of identified systems against the true simulator."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dkrc import SupervisedConfig, fit_latent_encoder, supervised_dkrc
from .dynamics import (PendulumParams, Trajectory, build_snapshots, generate_trajectories,
                       random_initial_states, simulate, wrap_angle)
from .errors import DimensionError, DKRCError, InvalidInputError
from .koopman import Dictionary, LinearLiftedSystem

log = logging.getLogger(__name__)


@dataclass
class RolloutResult:
    predicted: np.ndarray  # (n, H+1)
    truth: np.ndarray  # (n, H+1)
    controls: np.ndarray  # (m, H)
    dt: float = 0.001

    @property
    def horizon(self) -> int:
        return self.predicted.shape[1] - 1

    @property
    def abs_error(self) -> np.ndarray:
        return np.abs(self.predicted - self.truth)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.predicted.shape[1])


def rollout(system: LinearLiftedSystem, dictionary: Dictionary, x0, controls, truth) -> RolloutResult:
    """Pure open-loop prediction: lift ``x0`` once, then iterate ``z <- A z + B u``, read out ``C z``.

    ``truth`` (a :class:`Trajectory` or an (H+1, n) state array) is only used
    for comparison after the prediction has been formed.
    """
    controls = np.asarray(controls, dtype=float)
    controls = controls.reshape(system.input_dim, -1) if controls.size else np.zeros((system.input_dim, 0))
    H = controls.shape[1]
    z = dictionary.lift(np.asarray(x0, dtype=float).reshape(-1, 1))[:, 0]
    if len(z) != system.lift_dim:
        raise DimensionError(f"dictionary lifts to {len(z)} but the system has N={system.lift_dim}")
    A, B, C = system.A, system.B, system.C
    lifted = np.empty((system.lift_dim, H + 1))
    lifted[:, 0] = z
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(H):
            z = A @ z + B @ controls[:, t]
            lifted[:, t + 1] = z
        predicted = C @ lifted
    states = truth.states if isinstance(truth, Trajectory) else np.asarray(truth, dtype=float)
    if len(states) != H + 1:
        raise DimensionError(f"truth has {len(states)} states but {H} controls were given")
    dt = truth.dt if isinstance(truth, Trajectory) else 0.001
    return RolloutResult(predicted, states.T.copy(), controls, dt)


def mae(result: RolloutResult, wrap_theta: bool = True) -> np.ndarray:
    """Time-averaged absolute error per state; row 0 (theta) uses wrapped differences when asked."""
    diff = result.predicted - result.truth
    if wrap_theta:
        diff = diff.copy()
        with np.errstate(invalid="ignore"):
            diff[0] = wrap_angle(diff[0])
    return np.mean(np.abs(diff), axis=1)


# ----------------------------------------------------------------------------
# Table-1 style comparison

@dataclass
class CompareConfig:
    dims: tuple = (3, 5, 12)
    modes: tuple = ("raw-only", "raw+latent")
    seeds: tuple = (0,)
    n_trials: int = 10
    horizon: int = 5000
    n_trajectories: int = 20
    traj_steps: int = 2000
    params: PendulumParams = field(default_factory=PendulumParams)
    supervised: SupervisedConfig = field(default_factory=SupervisedConfig)
    latent_options: dict = field(default_factory=dict)
    wrap_theta: bool = True
    eval_theta_range: tuple = (-np.pi, np.pi)
    eval_theta_dot_range: tuple = (-1.0, 1.0)


@dataclass
class ErrorTable:
    rows: list  # dicts, one per (dim, mode)
    metadata: dict = field(default_factory=dict)

    COLUMNS = ("lift_dim", "mode", "mae_theta", "mae_theta_dot", "h1_max_abs", "h1_frobenius",
               "admissible", "n_failed", "seeds")

    def row(self, dim, mode):
        for r in self.rows:
            if r["lift_dim"] == dim and r["mode"] == mode:
                return r
        raise KeyError((dim, mode))


def evaluate_identification(ident, params, x0s, horizon, wrap_theta=True):
    """Mean MAE over zero-torque rollouts from the given initial states."""
    maes = []
    for x0 in x0s:
        truth = simulate(params, x0, "zero", horizon) if horizon > 0 else Trajectory(np.atleast_2d(x0), [])
        res = rollout(ident.system, ident.dictionary, x0, np.zeros((1, horizon)), truth)
        maes.append(mae(res, wrap_theta))
    return np.mean(maes, axis=0)


def compare(cfg: CompareConfig = None, progress=None) -> ErrorTable:
    """Identify one model per (lift dimension, mode, seed) and average rollout MAEs over seeds.

    Each identification is pinned at its lift dimension (``n_start == n_max``)
    and kept even when inadmissible; the cell records how many seeds were
    admissible.  A failed run is recorded in the cell instead of aborting.
    """
    cfg = cfg or CompareConfig()
    if not cfg.dims:
        raise InvalidInputError("dims must be nonempty")
    for mode in cfg.modes:
        if mode not in ("raw-only", "raw+latent"):
            raise InvalidInputError(f"unknown mode {mode!r}")
    cells = {(d, m): [] for d in cfg.dims for m in cfg.modes}
    for seed in cfg.seeds:
        trajs = generate_trajectories(cfg.params, cfg.n_trajectories, cfg.traj_steps, seed)
        data = build_snapshots(trajs)
        x0s = random_initial_states(np.random.default_rng([seed, 1]), cfg.n_trials,
                                    cfg.eval_theta_range, cfg.eval_theta_dot_range)
        encoder = None
        for mode in cfg.modes:
            if mode == "raw+latent" and encoder is None:
                opts = {"params": cfg.params, **cfg.latent_options}
                encoder, _ = fit_latent_encoder(trajs, **opts)
            for dim in cfg.dims:
                scfg = replace(cfg.supervised, mode=mode, n_start=dim, n_max=dim, seed=seed)
                try:
                    ident = supervised_dkrc(data, scfg, trajs, encoder if mode == "raw+latent" else None)
                    err = evaluate_identification(ident, cfg.params, x0s, cfg.horizon, cfg.wrap_theta)
                    cells[(dim, mode)].append({"seed": seed, "mae": err.tolist(),
                                               "h1_max_abs": ident.report.h1_max_abs,
                                               "h1_frobenius": ident.report.h1_frobenius,
                                               "admissible": ident.report.admissible})
                except (DKRCError, np.linalg.LinAlgError) as exc:
                    log.warning("cell N=%d mode=%s seed=%d failed: %s", dim, mode, seed, exc)
                    cells[(dim, mode)].append({"seed": seed, "error": str(exc)})
                if progress:
                    progress(dim, mode, seed, cells[(dim, mode)][-1])
    rows = []
    for (dim, mode), runs in cells.items():
        ok = [r for r in runs if "error" not in r]
        mean_of = (lambda key: float(np.mean([r[key] for r in ok])) if ok else float("nan"))
        mae_mean = np.mean([r["mae"] for r in ok], axis=0) if ok else np.full(2, np.nan)
        rows.append({"lift_dim": dim, "mode": mode, "mae_theta": float(mae_mean[0]),
                     "mae_theta_dot": float(mae_mean[1]), "h1_max_abs": mean_of("h1_max_abs"),
                     "h1_frobenius": mean_of("h1_frobenius"),
                     "admissible": [r.get("admissible", False) for r in runs],
                     "n_failed": len(runs) - len(ok), "seeds": [r["seed"] for r in runs],
                     "errors": [r["error"] for r in runs if "error" in r]})
    meta = {"n_trials": cfg.n_trials, "horizon": cfg.horizon, "n_trajectories": cfg.n_trajectories,
            "traj_steps": cfg.traj_steps, "seeds": list(cfg.seeds), "wrap_theta": cfg.wrap_theta,
            "params": cfg.params.to_dict()}
    return ErrorTable(rows, meta)
