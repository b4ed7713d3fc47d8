"""Deep Koopman identification drivers.

``supervised_dkrc`` grows the lifting dimension until an autoencoder-learned
lift yields an admissible (accurate and controllable) linear model.
``unsupervised_dkrc`` instead trains the lift end-to-end against the
linearization and reconstruction losses at a fixed dimension.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import neuralnet
from .dynamics import PendulumParams, SnapshotDataset, Trajectory, simulate
from .errors import DimensionError, DivergenceError, EmptyDatasetError, InvalidInputError
from .koopman import (EncoderDictionary, IdentificationReport, LinearLiftedSystem, controllability,
                      fit_lifted_lti, heuristics, matrix_rank)
from .neuralnet import Activation, CAEConfig, Dense, Network, TrainConfig
from .spectrogram import SpectrogramConfig, align_latents, frame_images, mel_spectrogram, to_image

log = logging.getLogger(__name__)

MODES = ("raw-only", "raw+latent")
CHANNELS = {"theta": [0], "theta_dot": [1], "both": [0, 1]}


# ----------------------------------------------------------------------------
# spectrogram latents

class LatentImageEncoder:
    """Turns state time series into CAE latent codes, one per time step.

    Each spectrogram frame gets an image made of the ``image_frames`` most
    recent frames; every time step takes the latent of its aligned frame.
    """

    def __init__(self, cae: Network, spec_cfg: SpectrogramConfig, image_frames: int, value_range,
                 channel: str = "theta", params: PendulumParams = PendulumParams()):
        if channel not in CHANNELS:
            raise InvalidInputError(f"unknown spectrogram channel {channel!r}")
        self.cae = cae
        self.spec_cfg = spec_cfg
        self.image_frames = int(image_frames)
        self.value_range = (float(value_range[0]), float(value_range[1]))
        self.channel = channel
        self.params = params

    @property
    def latent_dim(self) -> int:
        return int(self.cae.latent_shape[0])

    @property
    def history_len(self) -> int:
        """Samples needed to form one full image ending at the current sample."""
        return self.spec_cfg.window_len + (self.image_frames - 1) * self.spec_cfg.hop

    def images(self, states):
        """(n_frames, channels, n_mels, image_frames) pixel images and the frame centers."""
        per_channel, centers = [], None
        for col in CHANNELS[self.channel]:
            spec = mel_spectrogram(states[:, col], self.spec_cfg)
            pix = to_image(spec, "fixed-range", self.value_range)
            per_channel.append(frame_images(pix, self.image_frames))
            centers = spec.frame_centers
        return np.stack(per_channel, axis=1), centers

    def per_step(self, traj: Trajectory) -> np.ndarray:
        """Latents for every state of the trajectory, shape (latent_dim, len(traj))."""
        imgs, centers = self.images(traj.states)
        codes = self.cae.encode(imgs)
        return codes[align_latents(centers, len(traj.states))].T

    def context(self, x) -> np.ndarray:
        """Latent for an isolated state, from its reconstructed unforced past.

        The unforced pendulum is time reversible, so the history leading into
        ``(theta, theta_dot)`` is the forward run from ``(theta, -theta_dot)``
        read backwards with velocities negated.
        """
        back = simulate(self.params, (float(x[0]), -float(x[1])), "zero", self.history_len - 1).states
        history = back[::-1] * np.array([1.0, -1.0])
        imgs, _ = self.images(history)
        return self.cae.encode(imgs[-1:])[0]

    def describe(self) -> dict:
        return {"spectrogram": self.spec_cfg.to_dict(), "image_frames": self.image_frames,
                "value_range": list(self.value_range), "channel": self.channel,
                "dynamics": self.params.to_dict()}


def fit_latent_encoder(trajectories, spec_cfg: SpectrogramConfig = SpectrogramConfig(),
                       cae_cfg: CAEConfig = CAEConfig(), train_cfg: TrainConfig = None,
                       image_frames: int = 16, channel: str = "theta",
                       params: PendulumParams = PendulumParams()):
    """Train the convolutional autoencoder on spectrogram images of the trajectories.

    Returns ``(LatentImageEncoder, loss_history)``.
    """
    if not trajectories:
        raise EmptyDatasetError("no trajectories to build spectrograms from")
    train_cfg = train_cfg or TrainConfig(epochs=30, seed=cae_cfg.seed)
    cols = CHANNELS[channel]
    specs = [mel_spectrogram(t.states[:, c], spec_cfg).values for t in trajectories for c in cols]
    lo = min(float(s.min()) for s in specs)
    hi = max(float(s.max()) for s in specs)
    if hi <= lo:
        hi = lo + 1.0
    encoder = LatentImageEncoder(None, spec_cfg, image_frames, (lo, hi), channel, params)
    images = np.concatenate([encoder.images(t.states)[0] for t in trajectories])
    cae = neuralnet.build_cae(spec_cfg.n_mels, image_frames, cae_cfg.latent_dim, cae_cfg, channels=len(cols))
    cae, history = neuralnet.train(cae, images, images, train_cfg)
    encoder.cae = cae
    return encoder, history


# ----------------------------------------------------------------------------
# supervised (dimension search)

@dataclass
class SupervisedConfig:
    epsilon: float = 1e-2
    n_start: int = None  # defaults to state dimension + 1
    n_max: int = 32
    ridge: float = 1e-8
    mode: str = "raw-only"
    ae_train: TrainConfig = field(default_factory=lambda: TrainConfig(loss="mae", epochs=30))
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epsilon < 0 or self.ridge < 0:
            raise InvalidInputError("epsilon and ridge must be non-negative")


@dataclass
class Identification:
    system: LinearLiftedSystem
    dictionary: EncoderDictionary
    report: IdentificationReport
    latent_encoder: LatentImageEncoder = None

    def __iter__(self):
        return iter((self.system, self.dictionary, self.report))


def _standardization(F):
    mean = F.mean(axis=1)
    std = F.std(axis=1)
    std[std < 1e-12] = 1.0
    return mean, std


def dataset_latents(data: SnapshotDataset, trajectories, encoder: LatentImageEncoder):
    """Latent rows aligned with the X and Y columns of ``data``."""
    per_traj = [encoder.per_step(t) for t in trajectories]
    Lx = np.empty((encoder.latent_dim, data.M))
    Ly = np.empty_like(Lx)
    for k, lat in enumerate(per_traj):
        cols = np.flatnonzero(data.traj_id == k)
        Lx[:, cols] = lat[:, data.t_index[cols]]
        Ly[:, cols] = lat[:, data.t_index[cols] + 1]
    return Lx, Ly


def identify_at(N, data: SnapshotDataset, Fx, Fy, mean, std, cfg: SupervisedConfig, context_fn=None):
    """Train the lifting autoencoder at dimension N and fit the lifted system."""
    net = neuralnet.build_ae(Fx.shape[0], N, seed=cfg.seed + N, state_dim=data.n)
    Z = ((Fx - mean[:, None]) / std[:, None]).T
    net, history = neuralnet.train(net, Z, Z, replace(cfg.ae_train, seed=cfg.ae_train.seed + cfg.seed + N))
    dictionary = EncoderDictionary(net, mean, std, state_dim=data.n, context_fn=context_fn)
    XL, YL = dictionary.lift(Fx), dictionary.lift(Fy)
    system = fit_lifted_lti(XL, YL, data.U, data.X, cfg.ridge)
    report = heuristics(system, XL, YL, data.U, cfg.epsilon)
    report.metadata["ae_loss"] = history[-1]
    return system, dictionary, report


def supervised_dkrc(data: SnapshotDataset, cfg: SupervisedConfig = None, trajectories=None,
                    latent_encoder: LatentImageEncoder = None, latent_options: dict = None) -> Identification:
    """Search lifting dimensions ``n_start..n_max`` for the first admissible model.

    In ``raw+latent`` mode a CAE latent encoder is trained on spectrograms of
    ``trajectories`` (unless one is supplied) and its per-step codes are
    appended to the standardized raw state before lifting.  If no dimension
    is admissible the candidate with the smallest h1 (max-abs) is returned
    with ``report.admissible = False``.
    """
    cfg = cfg or SupervisedConfig()
    if data.M == 0:
        raise EmptyDatasetError("snapshot dataset is empty")
    n_start = data.n + 1 if cfg.n_start is None else cfg.n_start
    if n_start < data.n + 1 or cfg.n_max < n_start:
        raise DimensionError(f"need {data.n + 1} <= n_start <= n_max, got {n_start}..{cfg.n_max}")

    Fx, Fy, context_fn = data.X, data.Y, None
    if cfg.mode == "raw+latent":
        if latent_encoder is None:
            if trajectories is None:
                raise InvalidInputError("raw+latent mode needs trajectories or a latent encoder")
            latent_encoder, _ = fit_latent_encoder(trajectories, **(latent_options or {}))
        Lx, Ly = dataset_latents(data, trajectories, latent_encoder)
        Fx, Fy = np.vstack([data.X, Lx]), np.vstack([data.Y, Ly])
        context_fn = latent_encoder.context
    mean, std = _standardization(Fx)

    search, best = [], None
    for N in range(n_start, cfg.n_max + 1):
        system, dictionary, report = identify_at(N, data, Fx, Fy, mean, std, cfg, context_fn)
        search.append({"N": N, "h1_max_abs": report.h1_max_abs, "h1_frobenius": report.h1_frobenius,
                       "ctrb_rank": report.ctrb_rank, "h2": report.h2, "admissible": report.admissible,
                       "ae_loss": report.metadata["ae_loss"]})
        log.info("N=%d h1=%.3g h2=%d admissible=%s", N, report.h1_max_abs, report.h2, report.admissible)
        if best is None or report.h1_max_abs < best[2].h1_max_abs:
            best = (system, dictionary, report)
        if report.admissible:
            best = (system, dictionary, report)
            break
    system, dictionary, report = best
    report.metadata.update({"mode": cfg.mode, "search": search, "exhausted": not report.admissible,
                            "n_start": n_start, "n_max": cfg.n_max, "snapshots": data.M})
    return Identification(system, dictionary, report, latent_encoder)


# ----------------------------------------------------------------------------
# unsupervised (loss-driven)

@dataclass
class UnsupervisedConfig:
    lift_dim: int = 3
    epochs: int = 1000
    learning_rate: float = 1e-3
    ridge: float = 1e-8
    seed: int = 0
    network: Network = None  # optional pre-initialized autoencoder


def _autoencoder(n, N, seed):
    rng = np.random.default_rng(seed)
    return Network([Dense(n, N, Activation("tanh"), rng), Dense(N, n, Activation("linear"), rng)],
                   (n,), latent_boundary=1)


def unsupervised_dkrc(data: SnapshotDataset, cfg: UnsupervisedConfig = None):
    """Full-batch training of the lift on linearization (L1) plus reconstruction (L3) losses.

    Each epoch refits ``[A, B]`` by least squares on the current lift.  The
    rank deficiency L2 of the controllability matrix is not differentiable;
    it only gates which epochs may be checkpointed.  The checkpoint with the
    smallest ``L1 + L2 + L3`` among epochs with ``L2 == 0`` is returned.

    Returns ``(system, dictionary, history)`` where history holds one dict of
    losses per epoch.
    """
    cfg = cfg or UnsupervisedConfig()
    if data.M == 0:
        raise EmptyDatasetError("snapshot dataset is empty")
    net = cfg.network.copy() if cfg.network is not None else _autoencoder(data.n, cfg.lift_dim, cfg.seed)
    N = int(net.latent_shape[0])
    mean, std = _standardization(data.X)
    Sx = ((data.X - mean[:, None]) / std[:, None]).T
    Sy = ((data.Y - mean[:, None]) / std[:, None]).T
    U, M = data.U, data.M
    b = net.latent_boundary
    opt = neuralnet.Adam(net.parameters(), cfg.learning_rate)
    history, best = [], None
    for epoch in range(1, cfg.epochs + 1):
        PX, cx = net.run(Sx, 0, b)
        PY, cy = net.run(Sy, 0, b)
        system = fit_lifted_lti(PX.T, PY.T, U, data.X, cfg.ridge)
        A, B = system.A, system.B
        R = PY.T - A @ PX.T - B @ U
        recon, cd = net.run(PY, b)
        E = recon - Sy
        L1 = float(np.sum(R * R) / M)
        L3 = float(np.sum(E * E) / M)
        L2 = N - matrix_rank(controllability(A, B)[0])
        total = L1 + L2 + L3
        if not np.isfinite(total):
            raise DivergenceError(epoch)
        history.append({"epoch": epoch, "L1": L1, "L2": L2, "L3": L3, "total": total,
                        "L1_frobenius": float(np.sqrt(L1))})
        if L2 == 0 and (best is None or total < best[0]):
            best = (total, system, net.copy(), epoch)

        gd, g_py_dec = net.backprop(cd, 2.0 * E / M, start=b)
        g_py = 2.0 * R.T / M + g_py_dec
        g_px = -2.0 * (R.T @ A) / M
        gy, _ = net.backprop(cy, g_py)
        gx, _ = net.backprop(cx, g_px)
        opt.step([a + c + d for a, c, d in zip(gx, gy, gd)])

    if best is None:
        log.warning("no controllable checkpoint found; returning final epoch")
        PX = net.run(Sx, 0, b)[0]
        PY = net.run(Sy, 0, b)[0]
        best = (history[-1]["total"], fit_lifted_lti(PX.T, PY.T, U, data.X, cfg.ridge), net.copy(), cfg.epochs)
    total, system, best_net, epoch = best
    best_net.metadata["best_epoch"] = epoch
    return system, EncoderDictionary(best_net, mean, std), history
