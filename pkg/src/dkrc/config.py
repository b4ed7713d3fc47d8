"""Pipeline configuration: INI-style sections with strict key checking.

Example::

    [run]
    seed = 3

    [ae]
    epochs = 50

    [eval]
    dims = 3, 5, 12

Unknown sections or keys raise :class:`ConfigError`; every omitted key takes
the default declared in the dataclasses below.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields

from .dkrc import SupervisedConfig
from .dynamics import PendulumParams
from .errors import ConfigError
from .evaluation import CompareConfig
from .neuralnet import CAEConfig, TrainConfig
from .spectrogram import SpectrogramConfig

OUT_ENV = "DKRC_OUT"


@dataclass
class RunSection:
    seed: int = 0
    out: str = ""


@dataclass
class DynamicsSection:
    gravity: float = 10.0
    mass: float = 1.0
    length: float = 1.0
    dt: float = 0.001
    max_torque: float = 2.0
    max_speed: float = 8.0
    n_trajectories: int = 20
    steps: int = 2000
    policy: str = "random"
    theta_min: float = -3.141592653589793
    theta_max: float = 3.141592653589793
    theta_dot_min: float = -1.0
    theta_dot_max: float = 1.0


@dataclass
class SpectrogramSection:
    sample_rate: float = 1000.0
    window_len: int = 256
    hop: int = 64
    n_fft: int = 256
    n_mels: int = 32
    f_min: float = 0.0
    f_max: float = 500.0
    log_floor: float = 1e-10
    image_frames: int = 16
    channel: str = "theta"


@dataclass
class CAESection:
    filters: tuple = (8, 16)
    kernel: int = 3
    stride: int = 2
    latent_dim: int = 8
    alpha: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    loss: str = "mse"


@dataclass
class AESection:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    loss: str = "mae"


@dataclass
class KoopmanSection:
    epsilon: float = 1e-2
    n_start: str = "auto"
    n_max: int = 32
    ridge: float = 1e-8


@dataclass
class EvalSection:
    dims: tuple = (3, 5, 12)
    modes: tuple = ("raw-only", "raw+latent")
    horizon: int = 5000
    trials: int = 10
    n_seeds: int = 1
    wrap_theta: bool = True


SECTIONS = {
    "run": RunSection, "dynamics": DynamicsSection, "spectrogram": SpectrogramSection,
    "cae": CAESection, "ae": AESection, "koopman": KoopmanSection, "eval": EvalSection,
}


@dataclass
class PipelineConfig:
    run: RunSection = field(default_factory=RunSection)
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    spectrogram: SpectrogramSection = field(default_factory=SpectrogramSection)
    cae: CAESection = field(default_factory=CAESection)
    ae: AESection = field(default_factory=AESection)
    koopman: KoopmanSection = field(default_factory=KoopmanSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # -- derived objects -----------------------------------------------------

    def out_dir(self) -> str:
        return self.run.out or os.environ.get(OUT_ENV, "dkrc_out")

    def pendulum(self) -> PendulumParams:
        d = self.dynamics
        return PendulumParams(d.gravity, d.mass, d.length, d.dt, d.max_torque, d.max_speed)

    def spectrogram_config(self) -> SpectrogramConfig:
        s = self.spectrogram
        return SpectrogramConfig(s.sample_rate, s.window_len, s.hop, s.n_fft, s.n_mels, s.f_min, s.f_max,
                                 s.log_floor)

    def latent_options(self) -> dict:
        c, seed = self.cae, self.run.seed
        return {
            "spec_cfg": self.spectrogram_config(),
            "cae_cfg": CAEConfig(tuple(c.filters), c.kernel, c.stride, c.latent_dim, c.alpha, seed),
            "train_cfg": TrainConfig(c.learning_rate, c.epochs, c.batch_size, seed, c.loss),
            "image_frames": self.spectrogram.image_frames,
            "channel": self.spectrogram.channel,
            "params": self.pendulum(),
        }

    def supervised(self, mode="raw-only") -> SupervisedConfig:
        k, a = self.koopman, self.ae
        return SupervisedConfig(
            epsilon=k.epsilon, n_start=None if k.n_start == "auto" else int(k.n_start), n_max=k.n_max,
            ridge=k.ridge, mode=mode, seed=self.run.seed,
            ae_train=TrainConfig(a.learning_rate, a.epochs, a.batch_size, 0, a.loss))

    def compare_config(self) -> CompareConfig:
        e, d = self.eval, self.dynamics
        opts = self.latent_options()
        opts.pop("params")
        return CompareConfig(
            dims=tuple(e.dims), modes=tuple(e.modes),
            seeds=tuple(self.run.seed + i for i in range(e.n_seeds)), n_trials=e.trials, horizon=e.horizon,
            n_trajectories=d.n_trajectories, traj_steps=d.steps, params=self.pendulum(),
            supervised=self.supervised(), latent_options=opts, wrap_theta=e.wrap_theta,
            eval_theta_range=(d.theta_min, d.theta_max), eval_theta_dot_range=(d.theta_dot_min, d.theta_dot_max))

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        """Every setting except the output location, which does not affect results."""
        d = {name: asdict(getattr(self, name)) for name in SECTIONS}
        d["run"].pop("out")
        return d

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def to_ini(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for key, value in asdict(getattr(self, name)).items():
                lines.append(f"{key} = {_format(value)}")
            lines.append("")
        return "\n".join(lines)


def _format(value):
    if isinstance(value, (tuple, list)):
        return ", ".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse(raw: str, default, where: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(s) for s in items)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from exc


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    cfg = PipelineConfig()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]; expected one of {sorted(SECTIONS)}")
        target = getattr(cfg, section)
        known = {f.name: f for f in fields(target)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]; expected one of {sorted(known)}")
            setattr(target, key, _parse(raw, getattr(target, key), f"{source}: [{section}] {key}"))
    validate(cfg)
    return cfg


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def validate(cfg: PipelineConfig):
    try:
        cfg.pendulum()
        cfg.spectrogram_config()
        for mode in cfg.eval.modes:
            cfg.supervised(mode)
        TrainConfig(cfg.cae.learning_rate, cfg.cae.epochs, cfg.cae.batch_size, 0, cfg.cae.loss)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.koopman.n_start != "auto" and not cfg.koopman.n_start.isdigit():
        raise ConfigError("[koopman] n_start must be 'auto' or an integer")
    if len(cfg.cae.filters) != 2:
        raise ConfigError("[cae] filters needs exactly two values")
    if cfg.dynamics.n_trajectories < 1 or cfg.dynamics.steps < 1:
        raise ConfigError("[dynamics] n_trajectories and steps must be >= 1")
    if cfg.spectrogram.channel not in ("theta", "theta_dot", "both"):
        raise ConfigError("[spectrogram] channel must be theta, theta_dot or both")
