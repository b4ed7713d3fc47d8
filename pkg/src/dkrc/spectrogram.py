"""Mel spectrograms of state time series and their image/latent alignment."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateFilterError, InsufficientDataError, InvalidInputError, InvalidRangeError


@dataclass(frozen=True)
class SpectrogramConfig:
    sample_rate: float = 1000.0
    window_len: int = 256
    hop: int = 64
    n_fft: int = 256
    n_mels: int = 32
    f_min: float = 0.0
    f_max: float = 500.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.hop < 1:
            raise InvalidInputError("hop must be >= 1")
        if self.window_len < 1 or self.window_len > self.n_fft:
            raise InvalidInputError("need 1 <= window_len <= n_fft")
        if not (0 <= self.f_min < self.f_max <= self.sample_rate / 2):
            raise InvalidInputError("need 0 <= f_min < f_max <= sample_rate / 2")
        if self.n_mels < 1:
            raise InvalidInputError("n_mels must be >= 1")
        if not self.log_floor > 0:
            raise InvalidInputError("log_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def floor_db(self) -> float:
        return 10.0 * np.log10(self.log_floor)

    def to_dict(self):
        return asdict(self)


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (n_mels, n_frames), dB
    frame_centers: np.ndarray
    config: SpectrogramConfig

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


def n_frames_for(length: int, config: SpectrogramConfig) -> int:
    return (length - config.window_len) // config.hop + 1


def frame_centers_for(length: int, config: SpectrogramConfig) -> np.ndarray:
    return np.arange(n_frames_for(length, config)) * config.hop + config.window_len // 2


def stft_power(signal, config: SpectrogramConfig) -> np.ndarray:
    """Hann-windowed power spectra, shape (n_fft // 2 + 1, n_frames).

    Power is ``|FFT|^2 / n_fft`` so that a frame satisfies the one-sided
    Parseval identity ``sum(P[0] + 2 P[1:-1] + P[-1]) == sum((w * x)^2)``.
    """
    x = np.asarray(signal, dtype=float).reshape(-1)
    if len(x) < config.window_len:
        raise InsufficientDataError(
            f"signal of length {len(x)} is shorter than one window ({config.window_len})")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("signal contains non-finite samples")
    frames = np.lib.stride_tricks.sliding_window_view(x, config.window_len)[::config.hop]
    spectrum = np.fft.rfft(frames * hann_window(config.window_len), n=config.n_fft, axis=1)
    return (np.abs(spectrum) ** 2).T / config.n_fft


def mel_band_edges(config: SpectrogramConfig) -> np.ndarray:
    """``n_mels + 2`` Hz points; filter i spans edges[i]..edges[i+2] peaking at edges[i+1]."""
    mels = np.linspace(hz_to_mel(config.f_min), hz_to_mel(config.f_max), config.n_mels + 2)
    return mel_to_hz(mels)


def mel_filterbank(config: SpectrogramConfig) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, n_fft // 2 + 1), each peak-normalized to 1."""
    edges = mel_band_edges(config)
    freqs = np.arange(config.n_bins) * config.sample_rate / config.n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    peaks = bank.max(axis=1)
    if np.any(peaks <= 0):
        bad = int(np.argmin(peaks))
        raise DegenerateFilterError(
            f"mel filter {bad} ({edges[bad]:.2f}-{edges[bad + 2]:.2f} Hz) covers no FFT bin; "
            f"reduce n_mels or increase n_fft")
    return bank / peaks[:, None]


def mel_spectrogram(signal, config: SpectrogramConfig = SpectrogramConfig()) -> MelSpectrogram:
    power = stft_power(signal, config)
    mel_power = mel_filterbank(config) @ power
    values = 10.0 * np.log10(np.maximum(mel_power, config.log_floor))
    return MelSpectrogram(values, frame_centers_for(len(np.ravel(signal)), config), config)


def to_image(spec, mode: str = "global-minmax", value_range=None) -> np.ndarray:
    """Affinely rescale a spectrogram (or raw dB matrix) into pixels in [0, 1].

    ``mode="fixed-range"`` maps ``value_range=(lo, hi)`` dB onto [0, 1] and
    clips; ``"global-minmax"`` uses the matrix's own extrema and maps a
    constant matrix to all zeros.
    """
    values = np.asarray(spec.values if isinstance(spec, MelSpectrogram) else spec, dtype=float)
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("spectrogram contains non-finite values")
    if mode == "global-minmax":
        lo, hi = float(values.min()), float(values.max())
        if hi <= lo:
            return np.zeros_like(values)
    elif mode == "fixed-range":
        if value_range is None:
            raise InvalidRangeError("fixed-range mode needs value_range=(lo, hi)")
        lo, hi = map(float, value_range)
        if not lo < hi:
            raise InvalidRangeError(f"invalid range: lo={lo} must be below hi={hi}")
    else:
        raise InvalidInputError(f"unknown image mode {mode!r}")
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def align_latents(frame_centers, n_steps: int) -> np.ndarray:
    """Zero-order hold: timestep t uses the last frame whose center is <= t (frame 0 before the first)."""
    centers = np.asarray(frame_centers)
    if centers.size == 0:
        raise InvalidInputError("frame_centers must be nonempty")
    idx = np.searchsorted(centers, np.arange(n_steps), side="right") - 1
    return np.maximum(idx, 0)


def frame_images(values: np.ndarray, image_frames: int) -> np.ndarray:
    """Causal sliding patches: image k holds frames k-image_frames+1..k, left-padded by edge replication.

    Returns shape (n_frames, n_mels, image_frames).
    """
    padded = np.concatenate([np.repeat(values[:, :1], image_frames - 1, axis=1), values], axis=1)
    patches = np.lib.stride_tricks.sliding_window_view(padded, image_frames, axis=1)
    return np.ascontiguousarray(patches.transpose(1, 0, 2))
