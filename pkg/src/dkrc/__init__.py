"""Supervised deep Koopman identification of a forced pendulum with spectrogram features."""

from .dkrc import (Identification, LatentImageEncoder, SupervisedConfig, UnsupervisedConfig, fit_latent_encoder,
                   supervised_dkrc, unsupervised_dkrc)
from .dynamics import (PendulumParams, SnapshotDataset, State, Trajectory, build_snapshots, simulate, step,
                       wrap_angle)
from .evaluation import CompareConfig, ErrorTable, RolloutResult, compare, mae, rollout
from .koopman import (RBF, EncoderDictionary, IdentificationReport, KoopmanMatrix, LinearLiftedSystem,
                      Monomials, UnitBasis, controllability, dmd_koopman, edmd_koopman, fit_lifted_lti,
                      heuristics, koopman_spectrum, lift)
from .spectrogram import SpectrogramConfig, align_latents, mel_filterbank, mel_spectrogram, stft_power, to_image

__version__ = "0.1.0"
