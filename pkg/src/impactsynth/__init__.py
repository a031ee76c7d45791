"""impactsynth: interpretable physics priors for impact sounds.

Reconstruct modal frequencies/powers/decays and residual environment
parameters from recordings, re-synthesize and edit them, and drive a
physics-conditioned denoising-diffusion sampler with nearest-neighbor
latent retrieval.
"""

from .conditioning import (LatentStore, PhysicsEncoder, build_store,
                           encode_physics, load_store, query_nearest,
                           save_store)
from .diffusion import (ConditionPair, NoiseSchedule, ToyDenoiser,
                        UnitGaussianDenoiser, forward_sample, make_schedule,
                        sample, train_toy, training_loss)
from .dsp import (ComplexSpectrum, FilterBank, Spectrogram, StftConfig,
                  bandpass_split, griffin_lim, istft, log_magnitude,
                  multires_stft_loss, spectral_convergence, stft)
from .errors import DataError
from .metrics import fid, kid, kl_divergence, recognition_accuracy
from .modal import (Mode, ModeSet, NormalizedModeSet, edit_modes,
                    estimate_modes, normalize_modes, synthesize_modes)
from .residual import (PhysicsPriors, ResidualParams, fit_residual,
                       load_priors, save_priors, synthesize_residual)

__version__ = "0.1.0"

__all__ = [
    "ComplexSpectrum", "ConditionPair", "DataError", "FilterBank",
    "LatentStore", "Mode", "ModeSet", "NoiseSchedule", "NormalizedModeSet",
    "PhysicsEncoder", "PhysicsPriors", "ResidualParams", "Spectrogram",
    "StftConfig", "ToyDenoiser", "UnitGaussianDenoiser", "bandpass_split",
    "build_store", "edit_modes", "encode_physics", "estimate_modes", "fid",
    "fit_residual", "forward_sample", "griffin_lim", "istft", "kid",
    "kl_divergence", "load_priors", "load_store", "log_magnitude",
    "make_schedule", "multires_stft_loss", "normalize_modes", "query_nearest",
    "recognition_accuracy", "sample", "save_priors", "save_store",
    "spectral_convergence", "stft", "synthesize_modes", "synthesize_residual",
    "train_toy", "training_loss",
]
