"""Synthetic impact-sound corpus generation for demos and verification.

Clips are drawn from a few "materials", each a cluster of modal templates
with its own visual-latent cluster, so retrieval and conditioning behave
like they would on real paired data.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .dsp import StftConfig
from .errors import DataError
from .io import atomic_write_bytes, write_pdt, write_wav
from .modal import ModeSet, synthesize_modes
from .residual import PhysicsPriors, ResidualParams, synthesize_residual


def random_modes(rng: np.random.Generator, config: StftConfig = StftConfig(),
                 num_active: int = 8, min_bin_gap: int = 3,
                 power_range=(-35.0, -6.0), decay_range=(40.0, 400.0),
                 bin_span=(4, 950)) -> ModeSet:
    """A silent ModeSet with ``num_active`` well-separated random modes."""
    modes = ModeSet.silent(config)
    lo, hi = bin_span
    hi = min(hi, config.num_bins - 1)
    if lo >= hi:
        raise ValueError(f"bin_span {bin_span} empty for {config.num_bins} bins")
    bins: list[int] = []
    while len(bins) < num_active:
        for _ in range(200):
            cand = int(rng.integers(lo, hi))
            if all(abs(cand - b) >= min_bin_gap for b in bins):
                bins.append(cand)
                break
        else:
            break  # span saturated
    res = config.bin_resolution
    for b in sorted(bins):
        modes.frequency[b] = (b + rng.uniform(-0.45, 0.45)) * res
        modes.power[b] = rng.uniform(*power_range)
        modes.decay[b] = rng.uniform(*decay_range)
    return modes


def random_residual(rng: np.random.Generator, sample_rate: int = 44100,
                    num_bands: int = 100, num_active: int = 6,
                    weight_range=(0.002, 0.02), gamma_range=(60.0, 280.0),
                    noise_seed: int = 0) -> ResidualParams:
    """Sparse residual: a few audible decaying noise bands."""
    params = ResidualParams.zeros(sample_rate, num_bands, noise_seed)
    active = rng.choice(num_bands, size=min(num_active, num_bands), replace=False)
    for m in active:
        params.weights[m] = rng.uniform(*weight_range)
        params.gamma[m] = rng.uniform(*gamma_range)
    return params


def render_priors(priors: PhysicsPriors, duration: float = 0.25) -> np.ndarray:
    """Modal synthesis plus residual."""
    sr = priors.modes.stft_config.sample_rate
    wave = synthesize_modes(priors.modes, duration, sr)
    if np.any(priors.residual.weights > 0):
        wave = wave + synthesize_residual(priors.residual, duration, sr)
    return wave


def make_visual_latent(rng: np.random.Generator, material: int,
                       dim: int = 2048) -> np.ndarray:
    """Cluster center per material plus small within-cluster jitter."""
    center_rng = np.random.default_rng(1000 + material)
    center = center_rng.standard_normal(dim)
    return center + 0.05 * rng.standard_normal(dim)


def make_corpus(out_dir, num_clips: int = 6, num_materials: int = 2,
                seed: int = 0, config: StftConfig = StftConfig(),
                duration: float = 0.25, visual_dim: int = 2048,
                num_bands: int = 100) -> dict:
    """Write WAV clips, visual latents and a clip manifest under out_dir.

    Returns the manifest payload (ids, paths, materials).
    """
    if num_clips < 1:
        raise DataError("num_clips must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    clips = []
    top = config.num_bins - 1
    for i in range(num_clips):
        material = i % num_materials
        # materials differ in register and damping
        template = np.random.default_rng(2000 + material)
        if material % 2 == 0:
            span = (4, max(int(top * 0.37), 8))
        else:
            span = (int(top * 0.3), int(top * 0.93))
        decays = (40.0, 200.0) if material % 2 == 0 else (150.0, 400.0)
        modes = random_modes(rng, config, num_active=int(template.integers(5, 9)),
                             bin_span=span, decay_range=decays)
        residual = random_residual(rng, config.sample_rate, num_bands=num_bands,
                                   noise_seed=seed * 1000 + i)
        priors = PhysicsPriors(modes, residual)
        wave = render_priors(priors, duration)
        peak = np.abs(wave).max()
        if peak > 0.95:
            wave = wave * (0.9 / peak)

        clip_id = f"clip{i:03d}"
        wav_path = os.path.join(out_dir, f"{clip_id}.wav")
        visual_path = os.path.join(out_dir, f"{clip_id}.visual.pdt1")
        write_wav(wav_path, wave, config.sample_rate)
        write_pdt(visual_path, make_visual_latent(rng, material, visual_dim))
        clips.append({
            "id": clip_id,
            "wav": f"{clip_id}.wav",
            "visual": f"{clip_id}.visual.pdt1",
            "label": f"material{material}",
        })
    manifest = {"clips": clips}
    atomic_write_bytes(os.path.join(out_dir, "manifest.json"),
                       json.dumps(manifest, indent=2).encode())
    return manifest
