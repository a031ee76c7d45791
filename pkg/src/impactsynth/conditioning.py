"""Physics-latent encoding and the visual->physics key-value store.

The encoder maps the five parameter groups (f_norm, p_norm, decay_norm,
band decays, band weights) through five fixed seeded affine projections
(64+64+64+32+32 = 256) followed by tanh. At inference the visual latent of
a test clip queries the Euclidean-nearest training visual latent and reuses
its paired physics latent.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .io import atomic_write_bytes, read_pdt, write_pdt
from .modal import normalize_modes
from .residual import PhysicsPriors, load_priors

_GROUP_DIMS = (64, 64, 64, 32, 32)


@dataclass
class PhysicsEncoder:
    """Five seeded random affine maps, one per parameter group, fixed after
    construction. gamma/weight scaling statistics are frozen in at store
    build time."""

    mode_bins: int = 1025
    num_bands: int = 100
    seed: int = 0
    gamma_lo: float = 0.0
    gamma_hi: float = 1600.0
    weight_max: float = 1.0
    _maps: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self._maps:
            rng = np.random.default_rng(self.seed)
            in_dims = (self.mode_bins, self.mode_bins, self.mode_bins,
                       self.num_bands, self.num_bands)
            for d_in, d_out in zip(in_dims, _GROUP_DIMS):
                w = rng.standard_normal((d_out, d_in)) / np.sqrt(d_in)
                b = 0.1 * rng.standard_normal(d_out)
                self._maps.append((w, b))

    @property
    def latent_dim(self) -> int:
        return sum(_GROUP_DIMS)

    def scaling_meta(self) -> dict:
        return {
            "mode_bins": self.mode_bins,
            "num_bands": self.num_bands,
            "seed": self.seed,
            "gamma_lo": self.gamma_lo,
            "gamma_hi": self.gamma_hi,
            "weight_max": self.weight_max,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "PhysicsEncoder":
        try:
            return cls(
                mode_bins=int(meta["mode_bins"]),
                num_bands=int(meta["num_bands"]),
                seed=int(meta["seed"]),
                gamma_lo=float(meta["gamma_lo"]),
                gamma_hi=float(meta["gamma_hi"]),
                weight_max=float(meta["weight_max"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed encoder metadata: {exc}") from exc


def _scale_symmetric(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi - lo <= 0:
        return np.zeros_like(values)
    return np.clip(2.0 * (values - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def encode_physics(priors: PhysicsPriors, encoder: PhysicsEncoder) -> np.ndarray:
    """Project physics priors into the 256-d latent (entries in (-1, 1))."""
    if priors.modes.num_modes != encoder.mode_bins:
        raise DataError(
            f"priors have {priors.modes.num_modes} modes, encoder expects "
            f"{encoder.mode_bins}"
        )
    if priors.residual.num_bands != encoder.num_bands:
        raise DataError(
            f"priors have {priors.residual.num_bands} bands, encoder expects "
            f"{encoder.num_bands}"
        )
    norm = normalize_modes(priors.modes)
    w_max = encoder.weight_max if encoder.weight_max > 0 else 1.0
    groups = [
        norm.f_norm,
        norm.p_norm,
        norm.decay_norm,
        _scale_symmetric(priors.residual.gamma, encoder.gamma_lo, encoder.gamma_hi),
        np.clip(2.0 * priors.residual.weights / w_max - 1.0, -1.0, 1.0),
    ]
    parts = [w @ g + b for (w, b), g in zip(encoder._maps, groups)]
    return np.tanh(np.concatenate(parts))


@dataclass
class LatentStore:
    """Immutable key-value pairs: visual latents -> physics latents."""

    keys: np.ndarray     # (n, visual_dim)
    values: np.ndarray   # (n, 256)
    ids: list[str]
    encoder_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.keys = np.asarray(self.keys, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.keys.ndim != 2 or self.values.ndim != 2:
            raise DataError("store keys/values must be 2-D matrices")
        if len({*self.ids}) != len(self.ids):
            raise DataError("store clip ids must be unique")
        if self.keys.shape[0] != self.values.shape[0] or \
                self.keys.shape[0] != len(self.ids):
            raise DataError("store keys, values and ids must align")

    @property
    def size(self) -> int:
        return len(self.ids)


def build_store(pairs, encoder: PhysicsEncoder) -> LatentStore:
    """Encode (id, visual latent file, priors file) triples into a store.

    gamma/weight scaling statistics are taken over the whole corpus and
    frozen into the encoder before any priors are encoded.
    """
    entries = list(pairs)
    if not entries:
        raise DataError("empty store: no (visual, priors) pairs given")

    loaded: list[tuple[str, np.ndarray, PhysicsPriors]] = []
    for clip_id, visual_path, priors_path in entries:
        nu = read_pdt(visual_path).ravel().astype(np.float64)
        priors = load_priors(priors_path)
        loaded.append((str(clip_id), nu, priors))

    gammas = np.concatenate([p.residual.gamma for _, _, p in loaded])
    weights = np.concatenate([p.residual.weights for _, _, p in loaded])
    encoder.gamma_lo = float(gammas.min())
    encoder.gamma_hi = float(gammas.max())
    encoder.weight_max = float(weights.max()) if weights.max() > 0 else 1.0

    dim = loaded[0][1].size
    ids, keys, values = [], [], []
    for clip_id, nu, priors in loaded:
        if nu.size != dim:
            raise DataError(
                f"visual latent for {clip_id} has dim {nu.size}, expected {dim}"
            )
        ids.append(clip_id)
        keys.append(nu)
        values.append(encode_physics(priors, encoder))
    store = LatentStore(np.stack(keys), np.stack(values), ids,
                        encoder.scaling_meta())
    return store


def query_nearest(store: LatentStore, nu_test) -> tuple[np.ndarray, str, float]:
    """Linear-scan Euclidean nearest neighbor; ties go to the smallest id."""
    if store.size == 0:
        raise DataError("empty store")
    nu = np.asarray(nu_test, dtype=np.float64).ravel()
    if nu.size != store.keys.shape[1]:
        raise DataError(
            f"query dim {nu.size} != store key dim {store.keys.shape[1]}"
        )
    dists = np.linalg.norm(store.keys - nu[None, :], axis=1)
    best = min(range(store.size), key=lambda i: (dists[i], store.ids[i]))
    return store.values[best].copy(), store.ids[best], float(dists[best])


def save_store(path, store: LatentStore) -> None:
    """JSON manifest plus PDT1 key and value matrices next to it."""
    base = os.path.basename(path)
    manifest = {
        "format": "impactsynth-store",
        "version": 1,
        "ids": store.ids,
        "key_dim": store.keys.shape[1],
        "value_dim": store.values.shape[1],
        "keys": f"{base}.keys.pdt1",
        "values": f"{base}.values.pdt1",
        "encoder": store.encoder_meta,
    }
    write_pdt(f"{path}.keys.pdt1", store.keys)
    write_pdt(f"{path}.values.pdt1", store.values)
    atomic_write_bytes(path, json.dumps(manifest, indent=2, sort_keys=True).encode())


def load_store(path) -> LatentStore:
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load store {path}: {exc}") from exc
    if manifest.get("format") != "impactsynth-store":
        raise DataError(f"{path}: not an impactsynth store")
    directory = os.path.dirname(os.path.abspath(path))
    keys = read_pdt(os.path.join(directory, manifest["keys"]))
    values = read_pdt(os.path.join(directory, manifest["values"]))
    return LatentStore(keys, values, list(manifest["ids"]),
                       manifest.get("encoder", {}))
