"""Run configuration and batch clip manifests for the CLI."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .dsp import StftConfig, default_loss_configs
from .errors import DataError


@dataclass
class Config:
    """Tool defaults, loadable from JSON with per-flag overrides."""

    sample_rate: int = 44100
    window_size: int = 2048
    hop_size: int = 256
    num_bands: int = 100
    loss_windows: list[int] = field(default_factory=lambda: [512, 1024, 2048])
    schedule: str = "cosine"
    steps: int = 1000
    seed: int = 0

    def stft_config(self) -> StftConfig:
        return StftConfig(sample_rate=self.sample_rate,
                          window_size=self.window_size, hop_size=self.hop_size)

    def loss_configs(self):
        if self.loss_windows == [512, 1024, 2048]:
            return default_loss_configs(self.sample_rate)
        return [StftConfig(sample_rate=self.sample_rate, window_size=w,
                           hop_size=max(w // 4, 1)) for w in self.loss_windows]

    def validate(self) -> "Config":
        self.stft_config()
        self.loss_configs()
        if self.num_bands < 1:
            raise DataError("num_bands must be >= 1")
        if self.steps < 1:
            raise DataError("steps must be >= 1")
        if self.schedule not in ("cosine", "linear"):
            raise DataError(f"unknown schedule {self.schedule!r}")
        return self


def load_config(path=None, **overrides) -> Config:
    """Config from an optional JSON file, updated with non-None overrides."""
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot load config {path}: {exc}") from exc
        unknown = set(values) - set(Config.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        config = Config(**values)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid configuration: {exc}") from exc
    return config.validate()


@dataclass
class ClipEntry:
    clip_id: str
    wav: str
    visual: str | None = None
    label: str | None = None


def load_manifest(path) -> list[ClipEntry]:
    """Clip manifest: {"clips": [{"id", "wav", "visual"?, "label"?}, ...]}.

    Relative paths resolve against the manifest's directory.
    """
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load manifest {path}: {exc}") from exc
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if p is None or os.path.isabs(p) else os.path.join(base, p)

    entries = []
    try:
        for item in payload["clips"]:
            entries.append(ClipEntry(
                clip_id=str(item["id"]),
                wav=resolve(item["wav"]),
                visual=resolve(item.get("visual")),
                label=item.get("label"),
            ))
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed clip manifest {path}: {exc}") from exc
    ids = [e.clip_id for e in entries]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate clip ids in manifest {path}")
    return entries


def load_pairs_manifest(path) -> list[dict]:
    """Store-build pairs: {"pairs": [{"id", "visual", "priors", "spec"?}]}."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load pairs manifest {path}: {exc}") from exc
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if p is None or os.path.isabs(p) else os.path.join(base, p)

    pairs = []
    try:
        for item in payload["pairs"]:
            pairs.append({
                "id": str(item["id"]),
                "visual": resolve(item["visual"]),
                "priors": resolve(item["priors"]),
                "spec": resolve(item.get("spec")),
            })
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed pairs manifest {path}: {exc}") from exc
    if len({p["id"] for p in pairs}) != len(pairs):
        raise DataError(f"duplicate ids in pairs manifest {path}")
    return pairs
