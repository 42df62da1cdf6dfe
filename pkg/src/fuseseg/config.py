"""Run configuration: a flat ``key = value`` file, strictly validated.

Unknown keys are fatal so a typo in a sweep cannot silently fall back to a
default.  ``parse_config(format_config(cfg)) == cfg`` holds for every
valid configuration.

All randomness flows from the single ``seed`` through named child streams
(:func:`child_rng`), so toggling one feature never shifts the random draws
of another.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

import numpy as np


class ConfigError(ValueError):
    """A configuration file or value is invalid."""


def child_seed(root_seed, *keys):
    """Stable 64-bit seed derived from the root seed and a named path."""
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode())
    for key in keys:
        h.update(b"/")
        h.update(str(key).encode())
    return int.from_bytes(h.digest()[:8], "little")


def child_rng(root_seed, *keys):
    """Deterministic generator for one named purpose (e.g. "init", "augment")."""
    return np.random.Generator(np.random.PCG64(child_seed(root_seed, *keys)))


@dataclass
class RunConfig:
    # model
    num_classes: int = 5
    image_size: int = 64
    input_channels: int = 3
    stage_channels: tuple = (8, 16, 32, 32, 32)
    blocks_per_stage: int = 1
    aspp_rates: tuple = (1, 2, 4)
    aspp_channels: int = 32
    aspp_pooling: bool = True
    use_decoder: bool = False
    gate_channels: int = 16
    gate_k: float = 1.0
    edge_mid_channels: int = 8
    model_mode: str = "full"            # baseline | boundary | full
    fusion_attention: str = "sigmoid"   # sigmoid | softmax
    # loss
    lambda1: float = 1.0
    lambda2: float = 1.0
    beta_mode: str = "per_image"        # per_image | per_batch
    aux_loss: bool = False
    aux_weight: float = 0.4
    # data / augmentation
    num_images: int = 200
    shapes_per_image: int = 5
    rarity_decay: float = 0.5
    boundary_thickness: int = 3
    thicknesses: tuple = (3, 5, 9, 12)
    crop_mode: str = "integral"         # random | uniform | integral
    crop_size: int = 64
    aug_flip: bool = True
    scale_min: float = 0.5
    scale_max: float = 2.0
    # optimizer
    base_lr: float = 0.01
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 0.0005
    total_iters: int = 1000
    batch_size: int = 4
    checkpoint_every: int = 0
    # misc
    seed: int = 0
    precision: str = "standard"         # standard | verification

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.image_size % 8:
            raise ConfigError(f"image_size must be divisible by 8, got {self.image_size}")
        if len(self.stage_channels) != 5 or any(c < 1 for c in self.stage_channels):
            raise ConfigError(f"stage_channels needs five positive values, got {self.stage_channels}")
        if not self.aspp_rates:
            raise ConfigError("aspp_rates must not be empty")
        for key in ("blocks_per_stage", "input_channels", "aspp_channels", "gate_channels",
                    "edge_mid_channels", "num_images", "shapes_per_image",
                    "boundary_thickness", "crop_size", "total_iters", "batch_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        if self.gate_k < 0:
            raise ConfigError(f"gate_k must be >= 0, got {self.gate_k}")
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda1 + self.lambda2 <= 0:
            raise ConfigError(f"lambda1/lambda2 must be >= 0 and not both zero, "
                              f"got {self.lambda1}/{self.lambda2}")
        if self.model_mode not in ("baseline", "boundary", "full"):
            raise ConfigError(f"model_mode must be baseline|boundary|full, got {self.model_mode!r}")
        if self.fusion_attention not in ("sigmoid", "softmax"):
            raise ConfigError(f"fusion_attention must be sigmoid|softmax, got {self.fusion_attention!r}")
        if self.beta_mode not in ("per_image", "per_batch"):
            raise ConfigError(f"beta_mode must be per_image|per_batch, got {self.beta_mode!r}")
        if self.crop_mode not in ("random", "uniform", "integral"):
            raise ConfigError(f"crop_mode must be random|uniform|integral, got {self.crop_mode!r}")
        if self.precision not in ("standard", "verification"):
            raise ConfigError(f"precision must be standard|verification, got {self.precision!r}")
        if not 0 < self.scale_min <= self.scale_max:
            raise ConfigError(f"need 0 < scale_min <= scale_max, got {self.scale_min}/{self.scale_max}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if any(t < 1 for t in self.thicknesses) or not self.thicknesses:
            raise ConfigError(f"thicknesses must be positive, got {self.thicknesses}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if self.rarity_decay <= 0 or self.rarity_decay > 1:
            raise ConfigError(f"rarity_decay must be in (0, 1], got {self.rarity_decay}")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_value(key, raw):
    field = _FIELDS[key]
    default = getattr(RunConfig, key)
    try:
        if field.type == "bool" or isinstance(default, bool):
            if raw not in ("true", "false"):
                raise ValueError(f"expected true/false")
            return raw == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [part.strip() for part in raw.split(",") if part.strip()]
            elem = type(default[0]) if default else int
            return tuple(elem(item) for item in items)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def format_config(cfg: RunConfig) -> str:
    lines = [f"{name} = {_format_value(getattr(cfg, name))}" for name in _FIELDS]
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``key=value`` strings on top of a parsed config."""
    values = dataclasses.asdict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _parse_value(key, raw.strip())
    out = RunConfig(**values)
    out.validate()
    return out
