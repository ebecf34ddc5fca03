"""Shared configuration, shape laws and the flat key-value config format.

Tensors follow the PyTorch layout: feature maps are ``(B, C, H, W)`` and
images are ``(B, 3, H, W)`` with values in [0, 1].  The level-``l`` map of an
``H x W`` image has spatial size ``H / 2**l``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, NamedTuple

import torch

NUM_LEVELS = 6
GFEB_LEVELS = (2, 3, 4, 5)
LFEB_LEVELS = (0, 1, 2, 3, 4, 5)
# decoder levels that run LFSB stacks; the mixing stage runs at level-4 resolution
ATTENTION_LEVELS = (0, 1, 2, 3, 4)

FUSION_KINDS = ("direct", "concat", "add", "crgf")
LFSB_VARIANTS = ("baseline", "early_fusion", "sa", "sa_ca", "diff_sep", "full")
LAMBDA_MODES = ("learned", "schedule")
LAMBDA_STRATEGIES = ("fixed", "warmup_only", "depth_init_only", "full")


class ConfigError(ValueError):
    pass


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    base_width: int = 8
    image_size: int = 96
    window_size: int = 12
    # indexed by decoder level 0..5; level 1 is not given by the reference setup
    heads_per_level: tuple[int, ...] = (2, 2, 4, 8, 8, 8)
    # LFSB blocks per decoder level 0..4
    lfsb_counts: tuple[int, ...] = (1, 1, 2, 2, 2)
    mugi_blocks: int = 2
    ffn_expansion: int = 4
    window_padding: bool = True
    rel_pos_bias: bool = False
    shared_sa_ca: bool = False
    lfsb_prenorm: bool = True
    fusion: str = "crgf"
    lfsb_variant: str = "full"
    lambda_mode: str = "learned"
    lambda_strategy: str = "full"
    sinblock_activation: str = "sin"
    gfeb_backend: str = "stub"
    gfeb_freeze: bool = False
    warmup_epochs: int = 30
    total_epochs: int = 200

    @classmethod
    def reference(cls, **overrides: Any) -> "ModelConfig":
        base = dict(base_width=48, image_size=384, lfsb_counts=(2, 2, 5, 9, 12))
        base.update(overrides)
        return cls(**base)

    @classmethod
    def desk(cls, **overrides: Any) -> "ModelConfig":
        return cls(**overrides)

    @property
    def channel_schedule(self) -> tuple[int, ...]:
        return tuple(self.base_width * 2**level for level in range(NUM_LEVELS))

    def replace(self, **changes: Any) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def structural_hash(self) -> str:
        """Hash of every field that changes the parameter layout."""
        keys = (
            "base_width", "heads_per_level", "lfsb_counts", "mugi_blocks", "ffn_expansion",
            "rel_pos_bias", "shared_sa_ca", "lfsb_prenorm", "fusion", "lfsb_variant",
            "lambda_mode", "lambda_strategy", "sinblock_activation", "gfeb_backend",
        )
        payload = json.dumps({k: getattr(self, k) for k in keys}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def channel_at(config: ModelConfig, level: int) -> int:
    if not 0 <= level < NUM_LEVELS:
        raise ConfigError(f"level {level} outside 0..{NUM_LEVELS - 1}")
    return config.channel_schedule[level]


def _attention_runs(config: ModelConfig) -> list[tuple[str, int, int, int]]:
    """(label, spatial size, channels, heads) of every LFSB stack in the decoder."""
    c = config.channel_schedule
    h4 = config.image_size // 16
    runs = [("mixing level 5", h4, c[5] // 4, config.heads_per_level[5]),
            ("mixing level 4", h4, c[4], config.heads_per_level[4])]
    for level in ATTENTION_LEVELS:
        runs.append((f"level {level}", config.image_size // 2**level, c[level],
                     config.heads_per_level[level]))
    return runs


def validate_config(config: ModelConfig) -> ModelConfig:
    if config.base_width < 1:
        raise ConfigError("base_width must be positive")
    if config.image_size <= 0 or config.image_size % 32:
        raise ConfigError(f"image_size {config.image_size} not divisible by 32")
    if config.window_size < 1:
        raise ConfigError("window_size must be positive")
    if len(config.heads_per_level) != NUM_LEVELS:
        raise ConfigError(f"heads_per_level needs {NUM_LEVELS} entries (levels 0..5)")
    if len(config.lfsb_counts) != len(ATTENTION_LEVELS):
        raise ConfigError("lfsb_counts needs 5 entries (levels 0..4)")
    if any(n < 0 for n in config.lfsb_counts):
        raise ConfigError("lfsb_counts must be non-negative")
    for level, heads in enumerate(config.heads_per_level):
        if heads < 1 or channel_at(config, level) % heads:
            raise ConfigError(
                f"level {level}: {heads} heads do not divide {channel_at(config, level)} channels")
    for label, size, channels, heads in _attention_runs(config):
        if channels % heads:
            raise ConfigError(f"{label}: {heads} heads do not divide {channels} channels")
        if not config.window_padding and size % config.window_size:
            raise ConfigError(
                f"{label}: size {size} not divisible by window {config.window_size} "
                "and window padding is disabled")
    if config.channel_schedule[1] % 4:
        raise ConfigError("base_width too small: level-1 pixel shuffle needs channels divisible by 4")
    choices = {
        "fusion": FUSION_KINDS, "lfsb_variant": LFSB_VARIANTS,
        "lambda_mode": LAMBDA_MODES, "lambda_strategy": LAMBDA_STRATEGIES,
        "sinblock_activation": ("sin", "gelu"),
    }
    for key, allowed in choices.items():
        if getattr(config, key) not in allowed:
            raise ConfigError(f"{key}={getattr(config, key)!r} not in {allowed}")
    if not (config.gfeb_backend == "stub" or config.gfeb_backend.startswith("external:")):
        raise ConfigError(f"gfeb.backend {config.gfeb_backend!r} must be 'stub' or 'external:<name>'")
    if config.warmup_epochs < 1:
        raise ConfigError("warmup_epochs must be >= 1")
    return config


@dataclass(frozen=True)
class FeaturePyramid:
    source: str
    maps: Mapping[int, torch.Tensor]

    def check(self, image_size: int, channels: tuple[int, ...] | None = None) -> "FeaturePyramid":
        expected = {"GFEB": GFEB_LEVELS, "LFEB": LFEB_LEVELS}.get(self.source)
        if expected is not None and tuple(sorted(self.maps)) != expected:
            raise ShapeError(f"{self.source} pyramid has levels {sorted(self.maps)}, expected {expected}")
        for level, fmap in self.maps.items():
            check_level_shape(fmap, level, image_size,
                              None if channels is None else channels[level])
        return self

    def __getitem__(self, level: int) -> torch.Tensor:
        return self.maps[level]


def check_level_shape(fmap: torch.Tensor, level: int, image_size: int,
                      channels: int | None = None) -> None:
    if image_size % 2**level:
        raise ShapeError(f"image size {image_size} not divisible by 2^{level}")
    size = image_size // 2**level
    if fmap.ndim != 4 or tuple(fmap.shape[-2:]) != (size, size):
        raise ShapeError(f"level {level}: spatial shape {tuple(fmap.shape)} violates H/2^{level}={size}")
    if channels is not None and fmap.shape[1] != channels:
        raise ShapeError(f"level {level}: {fmap.shape[1]} channels, schedule says {channels}")


class DualStreamState(NamedTuple):
    transmission: torch.Tensor
    reflection: torch.Tensor

    def check(self) -> "DualStreamState":
        if self.transmission.shape != self.reflection.shape:
            raise ShapeError(
                f"stream shapes differ: {tuple(self.transmission.shape)} vs {tuple(self.reflection.shape)}")
        return self


# ---------------------------------------------------------------------------
# flat key-value config files


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0
    refl: float = 0.5
    vgg: float = 0.1
    exclu: float = 1.0
    recons: float = 0.2
    color: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"loss weight {f.name} must be non-negative")

    def as_dict(self) -> dict[str, float]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class LossSettings:
    weights: LossWeights = field(default_factory=LossWeights)
    charbonnier_eps: float = 1e-6


@dataclass(frozen=True)
class OptimizerSpec:
    lr: float = 1e-4
    weight_decay: float = 0.0
    batch_size: int = 1
    t_max: int = 10
    eta_min: float = 8e-6
    checkpoint_every: int = 10


@dataclass(frozen=True)
class SamplerSettings:
    pairs_per_epoch: int = 5000
    ratio: tuple[float, float, float] = (0.6, 0.2, 0.2)
    augment: bool = False
    reflection_blur: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossSettings = field(default_factory=LossSettings)
    train: OptimizerSpec = field(default_factory=OptimizerSpec)
    synth: SamplerSettings = field(default_factory=SamplerSettings)
    seed: int = 0


_MODEL_ALIASES = {"gfeb.backend": "gfeb_backend", "gfeb.freeze": "gfeb_freeze"}


def _parse_value(raw: str, template: Any, key: str) -> Any:
    raw = raw.strip()
    try:
        if isinstance(template, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        if isinstance(template, tuple):
            elem = type(template[0]) if template else float
            return tuple(elem(x) for x in raw.replace(":", ",").split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value).lower() if isinstance(value, bool) else str(value)


def parse_kv_lines(lines) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _apply(obj, prefix: str, entries: dict[str, str], aliases: Mapping[str, str] = {}):
    names = {f.name for f in fields(obj)}
    changes = {}
    for key in list(entries):
        name = aliases.get(key)
        if name is None and key.startswith(prefix):
            name = key[len(prefix):]
            if name not in names:
                continue
        if name is None or name not in names:
            continue
        changes[name] = _parse_value(entries.pop(key), getattr(obj, name), key)
    return dataclasses.replace(obj, **changes) if changes else obj


def run_config_from_entries(entries: Mapping[str, str]) -> RunConfig:
    entries = dict(entries)
    preset = entries.pop("preset", "desk")
    if preset not in ("desk", "reference"):
        raise ConfigError(f"unknown preset {preset!r}")
    model = ModelConfig.reference() if preset == "reference" else ModelConfig.desk()
    model = _apply(model, "model.", entries, _MODEL_ALIASES)
    model = _apply(model, "", entries)
    weights = _apply(LossWeights(), "loss.", entries)
    loss = _apply(LossSettings(weights=weights), "loss.", entries)
    train = _apply(OptimizerSpec(), "train.", entries)
    synth = _apply(SamplerSettings(), "synth.", entries)
    seed = int(entries.pop("seed", 0))
    if entries:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(entries))}")
    cfg = RunConfig(model=validate_config(model), loss=loss, train=train, synth=synth, seed=seed)
    if abs(sum(cfg.synth.ratio) - 1.0) > 1e-9 or len(cfg.synth.ratio) != 3:
        raise ConfigError("synth.ratio must have 3 proportions summing to 1")
    return cfg


def load_run_config(path: str | Path | None = None,
                    overrides: Mapping[str, str] | None = None) -> RunConfig:
    """Defaults, then the file, then ``overrides`` (command-line flags)."""
    entries: dict[str, str] = {}
    if path is not None:
        entries.update(parse_kv_lines(Path(path).read_text().splitlines()))
    entries.update(overrides or {})
    return run_config_from_entries(entries)


def run_config_to_entries(cfg: RunConfig) -> dict[str, str]:
    out = {}
    reverse = {v: k for k, v in _MODEL_ALIASES.items()}
    for f in fields(cfg.model):
        out[reverse.get(f.name, f.name)] = _format_value(getattr(cfg.model, f.name))
    for f in fields(cfg.loss.weights):
        out[f"loss.{f.name}"] = _format_value(getattr(cfg.loss.weights, f.name))
    out["loss.charbonnier_eps"] = _format_value(cfg.loss.charbonnier_eps)
    for f in fields(cfg.train):
        out[f"train.{f.name}"] = _format_value(getattr(cfg.train, f.name))
    for f in fields(cfg.synth):
        out[f"synth.{f.name}"] = _format_value(getattr(cfg.synth, f.name))
    out["seed"] = str(cfg.seed)
    return out


def dump_run_config(cfg: RunConfig, path: str | Path) -> None:
    lines = [f"{k} = {v}" for k, v in run_config_to_entries(cfg).items()]
    Path(path).write_text("\n".join(lines) + "\n")


def model_config_from_entries(entries: Mapping[str, str]) -> ModelConfig:
    entries = dict(entries)
    model = _apply(ModelConfig(), "", entries, _MODEL_ALIASES)
    if entries:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(entries))}")
    return validate_config(model)


def load_model_config(path: str | Path) -> ModelConfig:
    return model_config_from_entries(parse_kv_lines(Path(path).read_text().splitlines()))


def dump_model_config(config: ModelConfig, path: str | Path) -> None:
    reverse = {v: k for k, v in _MODEL_ALIASES.items()}
    lines = [f"{reverse.get(f.name, f.name)} = {_format_value(getattr(config, f.name))}"
             for f in fields(config)]
    Path(path).write_text("\n".join(lines) + "\n")
