"""Dataclass configurations for the codec, with toy/full presets and JSON I/O.

The config file format is a single JSON document with two optional top-level
sections, ``"model"`` and ``"train"``, whose keys match the dataclass fields
below.  Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

# Lambda sweep used for the full-scale rate ladder.
LAMBDA_SWEEP = (0.006, 0.009, 0.020, 0.050, 0.150)

SCALE_MIN = 0.11
SCALE_MAX = 256.0
SCALE_LEVELS = 64
TAIL_MASS = 2.0 ** -9


@dataclass(frozen=True)
class ModelConfig:
    """All architecture hyperparameters.

    ``stage_widths[3]`` must equal ``latent_depth``; the latent depth must be
    divisible by ``num_slices`` so channel slices are uniform.
    """

    stage_depths: tuple[int, int, int, int] = (3, 3, 9, 3)
    stage_widths: tuple[int, int, int, int] = (96, 192, 256, 320)
    hyper_stage_depths: tuple[int, int] = (5, 1)
    hyper_stage_widths: tuple[int, int] = (256, 192)
    latent_depth: int = 320          # M
    hyper_depth: int = 192           # N
    kernel_size: int = 7
    expansion_ratio: int = 4
    num_slices: int = 10
    # Hidden widths of the per-slice entropy-parameter / residual nets,
    # tapering toward the slice channel count.
    slice_net_widths: tuple[int, int] = (480, 272)
    lrp_enabled: bool = True
    # Entropy model knobs.
    scale_min: float = SCALE_MIN
    scale_max: float = SCALE_MAX
    scale_levels: int = SCALE_LEVELS
    tail_mass: float = TAIL_MASS
    prior_filters: tuple[int, ...] = (3, 3, 3)
    prior_init_scale: float = 4.0
    preset: str = "custom"

    def __post_init__(self):
        if len(self.stage_depths) != 4 or len(self.stage_widths) != 4:
            raise ConfigError("stage_depths and stage_widths must have 4 entries")
        if len(self.hyper_stage_depths) != 2 or len(self.hyper_stage_widths) != 2:
            raise ConfigError("hyper stage tuples must have 2 entries")
        if any(w <= 0 for w in self.stage_widths + self.hyper_stage_widths):
            raise ConfigError("all stage widths must be positive")
        if any(d <= 0 for d in self.stage_depths + self.hyper_stage_depths):
            raise ConfigError("all stage depths must be positive")
        if self.stage_widths[3] != self.latent_depth:
            raise ConfigError(
                f"stage_widths[3] ({self.stage_widths[3]}) must equal "
                f"latent_depth ({self.latent_depth})"
            )
        if self.hyper_stage_widths[1] != self.hyper_depth:
            raise ConfigError("hyper_stage_widths[1] must equal hyper_depth")
        if self.latent_depth % self.num_slices != 0:
            raise ConfigError(
                f"latent_depth ({self.latent_depth}) must be divisible by "
                f"num_slices ({self.num_slices})"
            )
        if self.kernel_size % 2 != 1:
            raise ConfigError("kernel_size must be odd")
        if self.expansion_ratio < 1:
            raise ConfigError("expansion_ratio must be >= 1")
        if not 0.0 < self.tail_mass < 1.0:
            raise ConfigError("tail_mass must lie in (0, 1)")
        if self.scale_min <= 0:
            raise ConfigError("scale_min must be positive")

    @property
    def slice_depth(self) -> int:
        return self.latent_depth // self.num_slices

    @property
    def hyper_feature_depth(self) -> int:
        # Hyper-synthesis emits location+scale information for the latent.
        return 2 * self.latent_depth

    @classmethod
    def full(cls) -> "ModelConfig":
        return cls(preset="full")

    @classmethod
    def toy(cls) -> "ModelConfig":
        """Small preset so the whole pipeline runs in seconds on a laptop CPU."""
        return cls(
            stage_depths=(1, 1, 2, 1),
            stage_widths=(16, 32, 48, 64),
            hyper_stage_depths=(1, 1),
            hyper_stage_widths=(48, 32),
            latent_depth=64,
            hyper_depth=32,
            num_slices=4,
            slice_net_widths=(48, 32),
            preset="toy",
        )


@dataclass(frozen=True)
class TrainConfig:
    """Rate-distortion training schedule and data-pipeline settings."""

    lambda_: float = 0.020
    batch_size: int = 8
    crop_size: int = 256
    total_steps: int = 3_500_000
    lr: float = 1e-4
    lr_final: float = 1e-5
    lr_drop_steps: int = 100_000     # final steps run at lr_final
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    grad_clip: float = 1.0
    synthesis_ste: bool = False      # straight-through rounding on the decoder path
    seed: int = 0

    def __post_init__(self):
        if self.lambda_ <= 0:
            raise ConfigError("lambda_ must be positive")
        if self.crop_size % 64 != 0:
            raise ConfigError("crop_size must be a multiple of 64")
        if self.batch_size <= 0 or self.total_steps <= 0:
            raise ConfigError("batch_size and total_steps must be positive")

    @classmethod
    def toy(cls, lambda_: float = 0.020, seed: int = 0) -> "TrainConfig":
        """Desk-scale schedule: 5k steps on 64x64 crops."""
        return cls(
            lambda_=lambda_,
            batch_size=4,
            crop_size=64,
            total_steps=5000,
            lr_drop_steps=500,
            seed=seed,
        )

    def lr_at(self, step: int) -> float:
        if step >= self.total_steps - self.lr_drop_steps:
            return self.lr_final
        return self.lr


def _dataclass_from_dict(cls, data: dict, section: str):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - valid
    if unknown:
        raise ConfigError(f"unknown keys in '{section}' section: {sorted(unknown)}")
    coerced = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if isinstance(value, list):
            value = tuple(value)
        coerced[f.name] = value
    try:
        return cls(**coerced)
    except TypeError as exc:
        raise ConfigError(f"invalid '{section}' section: {exc}") from exc


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    """Load ``(ModelConfig, TrainConfig)`` from a JSON config file.

    A ``"preset"`` key inside the model section selects ``toy`` or ``full``
    defaults before the remaining keys are applied as overrides.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - {"model", "train"}
    if unknown:
        raise ConfigError(f"unknown top-level config sections: {sorted(unknown)}")

    model_raw = dict(raw.get("model", {}))
    preset = model_raw.pop("preset", "custom")
    if preset == "toy":
        base = dataclasses.asdict(ModelConfig.toy())
    elif preset == "full":
        base = dataclasses.asdict(ModelConfig.full())
    elif preset == "custom":
        base = dataclasses.asdict(ModelConfig())
    else:
        raise ConfigError(f"unknown model preset: {preset!r}")
    base.update(model_raw)
    base["preset"] = preset
    model_cfg = _dataclass_from_dict(ModelConfig, base, "model")

    train_raw = dict(raw.get("train", {}))
    if preset == "toy":
        train_base = dataclasses.asdict(TrainConfig.toy())
    else:
        train_base = dataclasses.asdict(TrainConfig())
    train_base.update(train_raw)
    train_cfg = _dataclass_from_dict(TrainConfig, train_base, "train")
    return model_cfg, train_cfg


def save_config(path, model_cfg: ModelConfig, train_cfg: TrainConfig) -> None:
    payload = {
        "model": dataclasses.asdict(model_cfg),
        "train": dataclasses.asdict(train_cfg),
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
