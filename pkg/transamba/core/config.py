"""Experiment configuration.

The on-disk format is flat UTF-8 ``key=value`` text, one pair per line, ``#``
comments allowed. Every key belongs to exactly one section model below;
unknown keys are rejected.
"""

from __future__ import annotations

import math
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError


class LayerDesign(str, Enum):
    PARALLEL = "Parallel"
    IN_CROSS = "InCross"
    CROSS_IN = "CrossIn"


class Variant(str, Enum):
    V1 = "V1"  # in-plane SA only
    V2 = "V2"  # in-plane forward Mamba + in-plane SA
    V2B = "V2B"  # in-plane bidirectional SSM only
    V3 = "V3"  # CPM + in-plane SA
    V4 = "V4"  # CPM + in-plane bidirectional SSM
    V5 = "V5"  # cross-plane SA + in-plane SA

    @property
    def has_attention(self) -> bool:
        return self not in (Variant.V2B, Variant.V4)


class LocalizationSource(str, Enum):
    AUTO = "auto"
    C2P = "c2p"
    PATCH = "patch"


class OptimizerName(str, Enum):
    SGD = "sgd"
    ADAMW = "adamw"


class _Section(BaseModel):
    model_config = ConfigDict(
        extra="forbid", use_enum_values=False, validate_assignment=True, protected_namespaces=()
    )


class ModelConfig(_Section):
    layers: int = Field(default=4, ge=1)
    model_dim: int = Field(default=64, ge=1)
    heads: int = Field(default=4, ge=1)
    patch_size: int = Field(default=8, ge=1)
    image_height: int = Field(default=32, ge=1)
    image_width: int = Field(default=32, ge=1)
    planes: int = Field(default=16, ge=1)
    layer_design: LayerDesign = LayerDesign.CROSS_IN
    variant: Variant = Variant.V3
    gwrp_decay: float = Field(default=0.99, gt=0.0, le=1.0)
    pos_weight_min: float = Field(default=0.1, gt=0.0)
    pos_weight_max: float = Field(default=10.0, gt=0.0)
    d_state: int = Field(default=16, ge=1)
    d_conv: int = Field(default=4, ge=1)
    bissm_shared: bool = False
    mamba_prenorm: bool = True
    localization_source: LocalizationSource = LocalizationSource.AUTO
    init_seed: int = 0

    @model_validator(mode="after")
    def _check_geometry(self) -> "ModelConfig":
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise ValueError(
                f"image extents {self.image_height}x{self.image_width} are not divisible "
                f"by patch size {self.patch_size}"
            )
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} is not divisible by heads {self.heads}")
        if self.grid_height != self.grid_width:
            raise ValueError(
                f"the conv head needs a square patch grid, got {self.grid_height}x{self.grid_width}"
            )
        if self.pos_weight_min > self.pos_weight_max:
            raise ValueError("pos_weight_min must not exceed pos_weight_max")
        if self.localization_source == LocalizationSource.C2P and not self.variant.has_attention:
            raise ValueError(f"variant {self.variant.value} has no attention to localize with (use auto or patch)")
        return self

    @property
    def grid_height(self) -> int:
        return self.image_height // self.patch_size

    @property
    def grid_width(self) -> int:
        return self.image_width // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_height * self.grid_width

    @property
    def grid_size(self) -> int:
        side = math.isqrt(self.num_patches)
        return side

    @property
    def localizes_with_attention(self) -> bool:
        if self.localization_source == LocalizationSource.AUTO:
            return self.variant.has_attention
        return self.localization_source == LocalizationSource.C2P


class TrainConfig(_Section):
    epochs: int = Field(default=20, ge=1)
    optimizer: OptimizerName = OptimizerName.SGD
    lr: float = Field(default=0.05, gt=0.0)
    min_lr: float = Field(default=0.0, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    batch_volumes: int = Field(default=16, ge=1)
    val_fraction: float = Field(default=0.2, ge=0.0, lt=1.0)
    cosine: bool = True
    warmup_epochs: int = Field(default=0, ge=0)


class DataConfig(_Section):
    volumes: int = Field(default=100, ge=1)
    test_volumes: int = Field(default=20, ge=0)
    depth: int = Field(default=32, ge=1)
    height: int = Field(default=32, ge=1)
    width: int = Field(default=32, ge=1)
    contrast: float = Field(default=0.4, gt=0.0, le=1.0)
    noise_sd: float = Field(default=0.1, ge=0.0)
    base_level: float = Field(default=0.2, ge=0.0, le=1.0)
    radius_min: float = Field(default=3.0, ge=1.0)
    radius_max: float = Field(default=8.0, ge=1.0)
    lesions: int = Field(default=1, ge=0)
    empty_fraction: float = Field(default=0.0, ge=0.0, le=1.0)
    distractors: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_radii(self) -> "DataConfig":
        if self.radius_min > self.radius_max:
            raise ValueError("radius_min must not exceed radius_max")
        return self


class InferConfig(_Section):
    threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    checkpoint: Literal["best", "final"] = "best"
    per_plane_norm: bool = False
    export_pgm: bool = False


class BenchConfig(_Section):
    plane_counts: List[int] = Field(default_factory=lambda: [2, 4, 8, 16, 32])
    trials: int = Field(default=5, ge=1)
    warmup: int = Field(default=1, ge=0)
    volumes_per_pass: int = Field(default=8, ge=1)
    total_planes: int = Field(default=32, ge=1)
    pin_cpu: bool = True

    @field_validator("plane_counts", mode="before")
    @classmethod
    def _split_counts(cls, v):
        if isinstance(v, str):
            return [int(x) for x in v.replace(" ", "").split(",") if x]
        return v

    @field_validator("plane_counts")
    @classmethod
    def _positive_counts(cls, v):
        if not v or any(n < 1 for n in v):
            raise ValueError("plane_counts must be a non-empty list of positive integers")
        return v


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    infer: InferConfig = Field(default_factory=InferConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    seed: int = 0


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "infer": InferConfig,
    "bench": BenchConfig,
}


def _key_owner() -> Dict[str, str]:
    owner = {"seed": ""}
    for section, model in _SECTIONS.items():
        for key in model.model_fields:
            if key in owner:
                raise RuntimeError(f"config key {key} is declared by two sections")
            owner[key] = section
    return owner


def parse_pairs(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    pairs: Dict[str, str] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        pairs[key] = value
    return pairs


def build_config(pairs: Dict[str, str]) -> ExperimentConfig:
    owner = _key_owner()
    grouped: Dict[str, Dict[str, str]] = {name: {} for name in _SECTIONS}
    seed: Optional[str] = None
    for key, value in pairs.items():
        if key not in owner:
            raise ConfigError(f"unknown config key: {key}")
        if key == "seed":
            seed = value
        else:
            grouped[owner[key]][key] = value
    try:
        sections = {name: _SECTIONS[name](**values) for name, values in grouped.items()}
        return ExperimentConfig(**sections, **({"seed": seed} if seed is not None else {}))
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Iterable[str]] = None,
) -> ExperimentConfig:
    """Read a ``key=value`` file and apply ``k=v`` overrides on top."""
    pairs: Dict[str, str] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        pairs.update(parse_pairs(text.splitlines(), source=str(path)))
    if overrides:
        pairs.update(parse_pairs(overrides, source="--override"))
    return build_config(pairs)


def _format_value(value) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def dump_section(section: BaseModel) -> str:
    return "".join(f"{key}={_format_value(getattr(section, key))}\n" for key in type(section).model_fields)


def write_model_config(model: ModelConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(dump_section(model), encoding="utf-8")
    return path


def read_model_config(path: Union[str, Path]) -> ModelConfig:
    path = Path(path)
    try:
        pairs = parse_pairs(path.read_text(encoding="utf-8").splitlines(), source=str(path))
    except OSError as e:
        raise ConfigError(f"cannot read model config {path}: {e}") from e
    unknown = sorted(set(pairs) - set(ModelConfig.model_fields))
    if unknown:
        raise ConfigError(f"unknown model config keys in {path}: {unknown}")
    try:
        return ModelConfig(**pairs)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


__all__ = [
    "BenchConfig",
    "DataConfig",
    "ExperimentConfig",
    "InferConfig",
    "LayerDesign",
    "LocalizationSource",
    "ModelConfig",
    "OptimizerName",
    "TrainConfig",
    "Variant",
    "build_config",
    "dump_section",
    "load_config",
    "parse_pairs",
    "read_model_config",
    "write_model_config",
]
