"""
Run configuration schemas.

Config files are JSON or YAML documents whose keys mirror these models.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.config import runtime
from app.core.errors import ConfigError

logger = logging.getLogger(__name__)


class ModelConfig(BaseModel):
    """Network hyperparameters; defaults follow the full-size setting"""

    model_config = ConfigDict(extra="forbid")

    d_model: int = Field(256, ge=4)
    n_heads: int = Field(8, ge=1)
    n_sample_points: int = Field(4, ge=1)
    n_enc_layers: int = Field(6, ge=0)
    n_dec_layers: int = Field(6, ge=1)
    num_proposals: int = Field(100, ge=1)
    num_points: int = Field(25, ge=2)
    n_levels: int = Field(4, ge=1)
    vocab_size: int = Field(37, ge=1)
    ffn_dim: int = Field(1024, ge=1)
    stem_channels: Tuple[int, int, int] = (32, 64, 128)
    share_heads: bool = True
    share_point_embeddings: bool = False
    detach_reference: bool = True
    pe_temperature: float = Field(10000.0, gt=0)

    @model_validator(mode="after")
    def check_dims(self) -> "ModelConfig":
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if self.d_model % 4:
            raise ValueError(f"d_model ({self.d_model}) must be a multiple of 4 for coordinate encodings")
        return self

    @property
    def strides(self) -> List[int]:
        return [8 * 2 ** level for level in range(self.n_levels)]

    @property
    def coarsest_stride(self) -> int:
        return self.strides[-1]


class LossConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cls_weight: float = Field(1.0, ge=0)
    coord_weight: float = Field(1.0, ge=0)
    bd_weight: float = Field(0.5, ge=0)
    text_weight: float = Field(0.5, ge=0)
    focal_alpha: float = Field(0.25, ge=0, le=1)
    focal_gamma: float = Field(2.0, ge=0)
    aux_loss: bool = True
    match_text: bool = True
    ctc_penalty: float = Field(1e4, gt=0)


class AugmentPolicy(BaseModel):
    """Per-transform switches; everything off is the identity"""

    model_config = ConfigDict(extra="forbid")

    rotate: bool = False
    max_angle: float = Field(45.0, ge=0, le=180)
    line_max_angle: float = Field(90.0, ge=0, le=180)
    crop: bool = False
    crop_min_ratio: float = Field(0.6, gt=0, le=1)
    resize: bool = False
    resize_range: Tuple[float, float] = (0.8, 1.2)
    color_jitter: bool = False
    brightness: float = Field(0.2, ge=0, lt=1)
    contrast: float = Field(0.2, ge=0, lt=1)

    @field_validator("resize_range")
    @classmethod
    def check_resize_range(cls, value):
        low, high = value
        if not 0 < low <= high:
            raise ValueError(f"resize_range must satisfy 0 < low <= high, got {value}")
        return value

    @property
    def is_identity(self) -> bool:
        return not (self.rotate or self.crop or self.resize or self.color_jitter)


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    source: Literal["synthetic", "annotations"] = "synthetic"
    annotation_path: Optional[str] = None
    image_root: Optional[str] = None
    num_scenes: int = Field(32, ge=1)
    seed: int = 0
    holdout_scenes: int = Field(16, ge=0)
    holdout_seed: int = 100000
    canvas_size: int = Field(96, ge=16)
    image_size: int = Field(96, ge=16)
    min_instances: int = Field(1, ge=0)
    max_instances: int = Field(3, ge=0)
    min_chars: int = Field(2, ge=1)
    max_chars: int = Field(6, ge=1)
    glyph_height: Tuple[int, int] = (12, 16)
    max_bend: float = Field(0.25, ge=0, le=1)

    @model_validator(mode="after")
    def check_ranges(self) -> "DataConfig":
        if self.min_instances > self.max_instances:
            raise ValueError("min_instances exceeds max_instances")
        if self.min_chars > self.max_chars:
            raise ValueError("min_chars exceeds max_chars")
        if not 7 <= self.glyph_height[0] <= self.glyph_height[1]:
            raise ValueError(f"glyph_height must be an increasing pair >= 7, got {self.glyph_height}")
        if self.source == "annotations":
            if not self.annotation_path:
                raise ValueError("annotation_path is required when source is 'annotations'")
            if not Path(self.annotation_path).exists():
                raise ValueError(f"annotation file not found: {self.annotation_path}")
        if self.image_root and not Path(self.image_root).is_dir():
            raise ValueError(f"image_root is not a directory: {self.image_root}")
        return self


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "run"
    seed: int = 0
    iterations: int = Field(2000, ge=0)
    batch_size: int = Field(2, ge=1)
    lr: float = Field(1e-4, gt=0)
    backbone_lr_scale: float = Field(0.1, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    lr_decay_steps: List[int] = Field(default_factory=list)
    lr_decay_factor: float = Field(0.1, gt=0, le=1)
    clip_grad_norm: float = Field(1.0, ge=0)
    eval_every: int = Field(0, ge=0)
    checkpoint_every: int = Field(0, ge=0)
    score_threshold: float = Field(runtime.DEFAULT_SCORE_THRESHOLD, ge=0, le=1)
    line_mode: bool = False
    line_shift: float = Field(0.0, ge=0, le=1)
    line_shrink: float = Field(0.0, ge=0, le=1)
    finetune_iterations: int = Field(200, ge=0)
    precision: Literal["float32", "float64"] = "float32"
    output_dir: str = runtime.DEFAULT_OUTPUT_DIR
    init_checkpoint: Optional[str] = None

    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    augment: AugmentPolicy = Field(default_factory=AugmentPolicy)

    @model_validator(mode="after")
    def check_consistency(self) -> "RunConfig":
        if self.data.source == "synthetic":
            if self.data.max_instances > self.model.num_proposals:
                raise ValueError(
                    f"num_proposals ({self.model.num_proposals}) must cover max_instances ({self.data.max_instances})"
                )
            if self.data.max_chars > self.model.num_points - 2:
                raise ValueError(
                    f"max_chars ({self.data.max_chars}) must not exceed num_points - 2 ({self.model.num_points - 2})"
                )
            if self.model.vocab_size > 96:
                raise ValueError("synthetic glyph sets support at most 96 classes")
        if self.data.image_size < self.model.coarsest_stride:
            raise ValueError(f"image_size {self.data.image_size} smaller than the coarsest stride")
        if self.init_checkpoint and not Path(self.init_checkpoint).with_suffix(".json").exists():
            raise ValueError(f"init_checkpoint manifest not found: {self.init_checkpoint}")
        return self

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)


def _describe(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def parse_run_config(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {_describe(e)}") from e


def load_run_config(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Read a JSON/YAML run config, apply environment overrides, validate"""
    from app.core.providers.config_provider import EnvironmentConfigProvider

    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"could not parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at top level")
    data.update(EnvironmentConfigProvider().run_overrides())
    data.update(overrides or {})
    config = parse_run_config(data)
    logger.info(f"Loaded run config '{config.name}' from {path}")
    return config
