import json
import os
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

import settings
from config.config import SEED_ENV
from config.interfaces import ConfigurationError


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScheduleConfig(Section):
    kind: Literal["linear", "cosine"] = settings.SCHEDULE_KIND
    T: int = Field(settings.DIFFUSION_STEPS, ge=1)
    beta_start: float = settings.BETA_START
    beta_end: float = settings.BETA_END
    subset_count: int = Field(settings.SUBSET_COUNT, ge=1)


class DiffusionConfig(Section):
    mode: Literal["x0", "x_t_minus_n"] = settings.PREDICTION_MODE
    n: int = Field(settings.XPREV_OFFSET, ge=1)
    noise_coeff: Literal["sqrt", "linear"] = settings.NOISE_COEFF


class LossConfig(Section):
    x1_every_step: bool = True
    mask_padding: bool = True


class EmbeddingConfig(Section):
    trainable: bool = False
    seed: int = 0


class ModelConfig(Section):
    """
    Denoiser shape.

    Arguments:
        layers: number of pre-norm transformer blocks.
        heads: attention heads, must divide d_word.
        d_word: caption embedding width.
        d_clip: condition feature width.
        fusion: "concat" appends condition tokens, "add" broadcast-adds them.
        max_len: caption length L, <bos>/<eos> included.
        vocab_size: filled from the vocab file when left at 0.
    """
    layers: int = Field(settings.LAYERS, ge=1)
    heads: int = Field(settings.HEADS, ge=1)
    d_word: int = Field(settings.D_WORD, ge=1)
    d_clip: int = Field(settings.D_CLIP, ge=1)
    fusion: Literal["concat", "add"] = settings.FUSION
    max_len: int = Field(settings.MAX_LEN, ge=3)
    vocab_size: int = Field(0, ge=0)
    ff_mult: int = Field(4, ge=1)
    dropout: float = Field(0.0, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def check_heads(self):
        if self.d_word % self.heads != 0:
            raise ValueError("d_word must be divisible by heads")
        return self


class GuidanceConfig(Section):
    enabled: bool = False
    p_uncond: float = Field(settings.P_UNCOND, ge=0.0, le=1.0)
    w: float = Field(settings.GUIDANCE_W, ge=0.0)
    use_text: bool = True


class TrainingConfig(Section):
    batch_size: int = Field(settings.BATCH_SIZE, ge=1)
    epochs_max: int = Field(settings.EPOCHS_MAX, ge=0)
    max_steps: Optional[int] = Field(None, ge=1)
    lr_kind: Literal["constant", "linear", "log", "cosine"] = settings.LR_KIND
    lr_start: float = Field(settings.LR_START, gt=0.0)
    lr_end: float = Field(settings.LR_END, gt=0.0)
    lambda_kind: Literal["constant", "dynamic"] = settings.LAMBDA_KIND
    lambda_value: float = Field(settings.LAMBDA_VALUE, ge=0.0)
    dynamic_C: float = Field(settings.DYNAMIC_C, ge=0.0)
    grad_clip: Optional[float] = Field(settings.GRAD_CLIP, gt=0.0)
    weight_decay: float = Field(settings.WEIGHT_DECAY, ge=0.0)
    early_stop: bool = True
    val_fraction: float = Field(settings.VAL_FRACTION, gt=0.0, lt=1.0)
    progress: bool = False
    seed: int = settings.SEED

    @model_validator(mode="after")
    def check_lr_range(self):
        if self.lr_start < self.lr_end:
            raise ValueError("lr_start must be >= lr_end")
        return self


class InferConfig(Section):
    stages: int = Field(settings.STAGES, ge=1)
    deterministic: bool = True
    dedup: bool = True
    reembed_between_stages: bool = False
    seed: int = settings.SEED


class DataConfig(Section):
    train: Optional[str] = None
    val: Optional[str] = None
    features: Optional[str] = None
    vocab: Optional[str] = None


class RunConfig(Section):
    schedule: ScheduleConfig = ScheduleConfig()
    diffusion: DiffusionConfig = DiffusionConfig()
    loss: LossConfig = LossConfig()
    embedding: EmbeddingConfig = EmbeddingConfig()
    model: ModelConfig = ModelConfig()
    guidance: GuidanceConfig = GuidanceConfig()
    training: TrainingConfig = TrainingConfig()
    infer: InferConfig = InferConfig()
    data: DataConfig = DataConfig()


def _first_error_field(e: ValidationError) -> str:
    errors = e.errors()
    if not errors:
        return "config"
    return ".".join(str(part) for part in errors[0]["loc"]) or "config"


def build_config(document: dict, overrides: dict = None) -> RunConfig:
    """
    Validate a config document, applying dotted-key overrides and the seed env var.

    Args:
        document: parsed JSON config, sections keyed by name
        overrides: {"section.key": value} pairs applied on top

    Returns:
        RunConfig: the validated, frozen config
    """
    merged = json.loads(json.dumps(document or {}))
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigurationError(dotted, "override keys must look like section.key")
        merged.setdefault(section, {})[key] = value
    seed_override = os.getenv(SEED_ENV)
    if seed_override is not None:
        try:
            merged.setdefault("training", {})["seed"] = int(seed_override)
        except ValueError:
            raise ConfigurationError(SEED_ENV, f"not an integer: {seed_override!r}")
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        field = _first_error_field(e)
        raise ConfigurationError(field, e.errors()[0]["msg"]) from e


def load_config(path: str | Path, overrides: dict = None) -> RunConfig:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError("config", f"file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigurationError("config", f"invalid JSON in {path}: {e}")
    return build_config(document, overrides)


def parse_overrides(pairs: list[str]) -> dict[str, Any]:
    """Turn ["training.seed=3", ...] into {"training.seed": 3}."""
    overrides = {}
    for pair in pairs or []:
        key, sep, raw = pair.partition("=")
        if not sep:
            raise ConfigurationError(pair, "expected section.key=value")
        try:
            overrides[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key.strip()] = raw
    return overrides
