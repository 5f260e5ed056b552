"""Experiment configuration, ablation arms, and logging setup."""
import logging
import os
import sys
from enum import StrEnum
from pathlib import Path
from typing import Any

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from structalign.exceptions import ConfigError

logger = logging.getLogger("structalign")

LOG_ENV_VAR = "SALN_LOG"
LOG_LEVELS = {
    "error": logging.ERROR,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'


class AblationArm(StrEnum):
    FRAMEWORK = "framework"
    CRP = "crp"
    CETF = "cetf"
    FULL = "full"
    # upper bound: all tasks trained jointly
    JOINT = "joint"


ABLATION_GRID = (AblationArm.FRAMEWORK, AblationArm.CRP, AblationArm.CETF, AblationArm.FULL)


class ExperimentConfig(BaseModel):
    """Every knob of one continual run. Built from a flat key-value file."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    # task stream
    k_tasks: int = Field(5, ge=1)
    cats_per_task: int = Field(4, ge=1)
    shots: int = Field(16, ge=1)
    test_per_category: int = Field(16, ge=1)
    n_tokens: int = Field(8, ge=1)
    n_frames: int = Field(4, ge=1)
    latent_dim: int = Field(32, ge=1)
    # trailing latent coordinates reserved for instance offsets; 0 shares the whole space
    instance_dim: int = Field(8, ge=0)
    token_noise: float = Field(0.05, ge=0)
    frame_noise: float = Field(0.05, ge=0)
    instance_noise: float = Field(0.5, ge=0)
    modality_gap: float = Field(0.5, ge=0)
    # per-task perturbation of both modality maps
    task_shift: float = Field(0.3, ge=0)

    # optimization
    epochs: int = Field(20, ge=0)
    batch: int = Field(32, ge=1)
    lr_base: float = Field(2e-3, ge=0)
    lr_incr: float = Field(1e-3, ge=0)

    # objective
    lambda1: float = Field(0.1, ge=0)
    lambda2: float = Field(10.0, ge=0)
    tau: float = Field(0.07, gt=0)
    tau2: float = Field(0.1, gt=0)
    sigma: float = Field(0.1, ge=0)
    pseudo_per_category: int = Field(2, ge=0)
    crp_symmetric: bool = True

    # encoders
    layers: int = Field(2, ge=1)
    experts: int = Field(4, ge=1)
    k_e: int = Field(2, ge=1)
    lora_rank: int = Field(4, ge=1)
    dims: tuple[int, int] = (32, 32)

    seed: int = 0
    ablation: AblationArm = AblationArm.FULL

    @field_validator("dims", mode="before")
    @classmethod
    def _parse_dims(cls, value: Any) -> Any:
        if isinstance(value, str):
            parts = [p.strip() for p in value.split(",") if p.strip()]
            if len(parts) != 2:
                raise ValueError("dims must be written 'D,d'")
            return tuple(int(p) for p in parts)
        return value

    @model_validator(mode="after")
    def _check_cross_fields(self) -> "ExperimentConfig":
        token_width, proto_dim = self.dims
        if token_width < 2 or proto_dim < 2:
            raise ValueError("dims must both be >= 2")
        if self.k_e > self.experts:
            raise ValueError(f"k_e={self.k_e} exceeds experts={self.experts}")
        if self.lora_rank > token_width // 2:
            raise ValueError(f"lora_rank={self.lora_rank} exceeds D/2={token_width // 2}")
        if self.total_categories < 2:
            raise ValueError(f"the stream needs at least 2 categories, got C={self.total_categories}")
        if self.latent_dim > token_width:
            raise ValueError(f"latent_dim={self.latent_dim} exceeds token width D={token_width}")
        if self.instance_dim >= self.latent_dim:
            raise ValueError(f"instance_dim={self.instance_dim} must be smaller than latent_dim={self.latent_dim}")
        if proto_dim < self.total_categories:
            raise ValueError(
                f"prototype dimension d={proto_dim} is smaller than the category count C={self.total_categories}"
            )
        return self

    @property
    def token_width(self) -> int:
        return self.dims[0]

    @property
    def proto_dim(self) -> int:
        return self.dims[1]

    @property
    def total_categories(self) -> int:
        return self.k_tasks * self.cats_per_task

    def echo(self) -> dict[str, Any]:
        """Config as plain JSON-serializable values."""
        data = self.model_dump(mode="json")
        data["dims"] = f"{self.dims[0]},{self.dims[1]}"
        return data


class LossConfig(BaseModel):
    """Weights and temperatures of the composite objective."""

    model_config = ConfigDict(frozen=True)

    lambda1: float = Field(0.1, ge=0)
    lambda2: float = Field(10.0, ge=0)
    tau: float = Field(0.07, gt=0)
    tau2: float = Field(0.1, gt=0)
    sigma: float = Field(0.1, ge=0)
    pseudo_per_category: int = Field(2, ge=0)
    crp_symmetric: bool = True

    @classmethod
    def from_experiment(cls, config: ExperimentConfig) -> "LossConfig":
        return cls(
            lambda1=config.lambda1,
            lambda2=config.lambda2,
            tau=config.tau,
            tau2=config.tau2,
            sigma=config.sigma,
            pseudo_per_category=config.pseudo_per_category,
            crp_symmetric=config.crp_symmetric,
        )


def parse_config(values: dict[str, Any]) -> ExperimentConfig:
    """Validate raw key-value pairs into an ExperimentConfig."""
    empty = sorted(key for key, value in values.items() if value is None or value == "")
    if empty:
        raise ConfigError(f"Config keys without a value: {', '.join(empty)}")
    try:
        return ExperimentConfig(**values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid config: {problems}")


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    """Read a flat KEY=value config file (``#`` comments allowed)."""
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"Config file not found: {config_path}")
    try:
        values = dotenv_values(config_path, encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"Failed to read config {config_path}: {e}")
    return parse_config(dict(values))


def apply_ablation(config: ExperimentConfig, arm: AblationArm | str) -> ExperimentConfig:
    """Return a copy of config with the arm's lambda overrides applied."""
    try:
        arm = AblationArm(arm)
    except ValueError:
        raise ConfigError(f"Unknown ablation arm: {arm}")
    overrides: dict[str, Any] = {"ablation": arm}
    if arm == AblationArm.FRAMEWORK:
        overrides.update(lambda1=0.0, lambda2=0.0)
    elif arm == AblationArm.CRP:
        overrides.update(lambda1=0.0)
    elif arm == AblationArm.CETF:
        overrides.update(lambda2=0.0)
    return config.model_copy(update=overrides)


def resolve_log_level(value: str | None) -> int:
    if not value:
        return logging.INFO
    level = LOG_LEVELS.get(value.strip().lower())
    if level is None:
        logger.warning(f"Unknown {LOG_ENV_VAR}={value!r}; falling back to info")
        return logging.INFO
    return level


def configure_logging() -> logging.Logger:
    """Attach a single stderr handler to the package logger; safe to call repeatedly."""
    load_dotenv()
    level = resolve_log_level(os.getenv(LOG_ENV_VAR))
    logger.setLevel(level)
    if not any(getattr(h, "_structalign_handler", False) for h in logger.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
        handler._structalign_handler = True
        logger.addHandler(handler)
    return logger
