"""
Configuration settings for TriFuse

``Settings`` holds process-level knobs read from the environment (``TRIFUSE_*``)
and ``.env``. ``RunConfig`` holds every run tunable; it is built from defaults,
then a flat ``key = value`` file, then command-line overrides.
"""
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from trifuse import __version__
from trifuse.core.exceptions import ConfigError
from trifuse.models.schemas import (
    CnmConfig,
    DegradationLevel,
    DegradationParams,
    EsmConfig,
    SamplerConfig,
)


class Settings(BaseSettings):
    """Application settings"""

    APP_NAME: str = "TriFuse"
    APP_VERSION: str = __version__
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    # Parallelism cap for directory-mode enhance/eval
    THREADS: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)

    model_config = SettingsConfigDict(
        env_prefix="TRIFUSE_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


settings = Settings()


class RunConfig(BaseModel):
    """Every tunable of a run, flat, with defaults"""

    model_config = ConfigDict(extra="forbid")

    seed: int = 42

    # Degradation presets (gamma, gain, noise sigma per level)
    light_gamma: float = 1.5
    light_gain: float = 0.7
    light_sigma: float = 0.01
    moderate_gamma: float = 2.2
    moderate_gain: float = 0.45
    moderate_sigma: float = 0.02
    dense_gamma: float = 3.0
    dense_gain: float = 0.25
    dense_sigma: float = 0.03

    # Manifest split
    train_frac: float = Field(default=0.8, ge=0.0, le=1.0)
    val_frac: float = Field(default=0.2, ge=0.0, le=1.0)

    # Wavelet
    wavelet_levels: int = Field(default=1, ge=1, le=3)

    # Noise schedule
    timesteps: int = Field(default=200, ge=2)
    beta_start: float = 1e-4
    beta_end: float = 0.02

    # Implicit sampler
    sampling_steps: int = Field(default=5, ge=1)
    eta: float = Field(default=0.0, ge=0.0, le=1.0)

    # Network
    channels: int = Field(default=3, ge=1)
    base_channels: int = Field(default=32, ge=1)
    num_transformer_blocks: int = Field(default=2, ge=1)
    num_heads: int = Field(default=4, ge=1)
    timestep_embed_dim: int = Field(default=64, ge=1)
    esm_block_channels: int = Field(default=32, ge=1)
    esm_dilations: List[int] = Field(default_factory=lambda: [1, 2])
    esm_heads: int = Field(default=4, ge=1)
    esm_attention: str = "cross"
    esm_attention_pool: int = Field(default=4, ge=1)

    # Training (desk scale; full scale is batch 12, patch 256)
    batch_size: int = Field(default=4, ge=1)
    patch_size: int = Field(default=64, ge=8)
    iters: int = Field(default=500, ge=0)
    learning_rate: float = Field(default=1e-4, gt=0.0)
    decay_factor: float = Field(default=0.8, gt=0.0, le=1.0)
    decay_every: int = Field(default=5000, ge=1)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    loss_lambda: float = Field(default=0.1, ge=0.0)
    log_every: int = Field(default=10, ge=1)
    checkpoint_every: int = Field(default=500, ge=1)

    # Quality assessment
    niqe_patch: int = Field(default=32, ge=8)

    @field_validator("esm_dilations", mode="before")
    @classmethod
    def _split_list(cls, v: Any) -> Any:
        if isinstance(v, str):
            return [int(part) for part in v.replace(" ", "").split(",") if part]
        return v

    @model_validator(mode="after")
    def _check_invariants(self) -> "RunConfig":
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise ValueError("need 0 < beta_start <= beta_end < 1")
        if self.sampling_steps > self.timesteps:
            raise ValueError("sampling_steps cannot exceed timesteps")
        if self.train_frac + self.val_frac > 1.0 + 1e-12:
            raise ValueError("train_frac + val_frac must not exceed 1")
        if self.patch_size % self.size_multiple:
            raise ValueError(
                f"patch_size must be a multiple of {self.size_multiple} "
                f"(wavelet_levels={self.wavelet_levels}, esm_attention_pool={self.esm_attention_pool})"
            )
        if self.niqe_patch % 2:
            raise ValueError("niqe_patch must be even")
        presets = [self.degradation_params(level) for level in DegradationLevel]
        for lighter, darker in zip(presets, presets[1:]):
            if not (darker.gamma >= lighter.gamma and darker.gain <= lighter.gain):
                raise ValueError(f"preset {darker.level.value} must darken at least as much as {lighter.level.value}")
            if darker.gamma == lighter.gamma and darker.gain == lighter.gain:
                raise ValueError(f"preset {darker.level.value} must darken strictly more than {lighter.level.value}")
        # Constructing the sub-configs runs their own validators
        self.cnm_config()
        self.esm_config()
        return self

    @property
    def min_image_size(self) -> int:
        """Smallest image side the model accepts (the CNM downsamples A_k twice)"""
        return 2 ** self.wavelet_levels * 4

    @property
    def size_multiple(self) -> int:
        """Spatial multiple inputs are padded to: CNM strides on A_k and ESM pooling on level-1 bands"""
        return math.lcm(self.min_image_size, 2 * self.esm_attention_pool)

    def degradation_params(self, level: Union[DegradationLevel, str]) -> DegradationParams:
        level = DegradationLevel(level)
        prefix = level.value
        return DegradationParams(
            level=level,
            gamma=getattr(self, f"{prefix}_gamma"),
            gain=getattr(self, f"{prefix}_gain"),
            noise_sigma=getattr(self, f"{prefix}_sigma"),
        )

    def cnm_config(self) -> CnmConfig:
        return CnmConfig(
            channels=self.channels,
            base_channels=self.base_channels,
            num_transformer_blocks=self.num_transformer_blocks,
            num_heads=self.num_heads,
            timestep_embed_dim=self.timestep_embed_dim,
            condition_channels=self.channels,
        )

    def esm_config(self) -> EsmConfig:
        return EsmConfig(
            channels=self.channels,
            block_channels=self.esm_block_channels,
            dilation_rates=list(self.esm_dilations),
            num_heads=self.esm_heads,
            attention=self.esm_attention,
            attention_pool=self.esm_attention_pool,
        )

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(timesteps=self.timesteps, steps=self.sampling_steps, eta=self.eta)


def parse_config_text(text: str) -> Dict[str, str]:
    """
    Parse a flat ``key = value`` document

    Args:
        text: File content; ``#`` starts a comment

    Returns:
        Mapping of keys to raw string values
    """
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Build a RunConfig: defaults < config file < overrides

    Args:
        path: Optional config file
        overrides: Values from command-line flags; ``None`` entries are skipped

    Returns:
        Validated RunConfig
    """
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text(encoding="utf-8")))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return build_run_config(values)


def build_run_config(values: Mapping[str, Any]) -> RunConfig:
    """Validate a mapping into a RunConfig, raising ConfigError on any problem"""
    try:
        return RunConfig(**dict(values))
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"invalid configuration: {problems}") from e
