"""
Pydantic schemas for configuration and dataset validation
"""
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


class DegradationLevel(str, Enum):
    """Low-light intensity levels, lightest first"""
    LIGHT = "light"
    MODERATE = "moderate"
    DENSE = "dense"


class Split(str, Enum):
    """Dataset subsets"""
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class EnhanceVariant(str, Enum):
    """Pipeline variants used by the component ablation"""
    FULL = "full"
    NO_ESM = "no_esm"
    NO_CNM = "no_cnm"


class DegradationParams(BaseModel):
    """Parametric darkening: clamp(gain * img ** gamma + N(0, noise_sigma²))"""
    level: DegradationLevel
    gamma: float = Field(ge=1.0)
    gain: float = Field(gt=0.0, le=1.0)
    noise_sigma: float = Field(ge=0.0)


class DatasetEntry(BaseModel):
    """One manifest record; paths are relative to the manifest root"""
    low: str
    high: Optional[str] = None
    split: Split
    level: Optional[DegradationLevel] = None

    @model_validator(mode="after")
    def _paired_for_training(self) -> "DatasetEntry":
        if self.split in (Split.TRAIN, Split.VAL) and (self.high is None or self.level is None):
            raise ValueError(f"{self.split.value} entry {self.low!r} needs both a high path and a level")
        return self


class DatasetManifest(BaseModel):
    """Paired low/high dataset index"""
    root: str
    entries: List[DatasetEntry] = Field(default_factory=list)

    def by_split(self, split: Split) -> List[DatasetEntry]:
        return [e for e in self.entries if e.split == split]

    def paired(self, split: Split) -> List[DatasetEntry]:
        return [e for e in self.by_split(split) if e.high is not None]


class CnmConfig(BaseModel):
    """Conditional noise module (transformer noise predictor) architecture"""
    channels: int = Field(default=3, ge=1)
    base_channels: int = Field(default=32, ge=1)
    num_transformer_blocks: int = Field(default=2, ge=1)
    num_heads: int = Field(default=4, ge=1)
    timestep_embed_dim: int = Field(default=64, ge=1)
    condition_channels: int = Field(default=3, ge=1)

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "CnmConfig":
        if self.base_channels % self.num_heads:
            raise ValueError(
                f"base_channels ({self.base_channels}) must be divisible by num_heads ({self.num_heads})"
            )
        return self


class EsmConfig(BaseModel):
    """Edge sharpening module architecture"""
    channels: int = Field(default=3, ge=1)
    block_channels: int = Field(default=32, ge=1)
    dilation_rates: List[int] = Field(default_factory=lambda: [1, 2])
    num_heads: int = Field(default=4, ge=1)
    attention: str = "cross"
    attention_pool: int = Field(default=4, ge=1)

    @field_validator("dilation_rates")
    @classmethod
    def _rates_positive(cls, v: List[int]) -> List[int]:
        if not v or any(r < 1 for r in v):
            raise ValueError("dilation_rates must be non-empty and every rate >= 1")
        return v

    @field_validator("attention")
    @classmethod
    def _attention_kind(cls, v: str) -> str:
        if v not in ("cross", "self"):
            raise ValueError("attention must be 'cross' or 'self'")
        return v

    @model_validator(mode="after")
    def _heads_divide_width(self) -> "EsmConfig":
        if self.block_channels % self.num_heads:
            raise ValueError(
                f"block_channels ({self.block_channels}) must be divisible by num_heads ({self.num_heads})"
            )
        return self


class SamplerConfig(BaseModel):
    """Implicit sampler settings"""
    timesteps: int = Field(default=200, ge=2)
    steps: int = Field(default=5, ge=1)
    eta: float = Field(default=0.0, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _steps_within_chain(self) -> "SamplerConfig":
        if self.steps > self.timesteps:
            raise ValueError(f"steps ({self.steps}) cannot exceed timesteps ({self.timesteps})")
        return self

    @property
    def timestep_subsequence(self) -> List[int]:
        from trifuse.services.diffusion import make_subsequence
        return make_subsequence(self.timesteps, self.steps)


class MetricReport(BaseModel):
    """Per-image metric values and their arithmetic means"""
    metrics: List[str]
    per_image: Dict[str, Dict[str, float]] = Field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.per_image)

    @property
    def means(self) -> Dict[str, float]:
        names = sorted(self.per_image)
        out = {}
        for metric in self.metrics:
            values = [self.per_image[n][metric] for n in names]
            out[metric] = float(sum(values) / len(values)) if values else float("nan")
        return out
