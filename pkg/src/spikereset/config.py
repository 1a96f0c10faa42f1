"""Experiment configuration (JSON on disk, validated with pydantic)."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

__all__ = ["ConfigError", "ModelSpec", "ExperimentConfig", "load_config", "config_hash"]


class ConfigError(ValueError):
    pass


Rect = Tuple[Tuple[float, float], Tuple[float, float]]


class ModelSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    family: str = "linear"
    params: List[float] = Field(default_factory=lambda: [1.0, -1.0, 1.0])


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: ModelSpec = Field(default_factory=ModelSpec)
    eps: List[float] = Field(default_factory=lambda: [1e-2, 1e-3, 1e-4])
    beta: float = 0.49
    seed: int = 20240601
    replicas: int = 100_000
    horizon: float = 2.0
    rectangles: List[Rect] = Field(default_factory=lambda: [((0.0, 2.0), (0.5, 1.0))])
    sigma: List[float] = Field(default_factory=lambda: [0.0, 0.3, 1.0, 3.0])
    z: List[float] = Field(default_factory=lambda: [0.0, 0.5, 1.0])
    windows: List[Tuple[float, float]] = Field(default_factory=lambda: [(0.5, 1.0), (0.25, 0.5)])
    grid_n: int = 2000
    out: str = "out"
    # suite-specific knobs
    e1_eps: List[float] = Field(default_factory=lambda: [1e-2, 1e-3, 1e-4])
    transform_eps: List[float] = Field(default_factory=lambda: [1e-2, 1e-3, 1e-4, 1e-5])
    asymptotic_eps: List[float] = Field(default_factory=lambda: [1e-3, 1e-4, 1e-5, 1e-6])
    roundtrip_eps: List[float] = Field(default_factory=lambda: [1e-2, 1e-4])
    counts_eps: float = 1e-3
    accepted: int = 10_000
    phi_replicas: int = 20_000
    tightness_replicas: int = 10_000
    independence_pairs: List[Tuple[Rect, Rect]] = Field(default_factory=lambda: [
        (((0.0, 1.0), (0.5, 0.7)), ((1.0, 2.0), (0.8, 1.0))),
        (((0.0, 2.0), (0.5, 0.7)), ((0.0, 2.0), (0.8, 1.0))),
    ])
    limit_eps: float = 1e-4
    limit_accepted: int = 5000
    alpha: float = 1.0 / 6.0
    x_points: List[float] = Field(default_factory=lambda: [0.3, 0.7, 0.95])
    intensity_params: List[float] = Field(default_factory=lambda: [2.0, -1.0, 1.0])
    intensity_eps: float = 1e-4
    intensity_t: float = 1.0
    intensity_accepted: int = 2000
    limit_constant: Optional[float] = None

    @field_validator("eps", "e1_eps", "transform_eps", "asymptotic_eps", "roundtrip_eps")
    @classmethod
    def _eps(cls, v):
        if not v:
            raise ValueError("eps list is empty")
        if any(not (0 < e < 1) for e in v):
            raise ValueError("eps values must lie in (0, 1)")
        return v

    @field_validator("beta")
    @classmethod
    def _beta(cls, v):
        if not 0 < v < 0.5:
            raise ValueError("beta must lie in (0, 1/2)")
        return v

    @field_validator("seed")
    @classmethod
    def _seed(cls, v):
        if not 0 <= v < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return v

    @field_validator("replicas", "accepted", "intensity_accepted", "grid_n", "phi_replicas",
                     "tightness_replicas", "limit_accepted")
    @classmethod
    def _positive(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("horizon")
    @classmethod
    def _horizon(cls, v):
        if v < 0:
            raise ValueError("horizon must be non-negative")
        return v

    @field_validator("sigma")
    @classmethod
    def _sigma(cls, v):
        if any(s < 0 for s in v):
            raise ValueError("sigma values must be non-negative")
        return v

    @model_validator(mode="after")
    def _rects(self):
        for (s1, s2), (a, b) in self.rectangles:
            if not (0 <= s1 <= s2):
                raise ValueError(f"bad time window ({s1}, {s2}]")
            if not (0 < a <= b <= 1):
                raise ValueError(f"bad space window [{a}, {b}]")
        for pair in self.independence_pairs:
            for (s1, s2), (a, b) in pair:
                if not (0 <= s1 <= s2) or not (0 < a <= b <= 1):
                    raise ValueError(f"bad independence rectangle (({s1}, {s2}], [{a}, {b}])")
        for e in (self.counts_eps, self.limit_eps, self.intensity_eps):
            if not 0 < e < 1:
                raise ValueError("eps values must lie in (0, 1)")
        for a, b in self.windows:
            if not (0 < a <= b <= 1):
                raise ValueError(f"bad window [{a}, {b}]")
        return self


def load_config(path: Optional[str | Path] = None, **overrides) -> ExperimentConfig:
    """Read and validate a JSON config; ``overrides`` replace top-level keys."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        except OSError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
