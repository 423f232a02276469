"""Versioned run-configuration schema (YAML or JSON files)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .agents import ModelConfig, RunConfig
from .environments import ENVIRONMENTS, make_env
from .planner import PlannerConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Schema violation; the message lists offending field paths."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EnvSection(_Strict):
    name: str = "synthetic-linear"
    params: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("name")
    @classmethod
    def _known(cls, v):
        if v not in ENVIRONMENTS:
            raise ValueError(f"unknown environment {v!r}; choose from {sorted(ENVIRONMENTS)}")
        return v


class PlannerSection(_Strict):
    n_anchors: int = Field(2048, ge=1)
    n_mc: int = Field(1, ge=1)
    ridge: Optional[float] = Field(None, ge=0)
    clip_values: bool = True
    mesh_per_dim: int = Field(8, ge=0)
    n_features: int = Field(1024, ge=1)
    bandwidth: Optional[float] = Field(None, gt=0)


class ModelSection(_Strict):
    n_features: int = Field(64, ge=1)
    bandwidth: float = Field(1.0, gt=0)
    param_bound: Optional[float] = Field(None, gt=0)
    ridge: Optional[float] = Field(None, ge=0)
    prior_scale: float = Field(1.0, gt=0)
    noise_scale: float = Field(1.0, ge=0)


class RunSchema(_Strict):
    schema_version: int
    env: EnvSection = Field(default_factory=EnvSection)
    agent: Literal["ts", "ucb", "oracle", "ce"] = "ts"
    episodes: int = Field(ge=1)
    seed: int = Field(0, ge=0)
    planner: PlannerSection = Field(default_factory=PlannerSection)
    model: ModelSection = Field(default_factory=ModelSection)
    n_candidates: int = Field(8, ge=1)
    delta: float = Field(0.125, gt=0, lt=1)
    alpha: float = Field(0.01, ge=0)
    n_eval: int = Field(2000, ge=1)
    clip_regret: bool = False

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}; this build reads version {SCHEMA_VERSION}")
        return v


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "invalid config:\n  " + "\n  ".join(lines)


def parse_config(data: dict) -> RunSchema:
    if not isinstance(data, dict):
        raise ConfigError("invalid config: top level must be a mapping")
    try:
        return RunSchema.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path) -> RunSchema:
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_config(data)


def to_run_config(schema: RunSchema, seed: Optional[int] = None) -> RunConfig:
    try:
        env = make_env(schema.env.name, **schema.env.params)
    except TypeError as exc:
        raise ConfigError(f"invalid config:\n  env.params: {exc}") from None
    return RunConfig(
        env=env,
        episodes=schema.episodes,
        agent=schema.agent,
        planner=PlannerConfig(**schema.planner.model_dump()),
        model=ModelConfig(**schema.model.model_dump()),
        n_candidates=schema.n_candidates,
        delta=schema.delta,
        alpha=schema.alpha,
        n_eval=schema.n_eval,
        clip_regret=schema.clip_regret,
        seed=schema.seed if seed is None else seed,
    )
