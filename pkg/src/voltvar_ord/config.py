"""Run configuration files (JSON) with strict schema validation."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .grid_model import FeederModel, ieee37, load_feeder
from .objective import ChanceConfig
from .trainer import TrainerConfig

BUILTIN_FEEDER = "builtin:ieee37"
BUILTIN_SCENARIOS = "builtin:benchmark"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GenerateSpec(_Strict):
    S: int = Field(80, ge=1)
    seed: int = 7
    profile: Literal["high_solar", "mixed", "evening_peak"] = "high_solar"


class ScenarioSource(_Strict):
    path: Optional[str] = None
    generate: Optional[GenerateSpec] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.path is None) == (self.generate is None):
            raise ValueError("scenarios need exactly one of 'path' or 'generate'")
        return self


class ChanceSection(_Strict):
    v_low: float = 0.97
    v_high: float = 1.03
    beta: float = Field(0.05, gt=0, le=1)
    gamma: float = Field(1e-4, gt=0)

    @model_validator(mode="after")
    def _band(self):
        if not self.v_low < self.v_high:
            raise ValueError("v_low must be below v_high")
        return self


class TrainerSection(_Strict):
    epsilon: float = Field(0.5, gt=0, lt=1)
    K: int = Field(1000, ge=0)
    mu_z: float = Field(0.001, ge=0)
    mu_z_decay: float = Field(0.99, gt=0, le=1)
    mu_lambda: float = Field(0.0015, ge=0)
    mu_lambda_decay: float = Field(0.99, gt=0, le=1)
    z_init: tuple[float, float, float, float] = (1.0, 0.01, 0.03, 1.5)
    optimizer: Literal["adam", "sgd"] = "adam"
    eq_tol: float = Field(1e-7, gt=0)
    tol_z: float = Field(1e-6, ge=0)
    batch_size: Optional[int] = Field(None, ge=1)
    seed: int = 0


class EvaluateSection(_Strict):
    rules: list[str] = ["none", "default"]
    hist_bins: int = Field(40, ge=1)
    hist_range: tuple[float, float] = (0.94, 1.08)


class RunConfig(_Strict):
    feeder: str = BUILTIN_FEEDER
    scenarios: ScenarioSource = ScenarioSource(generate=GenerateSpec())
    output_dir: str = "out"
    chance: ChanceSection = ChanceSection()
    trainer: TrainerSection = TrainerSection()
    evaluate: EvaluateSection = EvaluateSection()

    def chance_config(self) -> ChanceConfig:
        return ChanceConfig(**self.chance.model_dump())

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(**self.chance.model_dump(), **self.trainer.model_dump())

    def load_feeder(self, base: Path | None = None) -> FeederModel:
        if self.feeder == BUILTIN_FEEDER:
            return ieee37()
        return load_feeder(_resolve(self.feeder, base))

    def load_scenarios(self, feeder: FeederModel, base: Path | None = None):
        from . import scenarios as sc

        if self.scenarios.path is not None:
            if self.scenarios.path == BUILTIN_SCENARIOS:
                with resources.as_file(resources.files("voltvar_ord.data").joinpath("benchmark_scenarios.csv")) as p:
                    return sc.load(p)
            return sc.load(_resolve(self.scenarios.path, base))
        g = self.scenarios.generate
        return sc.generate_synthetic(feeder, g.S, g.seed, g.profile)


def _resolve(path: str, base: Path | None) -> Path:
    p = Path(path)
    if not p.is_absolute() and base is not None:
        p = base / p
    return p


def load_config(path: str | Path | None) -> RunConfig:
    """Parse and validate a config file; ``None`` gives the shipped benchmark."""
    if path is None:
        text = resources.files("voltvar_ord.data").joinpath("benchmark.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return RunConfig.model_validate(json.loads(text))
