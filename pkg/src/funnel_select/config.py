"""Declarative experiment configuration.

Precedence, lowest first: built-in defaults, per-problem defaults, the JSON
config file, command-line flags.
"""

from __future__ import annotations

import json
import math
from pathlib import Path as FsPath
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .functionals import Enumeration, TruncationBudget

PROBLEMS = ("clairaut", "sqrt_abs", "riccati_blowup", "synthetic_tree")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Section):
    t_start: float = 0.0
    delta: float = 0.25
    n_steps: int = 12

    @field_validator("delta")
    @classmethod
    def _positive(cls, v: float) -> float:
        if not v > 0 or not math.isfinite(v):
            raise ValueError("must be a positive finite step")
        return v

    @field_validator("n_steps")
    @classmethod
    def _steps(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @property
    def t_end(self) -> float:
        return self.t_start + self.n_steps * self.delta


class ReductionConfig(_Section):
    n_max: int = Field(500, ge=0)
    eta_tie: float = Field(1e-12, ge=0)
    eps_singleton: float = Field(1e-6, gt=0)
    refine: int = Field(8, ge=1)
    max_paths: int = Field(1 << 15, ge=1)


class BudgetConfig(_Section):
    horizon_T: Optional[float] = Field(None, gt=0)
    epsilon_tail: Optional[float] = Field(None, gt=0)


class PhiConfig(_Section):
    family: Literal["bumps", "sigmoids", "mixed"] = "sigmoids"
    sign_first: Literal[1, -1] = 1
    lambda_height: int = Field(3, ge=1)

    def enumeration(self, dim: int = 1) -> Enumeration:
        return Enumeration(self.family, dim, self.lambda_height, self.sign_first)


class SampleConfig(_Section):
    seed: int = 0
    n_nodes: int = Field(20, ge=1)
    n_triples: int = Field(100, ge=0)
    axiom_steps: int = Field(6, ge=1)
    root: Optional[list[float]] = None
    dump_node: Optional[list[float]] = None


class LocalConfig(_Section):
    delta: float = Field(0.01, gt=0)
    guard_gap: float = Field(1e-3, gt=0)
    anchors: list[float] = Field(default_factory=lambda: [-1.0, 0.0, 0.5, 1.0, 2.0])
    t_blow: float = Field(3.1, gt=0)


class ExperimentConfig(_Section):
    problem: Literal["clairaut", "sqrt_abs", "riccati_blowup", "synthetic_tree"] = "clairaut"
    grid: GridConfig = Field(default_factory=GridConfig)
    reduction: ReductionConfig = Field(default_factory=ReductionConfig)
    budget: BudgetConfig = Field(default_factory=BudgetConfig)
    phi: PhiConfig = Field(default_factory=PhiConfig)
    samples: SampleConfig = Field(default_factory=SampleConfig)
    local: LocalConfig = Field(default_factory=LocalConfig)

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        g = self.grid
        if self.budget.horizon_T is not None:
            pos = self.budget.horizon_T / g.delta
            if abs(pos - round(pos)) > 1e-9 * max(1.0, pos) or round(pos) > g.n_steps:
                raise ValueError("budget.horizon_T must be a whole number of grid.delta steps within the grid")
        if self.budget.epsilon_tail is not None:
            budget = TruncationBudget(self.horizon, self.budget.epsilon_tail)
            missing = [str(l) for l in self.phi.enumeration().lambdas if not budget.covers(float(l))]
            if missing:
                raise ValueError(f"budget.epsilon_tail does not cover lambda in {missing}")
        return self

    @property
    def horizon(self) -> float:
        return self.budget.horizon_T if self.budget.horizon_T is not None else self.grid.n_steps * self.grid.delta

    @property
    def dim(self) -> int:
        return 2 if self.problem == "synthetic_tree" else 1

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")


def _format_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "invalid config: " + "; ".join(parts)


def _deep_update(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


PROBLEM_DEFAULTS: dict[str, dict[str, Any]] = {
    "clairaut": {"grid": {"t_start": 0.0, "delta": 0.25, "n_steps": 12}},
    "sqrt_abs": {"grid": {"t_start": 0.0, "delta": 0.25, "n_steps": 12}},
    "riccati_blowup": {"grid": {"t_start": 0.0, "delta": 0.25, "n_steps": 12}},
    "synthetic_tree": {"grid": {"t_start": 0.0, "delta": 0.25, "n_steps": 5}},
}


def build_config(data: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Validate ``data`` (file contents) with ``overrides`` (flags) on top of per-problem defaults."""
    merged = _deep_update(data or {}, overrides or {})
    problem = merged.get("problem", "clairaut")
    base = PROBLEM_DEFAULTS.get(problem, {}) if isinstance(problem, str) else {}
    try:
        return ExperimentConfig.model_validate(_deep_update(base, merged))
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None


def load_config(path: str | FsPath | None = None, overrides: dict | None = None) -> ExperimentConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(FsPath(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    return build_config(data, overrides)
