"""JSON run configuration with a versioned schema.

Every section rejects unknown keys, and the validators build the library objects
eagerly so that anything a module would refuse later is refused at load time.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .core import RKSmoothError, TABLEAU_NAMES
from .enrts import EnRTSConfig
from .evaluate import L96_NOISE_LEVELS, METHODS, SYSTEMS, ExperimentConfig, SystemSpec
from .noise import NOISE_KINDS, NoiseSpec
from .objective import DEFAULT_LAMBDA, PENALTY_NORMS, FidelityPenalty
from .smoother import VARIANTS, SmootherConfig

SCHEMA_VERSION = 1
DEFAULT_LAMBDA_GRID = tuple(10.0**e for e in range(-18, -1, 2))
DEFAULT_ALPHA_GRID = tuple(10.0**e for e in (-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0))
NLS_RANK_LEVELS = (0.01, 0.05, 0.1, 0.25, 0.5, 1.0)


class ConfigError(RKSmoothError, ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _check(build):
    try:
        return build()
    except RKSmoothError as exc:
        raise ValueError(str(exc)) from exc


class SystemSection(_Strict):
    name: Literal[SYSTEMS]
    theta: list[float] | None = None
    free: list[bool] | None = None
    theta_init: list[float] | None = None
    theta_init_factor: float = 1.25
    dim: int | None = Field(None, ge=4)
    npts: int | None = Field(None, ge=8)
    x0: list[float] | None = None
    spinup: int = Field(1000, ge=0)

    @model_validator(mode="after")
    def _consistent(self):
        model = _check(self.spec().model)
        for name in ("free", "theta_init"):
            val = getattr(self, name)
            if val is not None and len(val) != model.q:
                raise ValueError(f"{name} needs {model.q} entries")
        if self.x0 is not None and len(self.x0) != model.n:
            raise ValueError(f"x0 needs {model.n} entries")
        return self

    def spec(self, steps: int | None = None, h: float | None = None) -> SystemSpec:
        return SystemSpec(
            name=self.name,
            theta=None if self.theta is None else tuple(self.theta),
            steps=steps,
            h=h,
            dim=self.dim,
            npts=self.npts,
            x0=None if self.x0 is None else tuple(self.x0),
            spinup=self.spinup,
            theta_init=None if self.theta_init is None else tuple(self.theta_init),
            theta_init_factor=self.theta_init_factor,
        )

    def model(self):
        model = self.spec().model()
        if self.free is not None:
            model = model.with_free(np.array(self.free, dtype=bool))
        return model


class SimulationSection(_Strict):
    h: float | None = Field(None, gt=0)
    steps: int | None = Field(None, ge=1)


class NoiseSection(_Strict):
    kind: Literal[NOISE_KINDS] = "white"
    level: float = Field(1.0, ge=0)
    mu: list[float] | float | None = None
    rho: float = 0.75
    tail_df: float = 3.0

    @model_validator(mode="after")
    def _valid(self):
        self.spec()
        return self

    def spec(self, seed: int = 0) -> NoiseSpec:
        mu = tuple(self.mu) if isinstance(self.mu, list) else self.mu
        return _check(lambda: NoiseSpec(self.kind, self.level, mu, self.rho, self.tail_df, seed))


class PenaltySection(_Strict):
    norm: Literal[PENALTY_NORMS] = "l2_squared"
    lam: float = Field(DEFAULT_LAMBDA, ge=0)


class SmootherSection(_Strict):
    tableau: Literal[TABLEAU_NAMES] = "rk4_classical"
    penalty: PenaltySection = PenaltySection()
    window: int = 7
    memory: int = Field(10, ge=1)
    max_iter: int = Field(50_000, ge=0)
    grad_tol: float = Field(1e-8, gt=0)
    cost_tol: float = Field(1e-12, gt=0)
    variant: Literal[VARIANTS] = "stage_state"
    alpha: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _valid(self):
        self.build()
        return self

    def build(self, theta_init=None) -> SmootherConfig:
        return _check(lambda: SmootherConfig(
            tableau=self.tableau,
            penalty=FidelityPenalty(self.penalty.norm, self.penalty.lam),
            window=self.window,
            memory=self.memory,
            max_iter=self.max_iter,
            grad_tol=self.grad_tol,
            cost_tol=self.cost_tol,
            variant=self.variant,
            alpha=self.alpha,
            theta_init=None if theta_init is None else tuple(theta_init),
        ))


class EnRTSSection(_Strict):
    ensemble_size: int = Field(500, ge=2)
    process_scale: float | None = Field(None, ge=0)
    obs_variance: float | None = Field(None, ge=0)
    initial_variance: float | None = Field(None, ge=0)

    def build(self) -> EnRTSConfig:
        return _check(lambda: EnRTSConfig(self.ensemble_size, self.process_scale, self.obs_variance,
                                          None, self.initial_variance))


class SweepSection(_Strict):
    lambdas: list[float] = Field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
    norms: list[Literal[PENALTY_NORMS]] = Field(default_factory=lambda: list(PENALTY_NORMS))
    alphas: list[float] = Field(default_factory=lambda: list(DEFAULT_ALPHA_GRID))

    @field_validator("lambdas")
    @classmethod
    def _lams(cls, v):
        if not v or any(not np.isfinite(x) or x < 0 for x in v):
            raise ValueError("lambdas must be a non-empty list of non-negative numbers")
        return v

    @field_validator("alphas")
    @classmethod
    def _alphas(cls, v):
        if not v or any(not np.isfinite(x) or x <= 0 for x in v):
            raise ValueError("alphas must be a non-empty list of positive numbers")
        return v


class RankSection(_Strict):
    levels: list[float] = Field(default_factory=lambda: list(NLS_RANK_LEVELS))
    threshold: float = Field(0.99, gt=0, le=1)


class RunConfig(_Strict):
    schema_version: Literal[SCHEMA_VERSION]
    system: SystemSection = SystemSection(name="lorenz63")
    simulation: SimulationSection = SimulationSection()
    noise: NoiseSection = NoiseSection()
    noises: list[NoiseSection] | None = None
    smoother: SmootherSection = SmootherSection()
    enrts: EnRTSSection = EnRTSSection()
    methods: list[Literal[METHODS]] = Field(default_factory=lambda: list(METHODS))
    seeds: list[int] = Field(default_factory=lambda: [0])
    trim: float = Field(0.05, ge=0, lt=1)
    input: str | None = None
    reference: str | None = None
    output_dir: str | None = None
    sweep: SweepSection = SweepSection()
    rank: RankSection = RankSection()

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if not v or any(s < 0 or s >= 2**64 for s in v):
            raise ValueError("seeds must be a non-empty list of unsigned 64-bit integers")
        return v

    def system_spec(self) -> SystemSpec:
        return self.system.spec(self.simulation.steps, self.simulation.h)

    def noise_specs(self) -> list[NoiseSpec]:
        return [n.spec() for n in (self.noises or [self.noise])]

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig(self.smoother.build(), self.enrts.build(), self.trim)


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a JSON run configuration; any problem raises ConfigError."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def json_schema() -> dict:
    return RunConfig.model_json_schema()


__all__ = ["RunConfig", "ConfigError", "load_config", "json_schema", "SCHEMA_VERSION", "L96_NOISE_LEVELS"]
