"""Runge-Kutta denoising: initialize, minimize, unpack."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import DynamicsModel, InvalidData, RKSmoothError, Trajectory, make_tableau
from .lbfgs import LBFGSOptions, LineSearchFailed, lbfgs_minimize
from .objective import DecisionVector, FidelityPenalty, NonFiniteResidual, RKDObjective, VelocityObjective

__all__ = [
    "SmootherConfig",
    "SmoothResult",
    "DivergedSmoothing",
    "InvalidConfig",
    "initialize",
    "lbfgs_minimize",
    "smooth",
]

VARIANTS = ("stage_state", "velocity_space")


class InvalidConfig(RKSmoothError, ValueError):
    pass


class DivergedSmoothing(RKSmoothError):
    pass


@dataclass(frozen=True)
class SmootherConfig:
    tableau: str = "rk4_classical"
    penalty: FidelityPenalty = field(default_factory=FidelityPenalty)
    window: int = 7
    memory: int = 10
    max_iter: int = 50_000
    grad_tol: float = 1e-8
    cost_tol: float = 1e-12
    variant: str = "stage_state"
    alpha: float = 1.0
    theta_init: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise InvalidConfig("init window must be a positive odd integer")
        if self.memory < 1 or self.max_iter < 0:
            raise InvalidConfig("memory must be positive and max_iter non-negative")
        if not (self.grad_tol > 0 and self.cost_tol > 0):
            raise InvalidConfig("tolerances must be positive")
        if self.variant not in VARIANTS:
            raise InvalidConfig(f"unknown variant {self.variant!r}")
        if not self.alpha > 0:
            raise InvalidConfig("alpha must be positive")
        make_tableau(self.tableau)

    def lbfgs_options(self) -> LBFGSOptions:
        return LBFGSOptions(memory=self.memory, max_iter=self.max_iter, grad_tol=self.grad_tol,
                            cost_tol=self.cost_tol)


@dataclass
class SmoothResult:
    states: Trajectory
    theta: np.ndarray
    iterations: int
    cost: float
    grad_norm: float
    reason: str
    evaluations: int = 0
    seconds: float = 0.0
    line_search_failed: bool = False
    cost_history: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.reason in ("grad_tol", "cost_tol")


def moving_average(Y: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average, window shrunk symmetrically near the ends."""
    if window == 1:
        return np.array(Y, dtype=float)
    m = Y.shape[0]
    half = window // 2
    csum = np.concatenate([np.zeros((1,) + Y.shape[1:]), np.cumsum(Y, axis=0)])
    j = np.arange(m)
    k = np.minimum(np.minimum(j, m - 1 - j), half)
    lo, hi = j - k, j + k + 1
    return (csum[hi] - csum[lo]) / (hi - lo)[:, None]


def initialize(Y: Trajectory, config: SmootherConfig, model: DynamicsModel | None = None) -> DecisionVector:
    """Moving-average states, linearly interpolated stages, configured parameters.

    For the velocity-space variant the stage array instead holds the secant
    velocity of each step in rescaled time.
    """
    if config.window >= 2 * Y.m:
        raise InvalidConfig(f"window {config.window} too wide for {Y.m} samples")
    tab = make_tableau(config.tableau)
    X0 = moving_average(Y.states, config.window)
    dX = X0[1:] - X0[:-1]
    if config.variant == "stage_state":
        stages = X0[:-1, None, :] + tab.c[None, :, None] * dX[:, None, :]
    else:
        vel = dX / (config.alpha * Y.steps)[:, None]
        stages = np.repeat(vel[:, None, :], tab.stages, axis=1)
    theta_free = np.zeros(0)
    if model is not None and model.q_free:
        theta = model.theta if config.theta_init is None else np.asarray(config.theta_init, dtype=float)
        if theta.shape != model.theta.shape:
            raise InvalidConfig("theta_init must give a value for every parameter")
        theta_free = theta[model.free]
    return DecisionVector(X0, stages, theta_free)


def build_objective(Y: Trajectory, model: DynamicsModel, config: SmootherConfig):
    tab = make_tableau(config.tableau)
    if config.variant == "stage_state":
        return RKDObjective(Y, model, tab, config.penalty)
    return VelocityObjective(Y, model, tab, config.penalty, alpha=config.alpha)


def smooth(Y: Trajectory, model: DynamicsModel, config: SmootherConfig | None = None) -> SmoothResult:
    """Denoise ``Y`` under ``model``; entries of ``model.free`` are estimated too."""
    config = config or SmootherConfig()
    if model.n != Y.n:
        raise InvalidData(f"model dimension {model.n} does not match data dimension {Y.n}")
    obj = build_objective(Y, model, config)
    v0 = initialize(Y, config, model).flatten()

    def oracle(v):
        try:
            return obj.cost_and_grad(v)
        except (NonFiniteResidual, FloatingPointError):
            return np.inf, np.full(v.shape, np.nan)

    t0 = time.perf_counter()
    failed = False
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            v, diag = lbfgs_minimize(oracle, v0, config.lbfgs_options())
        except LineSearchFailed as exc:
            # no further decrease is reachable from the best iterate
            v, diag = exc.x, exc.diagnostics
            diag.reason = "cost_tol"
            failed = True
    seconds = time.perf_counter() - t0
    if not np.isfinite(diag.cost):
        raise DivergedSmoothing("final cost is not finite")
    X, _, th = obj.unpack(v)
    theta = obj.model_at(th).theta.copy() if model.q_free else model.theta.copy()
    return SmoothResult(
        states=Y.with_states(X.copy()),
        theta=theta,
        iterations=diag.iterations,
        cost=diag.cost,
        grad_norm=diag.grad_norm,
        reason=diag.reason,
        evaluations=diag.evaluations,
        seconds=seconds,
        line_search_failed=failed,
        cost_history=diag.history,
    )
