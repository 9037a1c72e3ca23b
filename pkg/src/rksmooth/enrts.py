"""Stochastic ensemble Kalman filter with an ensemble RTS backward pass.

The comparison baseline: perturbed-observation EnKF with identity observation
operator, RK4 forecasts at the data step, additive process noise after each
forecast, no inflation or localization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DynamicsModel, InvalidData, Trajectory, make_tableau
from .dynamics import rk_step


@dataclass(frozen=True)
class EnRTSConfig:
    ensemble_size: int = 500
    process_scale: float | None = None  # None -> dt**8
    obs_variance: float | None = None  # R = obs_variance * I; required at run time
    initial_mean: tuple[float, ...] | None = None  # None -> first measurement
    initial_variance: float | None = None  # None -> pooled variance of the measurements
    seed: int = 0

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise InvalidData("ensemble needs at least two members")
        for name in ("process_scale", "obs_variance", "initial_variance"):
            val = getattr(self, name)
            if val is not None and not (np.isfinite(val) and val >= 0):
                raise InvalidData(f"{name} must be finite and non-negative")


@dataclass
class EnKFResult:
    means: np.ndarray  # analysis means, (m, n)
    analysis: np.ndarray  # (m, Ne, n)
    forecast: np.ndarray  # (m, Ne, n); row 0 is the initial ensemble
    times: np.ndarray
    regularized_steps: list = field(default_factory=list)
    variant: str = "stochastic-perturbed-observations"


def _cov(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Sample cross-covariance of two ensembles (Ne, n) x (Ne, p)."""
    Ac = A - A.mean(axis=0)
    Bc = B - B.mean(axis=0)
    return Ac.T @ Bc / (A.shape[0] - 1)


def _solve_right(M: np.ndarray, S: np.ndarray):
    """``M S^{-1}`` with a small ridge when ``S`` is near singular."""
    flagged = False
    if np.linalg.cond(S) > 1e12:
        S = S + 1e-10 * np.eye(S.shape[0])
        flagged = True
    return np.linalg.solve(S.T, M.T).T, flagged


def enkf_forward(Y: Trajectory, model: DynamicsModel, config: EnRTSConfig) -> EnKFResult:
    if model.n != Y.n:
        raise InvalidData("model and data dimensions differ")
    if config.obs_variance is None:
        raise InvalidData("obs_variance must be set")
    m, n = Y.states.shape
    Ne = config.ensemble_size
    rng = np.random.Generator(np.random.Philox(key=int(config.seed)))
    tab = make_tableau("rk4_classical")
    mean0 = Y.states[0] if config.initial_mean is None else np.asarray(config.initial_mean, dtype=float)
    var0 = float(np.var(Y.states)) if config.initial_variance is None else config.initial_variance
    R = config.obs_variance * np.eye(n)
    obs_sd = np.sqrt(config.obs_variance)

    E = mean0 + np.sqrt(var0) * rng.standard_normal((Ne, n))
    forecast = np.empty((m, Ne, n))
    analysis = np.empty((m, Ne, n))
    flagged = []
    for j in range(m):
        if j > 0:
            h = Y.times[j] - Y.times[j - 1]
            q = h**8 if config.process_scale is None else config.process_scale
            E, _ = rk_step(model, E, h, tab)
            E = E + np.sqrt(q) * rng.standard_normal((Ne, n))
        forecast[j] = E
        pert = obs_sd * rng.standard_normal((Ne, n))
        pert -= pert.mean(axis=0)
        D = Y.states[j] + pert
        P = _cov(E, E)
        K, reg = _solve_right(P, P + R)
        if reg:
            flagged.append(j)
        E = E + (D - E) @ K.T
        analysis[j] = E
    return EnKFResult(analysis.mean(axis=1), analysis, forecast, Y.times.copy(), flagged)


def enrts_backward(result: EnKFResult, model: DynamicsModel | None = None, config: EnRTSConfig | None = None) -> Trajectory:
    """Backward sweep conditioning each analysis ensemble on its smoothed successor."""
    m = result.analysis.shape[0]
    smoothed = np.empty_like(result.analysis)
    smoothed[-1] = result.analysis[-1]
    for j in range(m - 2, -1, -1):
        Ea, Ef = result.analysis[j], result.forecast[j + 1]
        G, reg = _solve_right(_cov(Ea, Ef), _cov(Ef, Ef))
        if reg:
            result.regularized_steps.append(-j)
        smoothed[j] = Ea + (smoothed[j + 1] - Ef) @ G.T
    return Trajectory(result.times, smoothed.mean(axis=1))


def enrts_smooth(Y: Trajectory, model: DynamicsModel, config: EnRTSConfig) -> Trajectory:
    return enrts_backward(enkf_forward(Y, model, config), model, config)
