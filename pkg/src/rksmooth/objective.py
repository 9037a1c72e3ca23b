"""Runge-Kutta denoising objectives and their analytic gradients.

The main cost works on state estimates ``X`` (m, n) and stage states ``S``
(m-1, s, n)::

    sum_j |x_{j+1} - x_j - h_j sum_i b_i f(s_ji)|^2
  + sum_{j,i} |s_ji - x_j - h_j sum_l a_il f(s_jl)|^2
  + g(X - Y)

with ``g = lam * ||.||_2^2`` or ``lam * ||.||_1``. The velocity-space variant
replaces stage states by stage velocities and supports rescaling time by alpha.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import ButcherTableau, DynamicsModel, InvalidData, RKSmoothError, Trajectory

PENALTY_NORMS = ("l2_squared", "l1")
DEFAULT_LAMBDA = 1e-8


class NonFiniteResidual(RKSmoothError, FloatingPointError):
    pass


@dataclass(frozen=True)
class FidelityPenalty:
    norm: str = "l2_squared"
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if self.norm not in PENALTY_NORMS:
            raise InvalidData(f"unknown penalty norm {self.norm!r}")
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise InvalidData("penalty weight must be finite and non-negative")

    def value(self, d: np.ndarray) -> float:
        if self.lam == 0:
            return 0.0
        if self.norm == "l2_squared":
            return self.lam * float(np.vdot(d, d))
        return self.lam * float(np.abs(d).sum())

    def grad(self, d: np.ndarray) -> np.ndarray:
        if self.norm == "l2_squared":
            return (2.0 * self.lam) * d
        # np.sign(0) == 0 gives the sign(0) = 0 subgradient
        return self.lam * np.sign(d)


@dataclass
class DecisionVector:
    """State estimates, stage variables and free parameters as one flat vector.

    Layout: ``[states row-major | stages step-major | theta_free]``.
    """

    states: np.ndarray
    stages: np.ndarray
    theta_free: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.stages = np.asarray(self.stages, dtype=float)
        self.theta_free = np.atleast_1d(np.asarray(self.theta_free, dtype=float))
        m, n = self.states.shape
        if self.stages.ndim != 3 or self.stages.shape[0] != m - 1 or self.stages.shape[2] != n:
            raise InvalidData(f"stage grid shape {self.stages.shape} does not match states {self.states.shape}")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        m, n = self.states.shape
        return m, self.stages.shape[1], n, self.theta_free.shape[0]

    @property
    def size(self) -> int:
        return self.states.size + self.stages.size + self.theta_free.size

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.states.ravel(), self.stages.ravel(), self.theta_free])

    @classmethod
    def unflatten(cls, v, m: int, s: int, n: int, q_free: int = 0) -> DecisionVector:
        v = np.asarray(v, dtype=float)
        a, b = m * n, m * n + (m - 1) * s * n
        if v.shape != (b + q_free,):
            raise InvalidData(f"expected a vector of length {b + q_free}, got {v.shape}")
        return cls(v[:a].reshape(m, n), v[a:b].reshape(m - 1, s, n), v[b:])


def _check_finite(F):
    if not np.all(np.isfinite(F)):
        raise NonFiniteResidual("vector field returned non-finite values")


def step_residual(x_j, x_j1, stages_j, model: DynamicsModel, tableau: ButcherTableau, h_j: float) -> float:
    """Squared mismatch between ``x_j1`` and the step predicted from the stage states."""
    F = model.eval(np.asarray(stages_j, dtype=float))
    _check_finite(F)
    r = np.asarray(x_j1) - (np.asarray(x_j) + h_j * tableau.b @ F)
    return float(r @ r)


def stage_residual(x_j, stages_j, i: int, model: DynamicsModel, tableau: ButcherTableau, h_j: float) -> float:
    """Squared violation of the defining relation of stage ``i`` (0-based)."""
    stages_j = np.asarray(stages_j, dtype=float)
    F = model.eval(stages_j)
    _check_finite(F)
    r = stages_j[i] - (np.asarray(x_j) + h_j * tableau.A[i] @ F)
    return float(r @ r)


class RKDObjective:
    """Cost/gradient oracle on flat decision vectors for fixed data and model.

    ``model.free`` selects the parameters appended to the decision vector; the
    remaining entries of ``model.theta`` stay fixed.
    """

    def __init__(self, Y: Trajectory, model: DynamicsModel, tableau: ButcherTableau,
                 penalty: FidelityPenalty | None = None):
        if model.n != Y.n:
            raise InvalidData(f"model dimension {model.n} does not match data dimension {Y.n}")
        self.Y = Y
        self.model = model
        self.tableau = tableau
        self.penalty = penalty or FidelityPenalty()
        self.m, self.n = Y.states.shape
        self.s = tableau.stages
        self.q_free = model.q_free
        self.h = np.ascontiguousarray(Y.steps)
        self._A = np.ascontiguousarray(tableau.A)
        self._b = np.ascontiguousarray(tableau.b)
        self._Yd = np.ascontiguousarray(Y.states)
        self.n_states = self.m * self.n
        self.n_stages = (self.m - 1) * self.s * self.n
        self.size = self.n_states + self.n_stages + self.q_free

    def unpack(self, v):
        a, b = self.n_states, self.n_states + self.n_stages
        return v[:a].reshape(self.m, self.n), v[a:b].reshape(self.m - 1, self.s, self.n), v[b:]

    def model_at(self, theta_free) -> DynamicsModel:
        if self.q_free == 0:
            return self.model
        return self.model.with_free_values(theta_free)

    def _residuals(self, v):
        X, S, th = self.unpack(v)
        model = self.model_at(th)
        F = model.eval(S)
        _check_finite(F)
        r1 = np.empty((self.m - 1, self.n))
        r2 = np.empty_like(S)
        _kernels.stage_residuals(X, S, F, self._A, self._b, self.h, r1, r2)
        return X, S, model, r1, r2

    def cost(self, v) -> float:
        X, _, _, r1, r2 = self._residuals(np.asarray(v, dtype=float))
        return float(np.vdot(r1, r1) + np.vdot(r2, r2)) + self.penalty.value(X - self._Yd)

    def cost_and_grad(self, v):
        v = np.asarray(v, dtype=float)
        X, S, model, r1, r2 = self._residuals(v)
        d = X - self._Yd
        cost = float(np.vdot(r1, r1) + np.vdot(r2, r2)) + self.penalty.value(d)
        g = np.empty(self.size)
        gX, gS, gth = self.unpack(g)
        gX[...] = self.penalty.grad(d)
        W = np.empty_like(S)
        _kernels.stage_backward(r1, r2, self._A, self._b, self.h, gX, W)
        gS[...] = 2.0 * r2 + model.vjp_state(S, W)
        if self.q_free:
            gth[...] = model.vjp_param(S, W)[model.free]
        return cost, g

    def terms(self, v):
        """Per-step and per-stage residual norms, for diagnostics and tests."""
        _, _, _, r1, r2 = self._residuals(np.asarray(v, dtype=float))
        return np.sum(r1 * r1, axis=1), np.sum(r2 * r2, axis=2)


def rkd_cost(dv: DecisionVector, Y: Trajectory, model: DynamicsModel, tableau: ButcherTableau,
             penalty: FidelityPenalty | None = None) -> float:
    return RKDObjective(Y, model, tableau, penalty).cost(dv.flatten())


def rkd_gradient(dv: DecisionVector, Y: Trajectory, model: DynamicsModel, tableau: ButcherTableau,
                 penalty: FidelityPenalty | None = None) -> np.ndarray:
    return RKDObjective(Y, model, tableau, penalty).cost_and_grad(dv.flatten())[1]


class VelocityObjective(RKDObjective):
    """Cost over states and stage velocities, with time rescaled by ``alpha``.

    In rescaled time the step sizes are ``alpha * h`` and the vector field is
    ``f / alpha``; the stage array holds velocities in rescaled units.
    """

    def __init__(self, Y, model, tableau, penalty=None, alpha: float = 1.0):
        if not alpha > 0:
            raise InvalidData("alpha must be positive")
        super().__init__(Y, model, tableau, penalty)
        self.alpha = float(alpha)
        self.h = self.alpha * np.ascontiguousarray(Y.steps)

    def _residuals(self, v):
        X, K, th = self.unpack(v)
        model = self.model_at(th)
        Z = np.empty_like(K)
        _kernels.velocity_points(X, K, self._A, self.h, Z)
        F = model.eval(Z)
        _check_finite(F)
        r1 = np.empty((self.m - 1, self.n))
        _kernels.velocity_step_residual(X, K, self._b, self.h, r1)
        r2 = K - F / self.alpha
        return X, Z, model, r1, r2

    def cost_and_grad(self, v):
        v = np.asarray(v, dtype=float)
        X, Z, model, r1, r2 = self._residuals(v)
        d = X - self._Yd
        cost = float(np.vdot(r1, r1) + np.vdot(r2, r2)) + self.penalty.value(d)
        g = np.empty(self.size)
        gX, gK, gth = self.unpack(g)
        gX[...] = self.penalty.grad(d)
        W = (-2.0 / self.alpha) * r2
        U = model.vjp_state(Z, W)
        _kernels.velocity_backward(r1, r2, U, self._A, self._b, self.h, gX, gK)
        if self.q_free:
            gth[...] = model.vjp_param(Z, W)[model.free]
        return cost, g


def velocity_cost(X, K, Y: Trajectory, model: DynamicsModel, tableau: ButcherTableau,
                  penalty: FidelityPenalty | None = None, alpha: float = 1.0, theta_free=()) -> float:
    obj = VelocityObjective(Y, model, tableau, penalty, alpha)
    return obj.cost(DecisionVector(X, K, theta_free).flatten())


def suggest_lambda(m: int, s: int, dt: float, p: int, norm: str = "l2_squared", *,
                   noise=None, n: int | None = None, noise_variance: float | None = None) -> float:
    """Weight that balances the data penalty on a noise guess against ``m (s+1) dt^p``.

    Pass either a guessed noise matrix ``noise`` or ``n`` together with
    ``noise_variance`` (Gaussian noise is assumed for the l1 expectation).
    """
    if m <= 0 or s <= 0 or p <= 0 or not dt > 0:
        raise InvalidData("m, s, dt and p must be positive")
    if norm not in PENALTY_NORMS:
        raise InvalidData(f"unknown penalty norm {norm!r}")
    if noise is not None:
        N = np.asarray(noise, dtype=float)
        expected = float(np.sum(N * N)) if norm == "l2_squared" else float(np.sum(np.abs(N)))
    elif n is not None and noise_variance is not None:
        if norm == "l2_squared":
            expected = m * n * noise_variance
        else:
            expected = m * n * np.sqrt(2.0 * noise_variance / np.pi)
    else:
        raise InvalidData("need a noise guess or (n, noise_variance)")
    if not expected > 0:
        return DEFAULT_LAMBDA
    return m * (s + 1) * dt**p / expected
