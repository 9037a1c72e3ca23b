"""Shared data types: trajectories, Butcher tableaus and the dynamics-model interface."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import ClassVar

import numpy as np


class RKSmoothError(Exception):
    """Base class for errors raised by this package."""


class InvalidData(RKSmoothError, ValueError):
    pass


class NotFound(RKSmoothError, KeyError):
    pass


class DivergedSimulation(RKSmoothError):
    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Trajectory:
    """Time grid plus an (m, n) state matrix; row j is the state at ``times[j]``."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        times = _frozen(self.times)
        states = _frozen(self.states)
        if states.ndim == 1:
            states = _frozen(states[:, None])
        if times.ndim != 1 or states.ndim != 2 or states.shape[0] != times.shape[0]:
            raise InvalidData(f"shape mismatch: times {times.shape}, states {states.shape}")
        if times.shape[0] < 2:
            raise InvalidData("a trajectory needs at least two samples")
        if not np.all(np.diff(times) > 0):
            raise InvalidData("times must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(states))):
            raise InvalidData("trajectory contains non-finite entries")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @classmethod
    def uniform(cls, states, h: float, t0: float = 0.0) -> Trajectory:
        states = np.asarray(states, dtype=float)
        return cls(t0 + h * np.arange(states.shape[0]), states)

    @property
    def m(self) -> int:
        return self.states.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    def with_states(self, states) -> Trajectory:
        return Trajectory(self.times, states)


@dataclass(frozen=True)
class ButcherTableau:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int
    name: str

    def __post_init__(self):
        A, b, c = _frozen(self.A), _frozen(self.b), _frozen(self.c)
        s = b.shape[0]
        if A.shape != (s, s) or c.shape != (s,):
            raise InvalidData("tableau shapes are inconsistent")
        if np.max(np.abs(A.sum(axis=1) - c)) > 1e-12:
            raise InvalidData("row sums of A must equal c")
        if abs(b.sum() - 1.0) > 1e-12:
            raise InvalidData("weights b must sum to one")
        if self.order < 1:
            raise InvalidData("order must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def stages(self) -> int:
        return self.b.shape[0]

    @property
    def explicit(self) -> bool:
        return bool(np.all(np.triu(self.A) == 0.0))


def make_tableau(name: str) -> ButcherTableau:
    """Look up one of the registered Runge-Kutta schemes by name."""
    if name == "rk4_classical":
        A = [[0, 0, 0, 0], [0.5, 0, 0, 0], [0, 0.5, 0, 0], [0, 0, 1, 0]]
        return ButcherTableau(A, [1 / 6, 1 / 3, 1 / 3, 1 / 6], [0, 0.5, 0.5, 1], 4, name)
    if name == "euler_forward":
        return ButcherTableau([[0.0]], [1.0], [0.0], 1, name)
    if name == "gauss_legendre_2":
        r = np.sqrt(3.0) / 6.0
        A = [[0.25, 0.25 - r], [0.25 + r, 0.25]]
        return ButcherTableau(A, [0.5, 0.5], [0.5 - r, 0.5 + r], 4, name)
    raise NotFound(f"unknown tableau {name!r}")


TABLEAU_NAMES = ("rk4_classical", "euler_forward", "gauss_legendre_2")


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    """Parametrized autonomous vector field ``f_theta``.

    Subclasses implement ``_f``, ``_vjp_state`` and ``_vjp_param`` on batches of
    states with shape ``(..., n)``. The parameter vector is split by ``free`` into
    known entries and entries that an estimator is allowed to change.
    """

    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    free: np.ndarray | None = None

    param_names: ClassVar[tuple[str, ...]] = ()

    def __post_init__(self):
        theta = _frozen(np.atleast_1d(np.asarray(self.theta, dtype=float)))
        free = np.zeros(theta.shape, bool) if self.free is None else np.array(self.free, dtype=bool)
        if free.shape != theta.shape:
            raise InvalidData("free mask must match the parameter vector")
        free.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "free", free)

    @property
    def n(self) -> int:
        raise NotImplementedError

    @property
    def q(self) -> int:
        return self.theta.shape[0]

    @property
    def q_free(self) -> int:
        return int(self.free.sum())

    def with_theta(self, theta) -> DynamicsModel:
        t = np.asarray(theta, dtype=float)
        if t.shape != self.theta.shape:
            raise InvalidData("parameter vector has the wrong length")
        return replace(self, theta=t)

    def with_free_values(self, values) -> DynamicsModel:
        theta = self.theta.copy()
        theta[self.free] = values
        return self.with_theta(theta)

    def with_free(self, free) -> DynamicsModel:
        return replace(self, free=np.asarray(free, dtype=bool))

    # batched interface used by the objective
    def eval(self, x) -> np.ndarray:
        return self._f(np.asarray(x, dtype=float))

    def vjp_state(self, x, v) -> np.ndarray:
        """Row-wise ``J(x)^T v`` for batches of states and cotangents."""
        return self._vjp_state(np.asarray(x, dtype=float), np.asarray(v, dtype=float))

    def vjp_param(self, x, v) -> np.ndarray:
        """``sum_k (df/dtheta at x_k)^T v_k`` over the whole batch, shape (q,)."""
        if self.q == 0:
            return np.zeros(0)
        return self._vjp_param(np.asarray(x, dtype=float), np.asarray(v, dtype=float))

    # dense Jacobians at a single state
    def jac_state(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        eye = np.eye(self.n)
        xs = np.broadcast_to(x, (self.n, self.n))
        # row k of the batched vjp against e_k is row k of J
        return self._vjp_state(xs, eye)

    def jac_param(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.q == 0:
            return np.zeros((self.n, 0))
        return np.stack([self._vjp_param(x[None, :], e[None, :]) for e in np.eye(self.n)])

    def _f(self, x):
        raise NotImplementedError

    def _vjp_state(self, x, v):
        raise NotImplementedError

    def _vjp_param(self, x, v):
        raise NotImplementedError


def state_variance(traj: Trajectory | np.ndarray) -> float:
    """Population variance of every state entry pooled into one sample."""
    X = traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    if X.size < 2:
        raise InvalidData("need at least two entries")
    if not np.all(np.isfinite(X)):
        raise InvalidData("non-finite entries")
    return float(np.var(X))
