"""Measurement-noise processes and trajectory corruption.

Every draw comes from a Philox counter-based generator keyed by the spec's
seed, so the output is a pure function of ``(spec, m, n, sigma2_X)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import lfilter

from .core import RKSmoothError, Trajectory, state_variance

NOISE_KINDS = ("white", "offset_gaussian", "red_ou", "heavy_tailed")


class InvalidSpec(RKSmoothError, ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "white"
    level: float = 1.0
    mu: tuple[float, ...] | float | None = None
    rho: float = 0.75
    tail_df: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidSpec(f"unknown noise kind {self.kind!r}")
        if not (np.isfinite(self.level) and self.level >= 0):
            raise InvalidSpec("level must be finite and non-negative")
        if not 0 <= self.rho < 1:
            raise InvalidSpec("rho must lie in [0, 1)")
        if not self.tail_df > 2:
            raise InvalidSpec("tail_df must exceed 2 for a finite variance")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidSpec("seed must be a 64-bit unsigned integer")
        if self.kind == "offset_gaussian" and self.mu is None:
            raise InvalidSpec("offset_gaussian noise needs an offset mu")
        if isinstance(self.mu, list):
            object.__setattr__(self, "mu", tuple(self.mu))

    def with_seed(self, seed: int) -> NoiseSpec:
        return NoiseSpec(**{**asdict(self), "seed": seed})

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["mu"], tuple):
            d["mu"] = list(d["mu"])
        return d


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)))


def _offset(mu, n: int) -> np.ndarray:
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if mu.shape == (1,):
        return np.full(n, mu[0])
    if mu.shape != (n,):
        raise InvalidSpec(f"offset has {mu.shape[0]} entries, state has {n}")
    return mu


def generate(spec: NoiseSpec, m: int, n: int, sigma2_X: float) -> np.ndarray:
    """Noise matrix of shape (m, n) with per-entry variance ``spec.level * sigma2_X``."""
    if m < 1 or n < 1:
        raise InvalidSpec("m and n must be positive")
    if not (np.isfinite(sigma2_X) and sigma2_X >= 0):
        raise InvalidSpec("sigma2_X must be finite and non-negative")
    var = spec.level * sigma2_X
    if var == 0:
        return np.zeros((m, n))
    sd = np.sqrt(var)
    rng = _rng(spec.seed)
    if spec.kind == "white":
        return sd * rng.standard_normal((m, n))
    if spec.kind == "offset_gaussian":
        return _offset(spec.mu, n) + sd * rng.standard_normal((m, n))
    if spec.kind == "red_ou":
        # nu_0 ~ N(0, var); nu_{j+1} = rho nu_j + sqrt(1 - rho^2) eps_j keeps var stationary
        drive = rng.standard_normal((m, n))
        drive[1:] *= np.sqrt(1.0 - spec.rho**2)
        return sd * lfilter([1.0], [1.0, -spec.rho], drive, axis=0)
    df = spec.tail_df
    return sd * np.sqrt((df - 2.0) / df) * rng.standard_t(df, size=(m, n))


def corrupt(traj: Trajectory, spec: NoiseSpec) -> Trajectory:
    """Add noise scaled to the pooled variance of ``traj``."""
    N = generate(spec, traj.m, traj.n, state_variance(traj))
    return traj.with_states(traj.states + N)
