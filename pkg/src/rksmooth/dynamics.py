"""Benchmark systems and the simulators that produce their ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import irfft, rfft

from .core import (
    ButcherTableau,
    DivergedSimulation,
    DynamicsModel,
    InvalidData,
    Trajectory,
    make_tableau,
)


@dataclass(frozen=True, eq=False)
class Lorenz63Model(DynamicsModel):
    theta: np.ndarray = field(default_factory=lambda: np.array([10.0, 28.0, 8.0 / 3.0]))
    param_names = ("sigma", "rho", "beta")

    @property
    def n(self) -> int:
        return 3

    def _f(self, X):
        sigma, rho, beta = self.theta
        x, y, z = X[..., 0], X[..., 1], X[..., 2]
        return np.stack([sigma * (y - x), x * (rho - z) - y, x * y - beta * z], axis=-1)

    def _vjp_state(self, X, V):
        sigma, rho, beta = self.theta
        x, y, z = X[..., 0], X[..., 1], X[..., 2]
        a, b, c = V[..., 0], V[..., 1], V[..., 2]
        return np.stack(
            [-sigma * a + (rho - z) * b + y * c, sigma * a - b + x * c, -x * b - beta * c],
            axis=-1,
        )

    def _vjp_param(self, X, V):
        x, y, z = X[..., 0], X[..., 1], X[..., 2]
        return np.array(
            [np.sum((y - x) * V[..., 0]), np.sum(x * V[..., 1]), -np.sum(z * V[..., 2])]
        )


@dataclass(frozen=True, eq=False)
class Lorenz96Model(DynamicsModel):
    theta: np.ndarray = field(default_factory=lambda: np.array([16.0]))
    dim: int = 40
    param_names = ("F",)

    def __post_init__(self):
        super().__post_init__()
        if self.dim < 4:
            raise InvalidData("Lorenz 96 needs at least 4 sites")

    @property
    def n(self) -> int:
        return self.dim

    def _f(self, X):
        F = self.theta[0]
        xp1 = np.roll(X, -1, axis=-1)
        xm1 = np.roll(X, 1, axis=-1)
        xm2 = np.roll(X, 2, axis=-1)
        return (xp1 - xm2) * xm1 - X + F

    def _vjp_state(self, X, V):
        r = np.roll
        return (
            r(V, 1, axis=-1) * r(X, 2, axis=-1)
            - r(V, -2, axis=-1) * r(X, -1, axis=-1)
            + r(V, -1, axis=-1) * (r(X, -2, axis=-1) - r(X, 1, axis=-1))
            - V
        )

    def _vjp_param(self, X, V):
        return np.array([np.sum(V)])


@dataclass(frozen=True, eq=False)
class LinearModel(DynamicsModel):
    """``x' = M x`` with the matrix entries as parameters (row-major)."""

    theta: np.ndarray = field(default_factory=lambda: np.array([-1.0]))

    @property
    def n(self) -> int:
        return int(round(np.sqrt(self.q)))

    @property
    def matrix(self) -> np.ndarray:
        return self.theta.reshape(self.n, self.n)

    def _f(self, X):
        return X @ self.matrix.T

    def _vjp_state(self, X, V):
        return V @ self.matrix

    def _vjp_param(self, X, V):
        n = self.n
        return (V.reshape(-1, n).T @ X.reshape(-1, n)).ravel()


class _SpectralGrid:
    """Periodic grid helpers shared by the two PDE models."""

    def _setup_grid(self, npts: int, length: float):
        if npts < 8 or npts % 2:
            raise InvalidData("spectral grids need an even number of points >= 8")
        k = 2.0 * np.pi / length * np.arange(npts // 2 + 1)
        # 2/3-rule: drop the top third of the resolved wavenumbers
        mask = (np.arange(npts // 2 + 1) < npts / 3.0).astype(float)
        ik = 1j * k
        ik[-1] = 0.0
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "dealias", mask)
        object.__setattr__(self, "_ik", ik)
        object.__setattr__(self, "dx", length / npts)

    def _apply(self, u, symbol):
        return irfft(symbol * rfft(u, axis=-1), n=u.shape[-1], axis=-1)

    def _full_k(self, npts: int, length: float):
        return 2.0 * np.pi / length * np.fft.fftfreq(npts, d=1.0 / npts)


@dataclass(frozen=True, eq=False)
class KSSpectralModel(_SpectralGrid, DynamicsModel):
    """Kuramoto-Sivashinsky ``u_t = -u u_x - u_xx - u_xxxx`` in physical space.

    The quadratic term is written as ``-(u^2)_x / 2`` with 2/3-rule dealiasing.
    """

    npts: int = 128
    length: float = 32.0 * np.pi
    nonlinear: bool = True

    def __post_init__(self):
        super().__post_init__()
        self._setup_grid(self.npts, self.length)
        object.__setattr__(self, "linear_symbol", self.k**2 - self.k**4)

    @property
    def n(self) -> int:
        return self.npts

    @property
    def grid(self) -> np.ndarray:
        return self.length * np.arange(self.npts) / self.npts

    def _f(self, U):
        n = U.shape[-1]
        Uh = rfft(U, axis=-1)
        out = self.linear_symbol * Uh
        if self.nonlinear:
            w = irfft(self.dealias * Uh, n=n, axis=-1)
            out -= 0.5 * self._ik * self.dealias * rfft(w * w, axis=-1)
        return irfft(out, n=n, axis=-1)

    def _vjp_state(self, U, V):
        n = V.shape[-1]
        Vh = rfft(V, axis=-1)
        out = self.linear_symbol * Vh
        if self.nonlinear:
            w = irfft(self.dealias * rfft(U, axis=-1), n=n, axis=-1)
            t = irfft(self._ik * self.dealias * Vh, n=n, axis=-1)
            out += self.dealias * rfft(w * t, axis=-1)
        return irfft(out, n=n, axis=-1)

    # exponential integrator split: complex FFT of the real field
    def etd_split(self):
        kf = self._full_k(self.npts, self.length)
        L = kf**2 - kf**4
        mask = (np.abs(np.fft.fftfreq(self.npts, d=1.0 / self.npts)) < self.npts / 3.0).astype(float)
        ikm = 1j * kf * mask
        ikm[self.npts // 2] = 0.0

        def nonlinear(vhat):
            w = np.real(np.fft.ifft(mask * vhat))
            return -0.5 * ikm * np.fft.fft(w * w) if self.nonlinear else np.zeros_like(vhat)

        def to_spec(x):
            return np.fft.fft(x)

        def from_spec(v):
            return np.real(np.fft.ifft(v))

        return L.astype(complex), nonlinear, to_spec, from_spec


@dataclass(frozen=True, eq=False)
class NLSSpectralModel(_SpectralGrid, DynamicsModel):
    """Focusing NLS ``i u_t + u_xx / 2 + |u|^2 u = 0`` with state ``(Re u, Im u)``."""

    npts: int = 256
    length: float = 32.0
    x0: float = -16.0

    def __post_init__(self):
        super().__post_init__()
        self._setup_grid(self.npts, self.length)
        object.__setattr__(self, "_d2", -self.k**2)

    @property
    def n(self) -> int:
        return 2 * self.npts

    @property
    def grid(self) -> np.ndarray:
        return self.x0 + self.length * np.arange(self.npts) / self.npts

    def to_complex(self, X) -> np.ndarray:
        X = np.asarray(X)
        return X[..., : self.npts] + 1j * X[..., self.npts :]

    def from_complex(self, u) -> np.ndarray:
        u = np.asarray(u)
        return np.concatenate([u.real, u.imag], axis=-1)

    def _f(self, X):
        N = self.npts
        a, b = X[..., :N], X[..., N:]
        m2 = a * a + b * b
        fa = -0.5 * self._apply(b, self._d2) - m2 * b
        fb = 0.5 * self._apply(a, self._d2) + m2 * a
        return np.concatenate([fa, fb], axis=-1)

    def _vjp_state(self, X, V):
        N = self.npts
        a, b = X[..., :N], X[..., N:]
        va, vb = V[..., :N], V[..., N:]
        ab2 = 2.0 * a * b
        ga = -ab2 * va + 0.5 * self._apply(vb, self._d2) + (3 * a * a + b * b) * vb
        gb = -0.5 * self._apply(va, self._d2) - (a * a + 3 * b * b) * va + ab2 * vb
        return np.concatenate([ga, gb], axis=-1)

    def etd_split(self):
        kf = self._full_k(self.npts, self.length)
        L = -0.5j * kf**2

        def nonlinear(vhat):
            u = np.fft.ifft(vhat)
            return np.fft.fft(1j * (u.real**2 + u.imag**2) * u)

        def to_spec(x):
            return np.fft.fft(self.to_complex(x))

        def from_spec(v):
            return self.from_complex(np.fft.ifft(v))

        return L, nonlinear, to_spec, from_spec

    def mass(self, X) -> np.ndarray:
        """``int |u|^2 dx`` per row."""
        u = self.to_complex(X)
        return np.sum(np.abs(u) ** 2, axis=-1) * self.dx


MODELS = {
    "linear": LinearModel,
    "lorenz63": Lorenz63Model,
    "lorenz96": Lorenz96Model,
    "ks": KSSpectralModel,
    "nls": NLSSpectralModel,
}


def rk_step(model: DynamicsModel, x, h: float, tableau: ButcherTableau):
    """One explicit Runge-Kutta step; returns the new state and the stage states."""
    s = tableau.stages
    A, b = tableau.A, tableau.b
    k = np.empty((s,) + np.shape(x))
    stages = np.empty_like(k)
    for i in range(s):
        xi = x.copy()
        for l in range(i):
            if A[i, l] != 0.0:
                xi += h * A[i, l] * k[l]
        stages[i] = xi
        k[i] = model.eval(xi)
    x_new = x + h * np.tensordot(b, k, axes=1)
    return x_new, stages


def simulate_rk(model: DynamicsModel, x0, h: float, steps: int, tableau: ButcherTableau | None = None) -> Trajectory:
    """Fixed-step explicit Runge-Kutta integration from ``x0``."""
    tableau = tableau or make_tableau("rk4_classical")
    if not tableau.explicit:
        raise InvalidData("simulation needs an explicit tableau")
    if steps < 1 or not h > 0:
        raise InvalidData("need h > 0 and at least one step")
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidData("initial state is not finite")
    out = np.empty((steps + 1,) + x.shape)
    out[0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(steps):
            x, _ = rk_step(model, x, h, tableau)
            if not np.all(np.isfinite(x)):
                raise DivergedSimulation(j + 1)
            out[j + 1] = x
    return Trajectory.uniform(out, h)


def etdrk4_coefficients(L: np.ndarray, h: float, contour_points: int = 32):
    """Exponential integrator weights via contour averages around each ``h*L``."""
    E = np.exp(h * L)
    E2 = np.exp(h * L / 2)
    # full circle: the symbols may be complex (NLS), so no real-part shortcut
    r = np.exp(2j * np.pi * (np.arange(1, contour_points + 1) - 0.5) / contour_points)
    LR = h * L[:, None] + r[None, :]
    Q = h * np.mean((np.exp(LR / 2) - 1) / LR, axis=1)
    eLR = np.exp(LR)
    f1 = h * np.mean((-4 - LR + eLR * (4 - 3 * LR + LR**2)) / LR**3, axis=1)
    f2 = h * np.mean((2 + LR + eLR * (LR - 2)) / LR**3, axis=1)
    f3 = h * np.mean((-4 - 3 * LR - LR**2 + eLR * (4 - LR)) / LR**3, axis=1)
    return E, E2, Q, f1, f2, f3


def simulate_etdrk4(model, x0, h: float, steps: int, save_every: int = 1) -> Trajectory:
    """ETDRK4 for semilinear spectral models.

    Rows are stored every ``save_every`` internal steps, so the returned grid has
    spacing ``h * save_every`` and ``steps // save_every + 1`` rows.
    """
    if steps < 1 or not h > 0 or save_every < 1 or steps % save_every:
        raise InvalidData("steps must be a positive multiple of save_every")
    L, N, to_spec, from_spec = model.etd_split()
    E, E2, Q, f1, f2, f3 = etdrk4_coefficients(L, h)
    x0 = np.asarray(x0, dtype=float)
    v = to_spec(x0)
    rows = [x0.copy()]
    for j in range(steps):
        Nv = N(v)
        a = E2 * v + Q * Nv
        Na = N(a)
        b = E2 * v + Q * Na
        Nb = N(b)
        c = E2 * a + Q * (2 * Nb - Nv)
        Nc = N(c)
        v = E * v + Nv * f1 + 2 * (Na + Nb) * f2 + Nc * f3
        if (j + 1) % save_every == 0:
            x = from_spec(v)
            if not np.all(np.isfinite(x)):
                raise DivergedSimulation(j + 1)
            rows.append(x)
    return Trajectory.uniform(np.array(rows), h * save_every)


def lorenz63_benchmark(steps: int = 2500, h: float = 0.02) -> Trajectory:
    return simulate_rk(Lorenz63Model(), [5.0, 5.0, 25.0], h, steps)


def lorenz96_benchmark(steps: int = 500, h: float = 0.01, dim: int = 40, F: float = 16.0, spinup: int = 1000) -> Trajectory:
    """A trajectory on the Lorenz 96 attractor, started after a spin-up run."""
    model = Lorenz96Model(theta=[F], dim=dim)
    x0 = np.full(dim, F)
    x0[dim // 2] += 0.01
    warm = simulate_rk(model, x0, h, spinup)
    return simulate_rk(model, warm.states[-1], h, steps)


def ks_initial_condition(model: KSSpectralModel) -> np.ndarray:
    x = model.grid
    return np.cos(x / 16.0) * (1.0 + np.sin(x / 16.0))


def ks_benchmark(model: KSSpectralModel | None = None, t_end: float = 150.0, h_data: float = 0.05,
                 substeps: int = 2) -> Trajectory:
    model = model or KSSpectralModel()
    steps = int(round(t_end / h_data)) * substeps
    return simulate_etdrk4(model, ks_initial_condition(model), h_data / substeps, steps, save_every=substeps)


def nls_initial_condition(model: NLSSpectralModel, amplitude: float = 2.0) -> np.ndarray:
    return model.from_complex(amplitude / np.cosh(model.grid) + 0j)


def nls_benchmark(model: NLSSpectralModel | None = None, t_end: float = 2 * np.pi, snapshots: int = 200,
                  substeps: int = 20) -> Trajectory:
    model = model or NLSSpectralModel()
    h_data = t_end / snapshots
    return simulate_etdrk4(model, nls_initial_condition(model), h_data / substeps, snapshots * substeps,
                           save_every=substeps)
