"""Error metrics, SVD rank and POD tools, the two-mode NLS reduced model, and
the seeded experiment matrix comparing the smoother against the ensemble baseline.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import DivergedSimulation, DynamicsModel, InvalidData, RKSmoothError, Trajectory, state_variance
from .dynamics import (
    KSSpectralModel,
    Lorenz63Model,
    Lorenz96Model,
    NLSSpectralModel,
    ks_benchmark,
    lorenz96_benchmark,
    nls_benchmark,
    simulate_rk,
)
from .enrts import EnRTSConfig, enrts_smooth
from .noise import NoiseSpec, corrupt
from .objective import FidelityPenalty
from .smoother import SmootherConfig, smooth

METHODS = ("rkd_known", "rkd_param_est", "enrts")
SYSTEMS = ("lorenz63", "lorenz96", "ks", "nls")
L96_NOISE_LEVELS = (0.01, 0.05, 0.1, 0.25, 0.5, 1.0)
DEFAULT_TRIM = 0.05


def _states(x) -> np.ndarray:
    return x.states if isinstance(x, Trajectory) else np.asarray(x)


def rmse(estimate, truth, trim: float = 0.0) -> float:
    """Root mean square error over the rows after the first ``ceil(trim * m)``."""
    A, B = _states(estimate), _states(truth)
    if A.shape != B.shape:
        raise InvalidData(f"shape mismatch {A.shape} vs {B.shape}")
    if not 0.0 <= trim < 1.0:
        raise InvalidData("trim must lie in [0, 1)")
    start = math.ceil(trim * A.shape[0])
    d = A[start:] - B[start:]
    if d.size == 0:
        raise InvalidData("nothing left after trimming")
    return float(np.sqrt(np.mean(np.abs(d) ** 2)))


def _singular_values(M: np.ndarray) -> np.ndarray:
    if M.ndim != 2:
        raise InvalidData("expected a 2-D data matrix")
    if not np.all(np.isfinite(M)):
        raise InvalidData("data matrix has non-finite entries")
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        raise InvalidData("data matrix is zero")
    return sv


def numerical_rank(sv: np.ndarray, shape: tuple[int, int]) -> int:
    tol = max(shape) * np.finfo(float).eps * sv[0]
    return int(np.sum(sv > tol))


def energy_rank(data, threshold: float = 0.99) -> int:
    """Smallest truncation rank keeping ``threshold`` of the squared singular-value mass.

    ``data`` is a Trajectory or a real or complex snapshot matrix; complex fields
    are decomposed as complex matrices.
    """
    if not 0.0 < threshold <= 1.0:
        raise InvalidData("threshold must lie in (0, 1]")
    M = _states(data)
    sv = _singular_values(M)
    nrank = numerical_rank(sv, M.shape)
    energy = np.cumsum(sv[:nrank] ** 2)
    frac = energy / energy[-1]
    r = int(np.searchsorted(frac, threshold - 1e-12) + 1)
    return min(r, nrank)


def pod_modes(data, r: int) -> np.ndarray:
    """Leading ``r`` spatial POD modes as an (n, r) matrix with orthonormal columns.

    Each mode is rotated (or sign-flipped when real) so its largest-magnitude entry
    is real and positive.
    """
    M = _states(data)
    if M.ndim != 2 or not 1 <= r <= min(M.shape):
        raise InvalidData(f"r must lie in [1, {min(M.shape)}]")
    _singular_values(M)
    U, _, _ = np.linalg.svd(M.T, full_matrices=False)
    modes = U[:, :r].copy()
    for j in range(r):
        piv = modes[np.argmax(np.abs(modes[:, j])), j]
        modes[:, j] *= np.conj(piv) / abs(piv)
    return modes


def principal_angles(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Principal angles (radians) between the column spans of two orthonormal bases."""
    s = np.linalg.svd(U.conj().T @ V, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))


@dataclass(frozen=True)
class RomCoefficients:
    """Galerkin coefficients of the two-mode NLS model.

    ``alpha[j, k] = (phi_j'', phi_k) / 2``, ``beta[j, k, l] = (|phi_j|^2 phi_k, phi_l)``,
    ``sigma[j, k, l] = (phi_j^2 conj(phi_k), phi_l)`` and ``gram[j, l] = (phi_j, phi_l)``
    with ``(u, v) = sum(u conj(v)) dx``; indices are zero-based.
    """

    alpha: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    gram: np.ndarray
    a0: np.ndarray | None = None

    def rhs(self, a: np.ndarray) -> np.ndarray:
        a1, a2 = a[..., 0], a[..., 1]
        B, S = self.beta, self.sigma
        r = []
        for l in range(2):
            r.append(
                self.alpha[0, l] * a1
                + self.alpha[1, l] * a2
                + B[0, 0, l] * abs(a1) ** 2 * a1
                + 2 * B[1, 0, l] * abs(a2) ** 2 * a1
                + 2 * B[0, 1, l] * abs(a1) ** 2 * a2
                + B[1, 1, l] * abs(a2) ** 2 * a2
                + S[0, 1, l] * a1**2 * np.conj(a2)
                + S[1, 0, l] * a2**2 * np.conj(a1)
            )
        r = np.stack(r, axis=-1)
        # i (a' G)_l + r_l = 0  ->  a' = i r G^{-1}
        return 1j * np.linalg.solve(self.gram.T, r[..., None])[..., 0]


def _uniform_spacing(x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 4:
        raise InvalidData("grid must be a 1-D array of at least four points")
    d = np.diff(x)
    if not np.all(d > 0) or np.ptp(d) > 1e-9 * abs(d[0]):
        raise InvalidData("grid must be uniform and increasing")
    return float(d.mean())


def _inner(u, v, dx) -> complex:
    return complex(np.sum(u * np.conj(v)) * dx)


def spectral_second_derivative(u: np.ndarray, dx: float) -> np.ndarray:
    n = u.shape[-1]
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=dx)
    return np.fft.ifft(-(k**2) * np.fft.fft(u))


def _fourier_refine(v: np.ndarray, factor: int) -> np.ndarray:
    """Trigonometric interpolation of a periodic sample onto a ``factor``-times finer grid."""
    n = v.shape[-1]
    vh = np.fft.fft(v)
    big = np.zeros(factor * n, dtype=complex)
    half = n // 2
    big[:half] = vh[:half]
    big[-half:] = vh[-half:]
    return np.fft.ifft(big) * factor


def rom_coefficients(phi1, phi2, x, u0=None, refine: int = 2) -> RomCoefficients:
    """Coefficients of the two-mode model on the periodic uniform grid ``x``.

    Inner products are summed on a grid ``refine`` times finer than ``x`` after
    trigonometric interpolation of the modes, so the quartic integrands of the
    nonlinear coefficients are not aliased. If the initial field ``u0`` is given,
    the initial amplitudes ``a_j(0) = (u0, phi_j) / (phi_j, phi_j)`` are included.
    """
    dx = _uniform_spacing(x)
    if refine < 1:
        raise InvalidData("refine must be a positive integer")
    phi = [np.asarray(phi1, dtype=complex), np.asarray(phi2, dtype=complex)]
    if phi[0].shape != (len(x),) or phi[1].shape != (len(x),):
        raise InvalidData("modes must live on the grid")
    if refine > 1:
        phi = [_fourier_refine(p, refine) for p in phi]
        dx = dx / refine
    d2 = [spectral_second_derivative(p, dx) for p in phi]
    alpha = np.empty((2, 2), dtype=complex)
    gram = np.empty((2, 2), dtype=complex)
    beta = np.empty((2, 2, 2), dtype=complex)
    sigma = np.empty((2, 2, 2), dtype=complex)
    for j in range(2):
        for k in range(2):
            alpha[j, k] = _inner(d2[j], phi[k], dx) / 2
            gram[j, k] = _inner(phi[j], phi[k], dx)
            for l in range(2):
                beta[j, k, l] = _inner(np.abs(phi[j]) ** 2 * phi[k], phi[l], dx)
                sigma[j, k, l] = _inner(phi[j] ** 2 * np.conj(phi[k]), phi[l], dx)
    a0 = None
    if u0 is not None:
        u0 = np.asarray(u0, dtype=complex)
        if refine > 1:
            u0 = _fourier_refine(u0, refine)
        a0 = np.array([_inner(u0, p, dx) / _inner(p, p, dx) for p in phi])
    return RomCoefficients(alpha, beta, sigma, gram, a0)


def rom_simulate(coeffs: RomCoefficients, a1_0: complex, a2_0: complex, h: float, steps: int) -> np.ndarray:
    """Classical RK4 integration of the two-mode amplitudes; returns (steps + 1, 2) complex."""
    if steps < 1 or not h > 0:
        raise InvalidData("need h > 0 and at least one step")
    out = np.empty((steps + 1, 2), dtype=complex)
    a = np.array([a1_0, a2_0], dtype=complex)
    out[0] = a
    f = coeffs.rhs
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(steps):
            k1 = f(a)
            k2 = f(a + 0.5 * h * k1)
            k3 = f(a + 0.5 * h * k2)
            k4 = f(a + h * k3)
            a = a + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(a)):
                raise DivergedSimulation(j + 1)
            out[j + 1] = a
    return out


def rom_reconstruct(amplitudes: np.ndarray, phi1, phi2) -> np.ndarray:
    return amplitudes @ np.stack([np.asarray(phi1), np.asarray(phi2)])


# ---------------------------------------------------------------------------
# experiment matrix


@dataclass(frozen=True)
class SystemSpec:
    """Benchmark system: model, truth trajectory, and initial guesses for free parameters.

    ``steps``/``h`` refer to the measurement grid. ``theta_init`` overrides the
    default guess of ``theta_init_factor`` times the true parameters.
    """

    name: str = "lorenz63"
    theta: tuple[float, ...] | None = None
    steps: int | None = None
    h: float | None = None
    dim: int | None = None
    npts: int | None = None
    x0: tuple[float, ...] | None = None
    spinup: int = 1000
    theta_init: tuple[float, ...] | None = None
    theta_init_factor: float = 1.25

    def __post_init__(self):
        if self.name not in SYSTEMS:
            raise InvalidData(f"unknown system {self.name!r}")
        if self.steps is not None and self.steps < 1:
            raise InvalidData("steps must be positive")
        if self.h is not None and not self.h > 0:
            raise InvalidData("h must be positive")
        for name in ("theta", "x0", "theta_init"):
            if isinstance(getattr(self, name), list):
                object.__setattr__(self, name, tuple(getattr(self, name)))

    def model(self) -> DynamicsModel:
        kw = {} if self.theta is None else {"theta": np.asarray(self.theta, dtype=float)}
        if self.name == "lorenz63":
            return Lorenz63Model(**kw)
        if self.name == "lorenz96":
            return Lorenz96Model(**kw, dim=self.dim or 40)
        if self.name == "ks":
            return KSSpectralModel(npts=self.npts or 128)
        return NLSSpectralModel(npts=self.npts or 256)

    def truth(self) -> Trajectory:
        model = self.model()
        if self.name == "lorenz63":
            x0 = self.x0 or (5.0, 5.0, 25.0)
            return simulate_rk(model, x0, self.h or 0.02, self.steps or 2500)
        if self.name == "lorenz96":
            if self.x0 is not None:
                return simulate_rk(model, self.x0, self.h or 0.01, self.steps or 500)
            return lorenz96_benchmark(self.steps or 500, self.h or 0.01, model.dim, float(model.theta[0]),
                                      self.spinup)
        if self.name == "ks":
            h = self.h or 0.05
            return ks_benchmark(model, t_end=(self.steps or 3000) * h, h_data=h)
        h = self.h or 2 * np.pi / 200
        steps = self.steps or 200
        return nls_benchmark(model, t_end=steps * h, snapshots=steps)

    def initial_theta(self) -> np.ndarray:
        model = self.model()
        if self.theta_init is not None:
            guess = np.asarray(self.theta_init, dtype=float)
            if guess.shape != model.theta.shape:
                raise InvalidData("theta_init must give a value for every parameter")
            return guess
        return self.theta_init_factor * model.theta


@dataclass(frozen=True)
class ExperimentConfig:
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    enrts: EnRTSConfig = field(default_factory=EnRTSConfig)
    trim: float = DEFAULT_TRIM


@dataclass
class ExperimentReport:
    experiment_id: str
    system: str
    method: str
    noise: dict
    seed: int
    config_hash: str
    rmse: float = float("nan")
    rmse_trimmed: float = float("nan")
    theta: list = field(default_factory=list)
    theta_rel_error: list = field(default_factory=list)
    iterations: int = 0
    reason: str = ""
    error: str | None = None
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.error is None

    def record(self, with_timing: bool = False) -> dict:
        """Flat dict for CSV/JSON; wall-clock time only on request since it is not reproducible."""
        d = asdict(self)
        if not with_timing:
            d.pop("seconds")
        return d


@dataclass(frozen=True)
class Cell:
    system: SystemSpec
    noise: NoiseSpec
    method: str
    seed: int
    config: ExperimentConfig
    label: str = ""

    @property
    def experiment_id(self) -> str:
        key = f"{self.system.name}/{self.noise.kind}/{self.noise.level:g}/{self.method}"
        return f"{key}/{self.label}" if self.label else key


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(cell: Cell) -> str:
    """Hash of everything that defines a cell except its seed."""
    noise = cell.noise.to_dict()
    noise.pop("seed")
    payload = {
        "system": asdict(cell.system),
        "noise": noise,
        "method": cell.method,
        "label": cell.label,
        "config": asdict(cell.config),
    }
    return hashlib.sha256(_canonical(payload).encode()).hexdigest()[:16]


def noise_variance(spec: NoiseSpec, sigma2_X: float) -> float:
    return spec.level * sigma2_X


def run_cell(cell: Cell) -> ExperimentReport:
    """Run a single (system, noise, method, seed) combination; failures are recorded, not raised."""
    rep = ExperimentReport(
        experiment_id=cell.experiment_id,
        system=cell.system.name,
        method=cell.method,
        noise=cell.noise.with_seed(cell.seed).to_dict(),
        seed=cell.seed,
        config_hash=config_hash(cell),
    )
    t0 = time.perf_counter()
    try:
        X = cell.system.truth()
        model = cell.system.model()
        Y = corrupt(X, cell.noise.with_seed(cell.seed))
        theta_true = model.theta.copy()
        if cell.method == "enrts":
            cfg = cell.config.enrts
            sigma2_X = state_variance(X)
            obs_var = cfg.obs_variance
            if obs_var is None:
                obs_var = noise_variance(cell.noise, sigma2_X)
            # a zero-variance observation model makes the gain singular
            cfg = replace(
                cfg,
                obs_variance=max(obs_var, 1e-12),
                initial_mean=tuple(X.states[0]) if cfg.initial_mean is None else cfg.initial_mean,
                initial_variance=sigma2_X if cfg.initial_variance is None else cfg.initial_variance,
                seed=cell.seed,
            )
            Xhat = enrts_smooth(Y, model, cfg)
            theta = theta_true
        else:
            cfg = cell.config.smoother
            if cell.method == "rkd_param_est":
                model = model.with_free(np.ones(model.q, dtype=bool))
                cfg = replace(cfg, theta_init=tuple(cell.system.initial_theta()))
            elif cell.method != "rkd_known":
                raise InvalidData(f"unknown method {cell.method!r}")
            res = smooth(Y, model, cfg)
            Xhat, theta = res.states, res.theta
            rep.iterations, rep.reason = res.iterations, res.reason
        rep.rmse = rmse(Xhat, X)
        rep.rmse_trimmed = rmse(Xhat, X, cell.config.trim)
        rep.theta = [float(v) for v in theta]
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.abs(theta - theta_true) / np.abs(theta_true)
        rep.theta_rel_error = [float(v) for v in rel]
    except (RKSmoothError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        rep.error = f"{type(exc).__name__}: {exc}"
    rep.seconds = time.perf_counter() - t0
    return rep


def build_cells(systems, noise_specs, methods, seeds, config: ExperimentConfig | None = None) -> list[Cell]:
    config = config or ExperimentConfig()
    for m in methods:
        if m not in METHODS:
            raise InvalidData(f"unknown method {m!r}")
    return [
        Cell(sys, spec, method, int(seed), config)
        for sys in systems
        for spec in noise_specs
        for method in methods
        for seed in seeds
    ]


def run_experiment_matrix(systems, noise_specs, methods, seeds, config: ExperimentConfig | None = None,
                          workers: int = 1) -> list[ExperimentReport]:
    """Seeded cross product of systems, noise specs, methods and seeds.

    Cells are independent and may run on ``workers`` processes; the output order is
    fixed by the input order, so the result does not depend on scheduling.
    """
    cells = build_cells(systems, noise_specs, methods, seeds, config)
    return run_cells(cells, workers)


def run_cells(cells: list[Cell], workers: int = 1) -> list[ExperimentReport]:
    return _map(run_cell, cells, workers)


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(c) for c in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _stats(values) -> dict:
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return {"median": None, "iqr": None, "mean": None, "stdev": None}
    q1, q3 = np.percentile(v, [25, 75])
    return {
        "median": float(np.median(v)),
        "iqr": float(q3 - q1),
        "mean": float(v.mean()),
        "stdev": float(v.std(ddof=1)) if v.size > 1 else 0.0,
    }


def summarize(reports: list[ExperimentReport]) -> list[dict]:
    """Per-cell RMSE statistics keyed by experiment id, in first-seen order."""
    groups: dict[str, list[ExperimentReport]] = {}
    for r in reports:
        groups.setdefault(r.experiment_id, []).append(r)
    rows = []
    for key, reps in groups.items():
        ok = [r for r in reps if r.ok]
        first = reps[0]
        rows.append({
            "experiment_id": key,
            "system": first.system,
            "method": first.method,
            "noise_kind": first.noise["kind"],
            "level": first.noise["level"],
            "seeds": len(reps),
            "failures": len(reps) - len(ok),
            "rmse": _stats([r.rmse for r in ok]),
            "rmse_trimmed": _stats([r.rmse_trimmed for r in ok]),
        })
    return rows



def sweep_lambda(system: SystemSpec, noise: NoiseSpec, lambdas, norms, seeds,
                 config: ExperimentConfig | None = None, workers: int = 1):
    """Known-dynamics smoothing across penalty weights and norms; returns (reports, table rows)."""
    config = config or ExperimentConfig()
    cells, keys = [], []
    for norm in norms:
        for lam in lambdas:
            pen = FidelityPenalty(norm, float(lam))
            cfg = replace(config, smoother=replace(config.smoother, penalty=pen))
            label = f"{norm}/lam={lam:g}"
            keys.append((norm, float(lam), label))
            cells += [Cell(system, noise, "rkd_known", int(s), cfg, label) for s in seeds]
    reports = run_cells(cells, workers)
    rows = []
    for norm, lam, label in keys:
        reps = [r for r in reports if r.experiment_id.endswith("/" + label)]
        rows.append(_stat_row(reps, system=system.name, norm=norm, lam=lam))
    return reports, rows


def sweep_alpha(system: SystemSpec, noise: NoiseSpec, alphas, seeds,
                config: ExperimentConfig | None = None, workers: int = 1):
    """Velocity-space smoothing across time dilations plus the stage-state reference row."""
    config = config or ExperimentConfig()
    ref = replace(config, smoother=replace(config.smoother, variant="stage_state", alpha=1.0))
    cells = [Cell(system, noise, "rkd_known", int(s), ref, "stage_state") for s in seeds]
    keys = [("stage_state", "n/a", "stage_state")]
    for a in alphas:
        cfg = replace(config, smoother=replace(config.smoother, variant="velocity_space", alpha=float(a)))
        label = f"velocity/alpha={a:g}"
        keys.append(("velocity_space", float(a), label))
        cells += [Cell(system, noise, "rkd_known", int(s), cfg, label) for s in seeds]
    reports = run_cells(cells, workers)
    rows = []
    for variant, alpha, label in keys:
        reps = [r for r in reports if r.experiment_id.endswith("/" + label)]
        rows.append(_stat_row(reps, system=system.name, variant=variant, alpha=alpha))
    return reports, rows


def _stat_row(reports, **keys) -> dict:
    ok = [r for r in reports if r.ok]
    row = dict(keys)
    row["seeds"] = len(reports)
    row["failures"] = len(reports) - len(ok)
    for name in ("rmse", "rmse_trimmed"):
        for stat, val in _stats([getattr(r, name) for r in ok]).items():
            row[f"{name}_{stat}"] = val
    return row


@dataclass
class RankReport:
    levels: list
    rank_noisy: list
    rank_smoothed: list
    rank_clean: int
    threshold: float = 0.99
    seed: int = 0
    rmse_noisy: list = field(default_factory=list)
    rmse_smoothed: list = field(default_factory=list)
    reasons: list = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = [{"data": "clean", "level": 0.0, "rank": self.rank_clean}]
        for i, lev in enumerate(self.levels):
            out.append({"data": "noisy", "level": lev, "rank": self.rank_noisy[i], "rmse": self.rmse_noisy[i]})
            out.append({"data": "smoothed", "level": lev, "rank": self.rank_smoothed[i],
                        "rmse": self.rmse_smoothed[i], "reason": self.reasons[i]})
        return out


def _complex_field(model, states: np.ndarray) -> np.ndarray:
    return model.to_complex(states) if isinstance(model, NLSSpectralModel) else states


def _rank_level(args):
    system, noise, smoother_cfg, threshold = args
    X = system.truth()
    model = system.model()
    Y = corrupt(X, noise)
    res = smooth(Y, model, smoother_cfg)
    return (
        energy_rank(_complex_field(model, Y.states), threshold),
        energy_rank(_complex_field(model, res.states.states), threshold),
        rmse(Y, X),
        rmse(res.states, X),
        res.reason,
    )


def nls_rank_study(system: SystemSpec | None = None, levels=(0.01, 0.05, 0.1, 0.25, 0.5, 1.0), seed: int = 0,
                   smoother: SmootherConfig | None = None, threshold: float = 0.99, kind: str = "white",
                   workers: int = 1) -> RankReport:
    """Energy rank of clean, noisy and smoothed NLS snapshots at each noise level."""
    system = system or SystemSpec("nls")
    smoother = smoother or SmootherConfig()
    model = system.model()
    X = system.truth()
    jobs = [(system, NoiseSpec(kind, float(lev), seed=seed), smoother, threshold) for lev in levels]
    results = _map(_rank_level, jobs, workers)
    return RankReport(
        levels=[float(v) for v in levels],
        rank_noisy=[r[0] for r in results],
        rank_smoothed=[r[1] for r in results],
        rank_clean=energy_rank(_complex_field(model, X.states), threshold),
        threshold=threshold,
        seed=seed,
        rmse_noisy=[r[2] for r in results],
        rmse_smoothed=[r[3] for r in results],
        reasons=[r[4] for r in results],
    )
