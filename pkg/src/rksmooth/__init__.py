"""Runge-Kutta denoising: recover clean trajectories and model parameters from noisy
measurements by minimizing Runge-Kutta residuals plus a data-fidelity penalty.
"""

from .core import (
    ButcherTableau,
    DivergedSimulation,
    DynamicsModel,
    InvalidData,
    NotFound,
    RKSmoothError,
    Trajectory,
    make_tableau,
    state_variance,
)
from .dynamics import (
    KSSpectralModel,
    LinearModel,
    Lorenz63Model,
    Lorenz96Model,
    NLSSpectralModel,
    simulate_etdrk4,
    simulate_rk,
)
from .enrts import EnRTSConfig, enkf_forward, enrts_backward, enrts_smooth
from .evaluate import energy_rank, pod_modes, rmse, rom_coefficients, rom_simulate, run_experiment_matrix
from .noise import NoiseSpec, corrupt, generate
from .objective import (
    DecisionVector,
    FidelityPenalty,
    rkd_cost,
    rkd_gradient,
    suggest_lambda,
    velocity_cost,
)
from .smoother import SmootherConfig, SmoothResult, initialize, smooth

__version__ = "0.1.0"

__all__ = [
    "ButcherTableau",
    "DivergedSimulation",
    "DynamicsModel",
    "InvalidData",
    "NotFound",
    "RKSmoothError",
    "Trajectory",
    "make_tableau",
    "state_variance",
    "KSSpectralModel",
    "LinearModel",
    "Lorenz63Model",
    "Lorenz96Model",
    "NLSSpectralModel",
    "simulate_etdrk4",
    "simulate_rk",
    "EnRTSConfig",
    "enkf_forward",
    "enrts_backward",
    "enrts_smooth",
    "energy_rank",
    "pod_modes",
    "rmse",
    "rom_coefficients",
    "rom_simulate",
    "run_experiment_matrix",
    "NoiseSpec",
    "corrupt",
    "generate",
    "DecisionVector",
    "FidelityPenalty",
    "rkd_cost",
    "rkd_gradient",
    "suggest_lambda",
    "velocity_cost",
    "SmootherConfig",
    "SmoothResult",
    "initialize",
    "smooth",
]
