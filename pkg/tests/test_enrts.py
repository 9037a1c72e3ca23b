import numpy as np
import pytest

from oracles import rk4_linear_factor, scalar_kalman
from rksmooth.core import InvalidData, Trajectory, state_variance
from rksmooth.dynamics import LinearModel, Lorenz63Model, lorenz63_benchmark, simulate_rk
from rksmooth.enrts import EnRTSConfig, enkf_forward, enrts_backward, enrts_smooth
from rksmooth.noise import NoiseSpec, corrupt

H = 0.1
Q = 0.01
R = 0.25
P0 = 1.0


def scalar_problem(steps=20, seed=0):
    rng = np.random.default_rng(seed)
    t = H * np.arange(steps + 1)
    y = np.exp(-t) + np.sqrt(R) * rng.standard_normal(steps + 1)
    return Trajectory(t, y[:, None])


def run_scalar(Y, Ne, seed=0):
    cfg = EnRTSConfig(ensemble_size=Ne, process_scale=Q, obs_variance=R,
                      initial_mean=(1.0,), initial_variance=P0, seed=seed)
    res = enkf_forward(Y, LinearModel(theta=[-1.0]), cfg)
    smoothed = enrts_backward(res)
    return res, smoothed.states[:, 0]


def oracle(Y):
    return scalar_kalman(Y.states[:, 0], rk4_linear_factor(-H), Q, R, 1.0, P0)


def test_filter_and_smoother_match_exact_oracle():
    Y = scalar_problem()
    ma, pa, ms, ps = oracle(Y)
    Ne = 10_000
    res, smoothed = run_scalar(Y, Ne)
    assert np.all(np.abs(res.means[:, 0] - ma) <= 3 * np.sqrt(pa / Ne))
    assert np.all(np.abs(smoothed - ms) <= 3 * np.sqrt(ps / Ne))


def test_error_decays_like_inverse_sqrt_ensemble():
    Y = scalar_problem()
    _, _, ms, _ = oracle(Y)
    sizes = [100, 400, 1600, 6400]
    errs = []
    for Ne in sizes:
        e = [np.sqrt(np.mean((run_scalar(Y, Ne, seed=s)[1] - ms) ** 2)) for s in range(20)]
        errs.append(np.mean(e))
    slope = np.polyfit(np.log(sizes), np.log(errs), 1)[0]
    assert -0.65 <= slope <= -0.35


def test_last_step_equals_analysis():
    Y = scalar_problem()
    res, smoothed = run_scalar(Y, 200)
    assert smoothed[-1] == res.means[-1, 0]


def test_means_are_ensemble_averages():
    res, _ = run_scalar(scalar_problem(), 50)
    np.testing.assert_allclose(res.means, res.analysis.mean(axis=1))
    assert res.analysis.shape == (21, 50, 1)
    assert res.forecast.shape == res.analysis.shape


def test_deterministic_per_seed():
    Y = scalar_problem()
    _, a = run_scalar(Y, 100, seed=3)
    _, b = run_scalar(Y, 100, seed=3)
    _, c = run_scalar(Y, 100, seed=4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_near_perfect_observations_tracked():
    X = simulate_rk(Lorenz63Model(), [5.0, 5.0, 25.0], 0.02, 300)
    cfg = EnRTSConfig(ensemble_size=100, obs_variance=1e-12)
    res = enkf_forward(X, Lorenz63Model(), cfg)
    assert np.sqrt(np.mean((res.means - X.states) ** 2)) <= 1e-3


def test_lorenz63_filter_beats_measurements():
    X = lorenz63_benchmark(steps=500)
    Y = corrupt(X, NoiseSpec("white", 1.0, seed=1))
    sx2 = state_variance(X)
    cfg = EnRTSConfig(ensemble_size=500, obs_variance=sx2, initial_mean=tuple(X.states[0]),
                      initial_variance=sx2, seed=1)
    res = enkf_forward(Y, Lorenz63Model(), cfg)
    smoothed = enrts_smooth(Y, Lorenz63Model(), cfg)
    meas = np.sqrt(np.mean((Y.states - X.states) ** 2))
    assert np.sqrt(np.mean((res.means - X.states) ** 2)) < meas
    assert np.sqrt(np.mean((smoothed.states - X.states) ** 2)) < meas


def test_degenerate_ensemble_is_regularized():
    # zero spread everywhere: the backward gain solve is singular
    Y = Trajectory.uniform(np.zeros((5, 2)), 0.1)
    cfg = EnRTSConfig(ensemble_size=4, process_scale=0.0, obs_variance=0.0, initial_variance=0.0)
    res = enkf_forward(Y, LinearModel(theta=[-1.0, 0.0, 0.0, -1.0]), cfg)
    out = enrts_backward(res)
    assert res.regularized_steps
    assert np.all(np.isfinite(out.states))


@pytest.mark.parametrize("kwargs", [{"ensemble_size": 1}, {"process_scale": -1.0},
                                    {"obs_variance": np.nan}, {"initial_variance": -2.0}])
def test_invalid_config(kwargs):
    with pytest.raises(InvalidData):
        EnRTSConfig(**kwargs)


def test_missing_obs_variance():
    with pytest.raises(InvalidData):
        enkf_forward(scalar_problem(), LinearModel(theta=[-1.0]), EnRTSConfig())


def test_analysis_mean_is_kalman_update_of_sample_statistics():
    X = simulate_rk(Lorenz63Model(), [5.0, 5.0, 25.0], 0.02, 30)
    Y = corrupt(X, NoiseSpec("white", 0.1, seed=2))
    cfg = EnRTSConfig(ensemble_size=40, obs_variance=2.0, seed=2)
    res = enkf_forward(Y, Lorenz63Model(), cfg)
    for j in (0, 10, 30):
        Ef = res.forecast[j]
        P = np.cov(Ef, rowvar=False)
        K = P @ np.linalg.inv(P + 2.0 * np.eye(3))
        mf = Ef.mean(axis=0)
        np.testing.assert_allclose(res.means[j], mf + K @ (Y.states[j] - mf), atol=1e-10)


@pytest.mark.slow
def test_smoother_beats_filter_on_lorenz63():
    X = lorenz63_benchmark(steps=500)
    sx2 = state_variance(X)
    gains = []
    for seed in range(10):
        Y = corrupt(X, NoiseSpec("white", 1.0, seed=seed))
        cfg = EnRTSConfig(obs_variance=sx2, initial_mean=tuple(X.states[0]), initial_variance=sx2, seed=seed)
        res = enkf_forward(Y, Lorenz63Model(), cfg)
        sm = enrts_backward(res)
        gains.append(np.sqrt(np.mean((sm.states - X.states) ** 2)) - np.sqrt(np.mean((res.means - X.states) ** 2)))
    assert np.median(gains) <= 0
