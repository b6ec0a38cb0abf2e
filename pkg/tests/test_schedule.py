import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastgesture.numerics import Tensor
from fastgesture.schedule import (
    NoiseSchedule,
    ddim_sigma,
    ddim_step,
    ddim_timesteps,
    forward_step,
    make_schedule,
    posterior_coefficients,
    posterior_step,
    q_sample,
)

KINDS = ("geometric-alpha", "linear")


def _custom(betas) -> NoiseSchedule:
    betas = np.concatenate([[0.0], np.asarray(betas, dtype=float)])
    ab = np.concatenate([[1.0], np.cumprod(1 - betas[1:])])
    return NoiseSchedule(T=len(betas) - 1, betas=betas, alpha_bars=ab, sigmas=np.sqrt(betas))


# ---------------------------------------------------------------- construction


def test_single_step_geometric_schedule():
    s = make_schedule(1, "geometric-alpha")
    assert s.betas[1] == pytest.approx(1 - 1e-4, abs=1e-15)
    assert s.alpha_bars[1] == pytest.approx(1e-4, rel=1e-12)


def test_geometric_midpoint():
    s = make_schedule(10, "geometric-alpha")
    assert s.alpha_bars[5] == pytest.approx(1e-2, rel=1e-12)


@settings(max_examples=60)
@given(st.integers(1, 1000), st.sampled_from(KINDS), st.sampled_from(["beta", "posterior"]))
def test_schedule_invariants(T, kind, variance):
    s = make_schedule(T, kind, variance)
    assert s.alpha_bars[0] == 1.0
    assert np.abs(np.cumprod(1 - s.betas[1:]) - s.alpha_bars[1:]).max() < 1e-12
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert s.alpha_bars[T] < 1e-3
    assert np.all((s.betas[1:] > 0) & (s.betas[1:] < 1))
    if variance == "beta":
        assert np.array_equal(s.sigmas[1:] ** 2, s.betas[1:]) or np.allclose(s.sigmas[1:] ** 2, s.betas[1:], rtol=1e-15, atol=0)


def test_geometric_alpha_terminal_value():
    for T in (1, 5, 10, 20, 1000):
        assert make_schedule(T).alpha_bars[T] == pytest.approx(1e-4, rel=1e-9)


def test_default_variance_is_beta():
    s = make_schedule(20)
    assert s.variance == "beta"
    assert np.allclose(s.sigmas**2, s.betas, rtol=1e-14, atol=0)


def test_posterior_variance_mode():
    s = make_schedule(10, variance="posterior")
    assert s.sigmas[1] == 0.0
    assert np.allclose(s.sigmas[2:] ** 2, s.posterior_variance(np.arange(2, 11)), rtol=1e-14)


@pytest.mark.parametrize("T", [0, 1001, -3, 2.5])
def test_schedule_range_errors(T):
    with pytest.raises(ValueError):
        make_schedule(T)


def test_unknown_kind():
    with pytest.raises(ValueError):
        make_schedule(10, "cosine")


def test_text_round_trip_is_exact():
    for kind in KINDS:
        s = make_schedule(37, kind, "posterior")
        r = NoiseSchedule.from_text(s.to_text())
        assert r.T == s.T and r.kind == s.kind and r.variance == s.variance
        for name in ("betas", "alpha_bars", "sigmas"):
            assert np.array_equal(getattr(r, name), getattr(s, name))


# ---------------------------------------------------------------- forward process


def test_forward_step_identity_and_pure_noise():
    s = _custom([0.0, 1.0])
    x = np.array([1.0, -2.0, 3.0])
    eps = np.array([0.3, 0.1, -0.7])
    assert np.array_equal(forward_step(x, 1, s, eps), x)
    assert np.array_equal(forward_step(x, 2, s, eps), eps)


@pytest.mark.parametrize("t", [0, 11])
def test_forward_and_q_sample_range(t):
    s = make_schedule(10)
    with pytest.raises(ValueError):
        forward_step(np.zeros(2), t, s, np.zeros(2))
    with pytest.raises(ValueError):
        q_sample(np.zeros(2), t, s, np.zeros(2))


def test_q_sample_limits():
    s = make_schedule(1000, "linear")
    x0 = np.array([0.5, -1.0])
    eps = np.array([1.0, 1.0])
    assert np.allclose(q_sample(x0, 1, s, eps), x0, atol=0.011)
    assert np.array_equal(q_sample(np.zeros(2), 7, s, eps), np.sqrt(1 - s.alpha_bars[7]) * eps)


def test_terminal_signal_coefficient():
    s = make_schedule(20)
    out = q_sample(np.array([1.0]), 20, s, np.array([0.0]))
    assert out[0] == pytest.approx(0.01, rel=1e-9)


@pytest.mark.parametrize("kind,T,t", [("geometric-alpha", 10, 6), ("linear", 50, 37), ("geometric-alpha", 5, 5)])
def test_forward_composition_matches_marginal(kind, T, t):
    s = make_schedule(T, kind)
    rng = np.random.default_rng(11)
    n, x0 = 100_000, 1.3
    x = np.full(n, x0)
    for k in range(1, t + 1):
        x = forward_step(x, k, s, rng.standard_normal(n))
    mean, var = np.sqrt(s.alpha_bars[t]) * x0, 1 - s.alpha_bars[t]
    se_mean = np.sqrt(var / n)
    se_var = var * np.sqrt(2 / (n - 1))
    assert abs(x.mean() - mean) < 3 * se_mean
    assert abs(x.var(ddof=1) - var) < 3 * se_var


def test_per_row_steps_and_tensor_inputs():
    s = make_schedule(10)
    x = np.ones((3, 2))
    eps = np.zeros((3, 2))
    t = np.array([1, 5, 10])
    out = q_sample(x, t, s, eps)
    assert np.allclose(out[:, 0], np.sqrt(s.alpha_bars[t]))
    tout = q_sample(Tensor(x), t, s, eps)
    assert np.array_equal(tout.data, out)


# ---------------------------------------------------------------- posterior


@given(st.integers(0, 10_000))
def test_posterior_step_at_t1_returns_clean_estimate_exactly(seed):
    rng = np.random.default_rng(seed)
    for kind in KINDS:
        for variance in ("beta", "posterior"):
            s = make_schedule(int(rng.integers(1, 50)), kind, variance)
            x_t, x0, z = rng.normal(size=(3, 4, 5))
            assert np.array_equal(posterior_step(x_t, x0, 1, s, z), x0)


def test_posterior_step_errors():
    s = make_schedule(10)
    with pytest.raises(ValueError):
        posterior_step(np.zeros(3), np.zeros(3), 0, s, np.zeros(3))
    with pytest.raises(ValueError):
        posterior_step(np.zeros(3), np.zeros(4), 2, s, np.zeros(3))
    with pytest.raises(TypeError):
        posterior_step(np.zeros(3), np.zeros(3), 2.0, s, np.zeros(3))


@pytest.mark.parametrize("x0,x_t,t", [(0.8, -0.3, 3), (-1.5, 0.4, 7), (2.0, 2.5, 10)])
def test_posterior_mean_matches_quadrature(x0, x_t, t):
    s = make_schedule(10)
    ab_prev, b = s.alpha_bars[t - 1], s.betas[t]
    grid = np.linspace(-12, 12, 400_001)
    # q(x_{t-1} | x0) q(x_t | x_{t-1})
    log_w = -0.5 * (grid - np.sqrt(ab_prev) * x0) ** 2 / (1 - ab_prev) - 0.5 * (x_t - np.sqrt(1 - b) * grid) ** 2 / b
    w = np.exp(log_w - log_w.max())
    mean = np.trapezoid(grid * w, grid) / np.trapezoid(w, grid)
    got = posterior_step(np.array([x_t]), np.array([x0]), t, s, np.array([0.0]))[0]
    assert got == pytest.approx(mean, abs=1e-8)


def test_posterior_coefficients_sum_to_one_as_beta_vanishes():
    for tiny in (1e-6, 1e-9, 1e-12):
        s = _custom([0.3, tiny])
        c0, ct = posterior_coefficients(2, s)
        assert c0 + ct == pytest.approx(1.0, abs=10 * tiny)


@pytest.mark.parametrize("kind,T,t", [("geometric-alpha", 10, 4), ("geometric-alpha", 5, 5), ("linear", 100, 60)])
def test_marginalizing_the_posterior_reproduces_the_forward_marginal(kind, T, t):
    s = make_schedule(T, kind, "posterior")
    rng = np.random.default_rng(5)
    n, x0 = 100_000, -0.9
    x_t = q_sample(np.full(n, x0), t, s, rng.standard_normal(n))
    x_prev = posterior_step(x_t, np.full(n, x0), t, s, rng.standard_normal(n))
    mean, var = np.sqrt(s.alpha_bars[t - 1]) * x0, 1 - s.alpha_bars[t - 1]
    assert abs(x_prev.mean() - mean) < 3 * np.sqrt(var / n)
    assert abs(x_prev.var(ddof=1) - var) < 3 * var * np.sqrt(2 / (n - 1))


# ---------------------------------------------------------------- DDIM


def test_ddim_to_zero_returns_clean_estimate():
    s = make_schedule(20)
    rng = np.random.default_rng(0)
    x_t, x0 = rng.normal(size=(2, 6))
    for t in (1, 7, 20):
        assert np.array_equal(ddim_step(x_t, x0, t, 0, s, 0.0), x0)


def test_ddim_eta0_is_deterministic():
    s = make_schedule(20)
    rng = np.random.default_rng(1)
    x_t, x0 = rng.normal(size=(2, 3, 4))
    a = ddim_step(x_t, x0, 15, 6, s)
    b = ddim_step(x_t.copy(), x0.copy(), 15, 6, s)
    assert a.tobytes() == b.tobytes()


def test_ddim_errors():
    s = make_schedule(20)
    x = np.zeros(3)
    with pytest.raises(ValueError):
        ddim_step(x, x, 5, 5, s)
    with pytest.raises(ValueError):
        ddim_step(x, x, 5, 8, s)
    with pytest.raises(ValueError):
        ddim_step(x, x, 5, 2, s, eta=1.5)
    with pytest.raises(ValueError):
        ddim_step(x, x, 5, 2, s, eta=0.5)  # stochastic without a noise draw


@pytest.mark.parametrize("kind,T", [("geometric-alpha", 10), ("linear", 1000), ("geometric-alpha", 20)])
def test_ddim_eta1_single_step_equals_posterior_step(kind, T):
    s = make_schedule(T, kind, "posterior")
    rng = np.random.default_rng(2)
    x_t, x0 = rng.normal(size=(2, 50))
    for t in range(2, T + 1, max(1, T // 10)):
        mean_ddim = ddim_step(x_t, x0, t, t - 1, s, 1.0, np.zeros(50))
        mean_post = posterior_step(x_t, x0, t, s, np.zeros(50))
        assert np.allclose(mean_ddim, mean_post, atol=1e-12)
        assert ddim_sigma(t, t - 1, s, 1.0) == pytest.approx(s.sigmas[t], rel=1e-10)


def test_ddim_timesteps():
    ts = ddim_timesteps(20, 5)
    assert ts[0] == 20 and ts[-1] == 0 and len(ts) == 6
    assert np.all(np.diff(ts) < 0)
    assert np.array_equal(ddim_timesteps(10, 10), np.arange(10, -1, -1))
    with pytest.raises(ValueError):
        ddim_timesteps(10, 11)


# Probability-flow oracle for Gaussian data N(m, s^2). In x̄ = x / sqrt(ᾱ),
# σ̄ = sqrt((1 - ᾱ) / ᾱ) the flow is dx̄/dσ̄ = (x̄ - m) σ̄ / (s² + σ̄²).

M, S = 0.7, 0.5


def _x0_exact(x, ab):
    return M + np.sqrt(ab) * S * S / (ab * S * S + 1 - ab) * (x - np.sqrt(ab) * M)


def _rk4_flow(xbar, sb_from, sb_to, n=1000):
    def f(x, sb):
        return (x - M) * sb / (S * S + sb * sb)

    h = (sb_to - sb_from) / n
    x, sb = xbar, sb_from
    for _ in range(n):
        k1 = f(x, sb)
        k2 = f(x + h / 2 * k1, sb + h / 2)
        k3 = f(x + h / 2 * k2, sb + h / 2)
        k4 = f(x + h * k3, sb + h)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        sb = sb + h
    return x


def _ddim_run(s, steps, x_T):
    x = x_T.copy()
    ts = ddim_timesteps(s.T, steps)
    for t, tn in zip(ts[:-1], ts[1:]):
        x = ddim_step(x, _x0_exact(x, s.alpha_bars[t]), int(t), int(tn), s)
    return x


def test_rk4_oracle_agrees_with_closed_form_flow():
    s = make_schedule(1000, "linear")
    sb_T = np.sqrt((1 - s.alpha_bars[-1]) / s.alpha_bars[-1])
    x_T = np.linspace(-1, 1, 9)
    ref = _rk4_flow(x_T / np.sqrt(s.alpha_bars[-1]), sb_T, 0.0)
    closed = M + (x_T / np.sqrt(s.alpha_bars[-1]) - M) * S / np.sqrt(S * S + sb_T * sb_T)
    assert np.abs(ref - closed).max() < 1e-4


def test_ddim_converges_to_the_probability_flow_trajectory():
    s = make_schedule(1000, "linear")
    sb_T = np.sqrt((1 - s.alpha_bars[-1]) / s.alpha_bars[-1])
    x_T = np.linspace(-1, 1, 9)
    ref = _rk4_flow(x_T / np.sqrt(s.alpha_bars[-1]), sb_T, 0.0)
    errs = [np.abs(_ddim_run(s, n, x_T) - ref).max() for n in (250, 500, 1000)]
    # first-order integrator: halving the step halves the error
    assert 0.4 < errs[1] / errs[0] < 0.6 and 0.4 < errs[2] / errs[1] < 0.6
    # at the finest admissible resolution the deviation is about 2e-3 per unit of x_T
    assert errs[2] < 2e-3
