import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastgesture.oracle import (
    GaussianMixture1D,
    count_modes,
    default_grid,
    diffuse_gmm,
    exact_posterior,
    posterior_mixture,
    quadrature_posterior,
    responsibilities,
)
from fastgesture.schedule import NoiseSchedule, posterior_step

BIMODAL = GaussianMixture1D([0.5, 0.5], [-1.0, 1.0], [0.1, 0.1])


def _random_mixture(rng):
    k = int(rng.integers(1, 5))
    return GaussianMixture1D.from_unnormalized(rng.uniform(0.1, 1, k), rng.uniform(-2, 2, k), rng.uniform(0.05, 1.0, k))


def _random_levels(rng):
    abar_prev = float(rng.uniform(0.05, 1.0))
    abar_t = float(abar_prev * rng.uniform(0.01, 0.99))
    return abar_t, abar_prev


# ---------------------------------------------------------------- mixture type


def test_mixture_validation():
    with pytest.raises(ValueError):
        GaussianMixture1D([0.5, 0.4], [0, 1], [1, 1])
    with pytest.raises(ValueError):
        GaussianMixture1D([0.5, 0.5], [0, 1], [1, 0])
    with pytest.raises(ValueError):
        GaussianMixture1D([1.0], [0, 1], [1, 1])
    with pytest.raises(ValueError):
        GaussianMixture1D([1.5, -0.5], [0, 1], [1, 1])


@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=8))
def test_normalized_weights_sum_to_one(ws):
    g = GaussianMixture1D.from_unnormalized(ws, np.zeros(len(ws)), np.ones(len(ws)))
    assert abs(g.weights.sum() - 1) < 1e-12


def test_pdf_integrates_to_one_and_derivative_matches():
    g = GaussianMixture1D([0.3, 0.7], [-1.0, 2.0], [0.5, 1.2])
    xs = np.linspace(-12, 14, 200_001)
    assert np.trapezoid(g.pdf(xs), xs) == pytest.approx(1.0, abs=1e-10)
    h = 1e-6
    pts = np.array([-2.0, 0.1, 1.7])
    assert np.allclose(g.dpdf(pts), (g.pdf(pts + h) - g.pdf(pts - h)) / (2 * h), atol=1e-8)


# ---------------------------------------------------------------- diffusion


def test_diffuse_identity_and_noise_limit():
    g = diffuse_gmm(BIMODAL, 1.0)
    assert np.array_equal(g.means, BIMODAL.means) and np.array_equal(g.stds, BIMODAL.stds)
    n = diffuse_gmm(BIMODAL, 1e-14)
    assert np.allclose(n.means, 0, atol=1e-6) and np.allclose(n.stds, 1, atol=1e-12)


def test_diffuse_worked_example():
    g = diffuse_gmm(BIMODAL, 0.25)
    assert np.allclose(g.means, [-0.5, 0.5], rtol=1e-15)
    assert np.allclose(g.variances, [0.7525, 0.7525], rtol=1e-14)
    assert np.array_equal(g.weights, BIMODAL.weights)


@pytest.mark.parametrize("abar", [0.0, -0.1, 1.1])
def test_diffuse_range(abar):
    with pytest.raises(ValueError):
        diffuse_gmm(BIMODAL, abar)


def test_diffused_density_matches_monte_carlo():
    rng = np.random.default_rng(0)
    n = 200_000
    comp = rng.integers(0, 2, n)
    x0 = BIMODAL.means[comp] + BIMODAL.stds[comp] * rng.standard_normal(n)
    abar = 0.3
    xt = np.sqrt(abar) * x0 + np.sqrt(1 - abar) * rng.standard_normal(n)
    hist, edges = np.histogram(xt, bins=40, range=(-3, 3), density=False)
    centers = 0.5 * (edges[1:] + edges[:-1])
    expect = diffuse_gmm(BIMODAL, abar).pdf(centers) * n * (edges[1] - edges[0])
    z = (hist - expect) / np.sqrt(expect)
    assert np.abs(z).max() < 5


# ---------------------------------------------------------------- posterior


def test_level_ordering_errors():
    for at, ap in [(0.5, 0.5), (0.6, 0.5), (0.0, 0.5), (0.2, 1.2)]:
        with pytest.raises(ValueError):
            exact_posterior(BIMODAL, at, ap, 0.0)
        with pytest.raises(ValueError):
            quadrature_posterior(BIMODAL, at, ap, 0.0)


def test_single_gaussian_posterior_matches_posterior_step():
    m, s = 0.4, 0.6
    data = GaussianMixture1D([1.0], [m], [s])
    betas = np.array([0.0, 0.2, 0.35])
    ab = np.concatenate([[1.0], np.cumprod(1 - betas[1:])])
    sched = NoiseSchedule(T=2, betas=betas, alpha_bars=ab, sigmas=np.sqrt(betas))
    x_t = 0.9
    res = exact_posterior(data, ab[2], ab[1], x_t)
    assert len(res.mixture.weights) == 1 and not res.is_multimodal
    # E[x0 | x_t] for Gaussian data
    x0_hat = m + np.sqrt(ab[2]) * s * s / (ab[2] * s * s + 1 - ab[2]) * (x_t - np.sqrt(ab[2]) * m)
    mean = posterior_step(np.array([x_t]), np.array([x0_hat]), 2, sched, np.array([0.0]))[0]
    assert res.mixture.means[0] == pytest.approx(mean, abs=1e-12)
    xs, dens = quadrature_posterior(data, ab[2], ab[1], x_t)
    assert np.trapezoid(xs * dens, xs) == pytest.approx(mean, abs=1e-8)


def test_symmetric_posterior_at_zero():
    res = exact_posterior(BIMODAL, 0.3, 0.6, 0.0)
    xs = np.linspace(-3, 3, 601)
    assert np.allclose(res.mixture.pdf(xs), res.mixture.pdf(-xs), atol=1e-14)
    assert abs(res.mixture.mean()) < 1e-14


def test_one_huge_step_is_bimodal():
    res = exact_posterior(BIMODAL, 0.01, 0.99, 0.0)
    assert res.is_multimodal
    assert len(res.mode_locations) == 2
    assert np.allclose(np.sort(res.mode_locations), [-np.sqrt(0.99), np.sqrt(0.99)], atol=0.01)
    # cross-check with the brute-force density
    n, locs = count_modes(quadrature_posterior(BIMODAL, 0.01, 0.99, 0.0, 40001))
    assert n == 2 and np.allclose(np.sort(locs), np.sort(res.mode_locations), atol=1e-3)


def test_adjacent_small_step_is_unimodal():
    res = exact_posterior(BIMODAL, 0.01, 0.01 / 0.98, 0.0)
    assert not res.is_multimodal and len(res.mode_locations) == 1
    assert abs(res.mode_locations[0]) < 1e-6


@pytest.mark.parametrize("x_t", np.linspace(-2, 2, 9))
def test_small_gaps_are_unimodal_everywhere(x_t):
    for abar_t in (0.01, 0.1, 0.5, 0.9):
        for ratio in (0.99, 0.995, 0.999):
            assert count_modes(posterior_mixture(BIMODAL, abar_t, abar_t / ratio if abar_t / ratio <= 1 else 1.0, x_t))[0] == 1


def test_exact_matches_quadrature_on_random_configurations():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(60):
        data = _random_mixture(rng)
        at, ap = _random_levels(rng)
        x_t = float(rng.uniform(-2.5, 2.5))
        xs, dens = quadrature_posterior(data, at, ap, x_t)
        exact = posterior_mixture(data, at, ap, x_t).pdf(xs)
        worst = max(worst, np.abs(exact - dens).max())
    assert worst < 1e-6


def test_quadrature_total_mass_and_refinement():
    rng = np.random.default_rng(7)
    for _ in range(10):
        data = _random_mixture(rng)
        at, ap = _random_levels(rng)
        x_t = float(rng.uniform(-2, 2))
        xs, dens = quadrature_posterior(data, at, ap, x_t, 20001)
        assert np.trapezoid(dens, xs) == pytest.approx(1.0, abs=1e-6)
        xs2, dens2 = quadrature_posterior(data, at, ap, x_t, 40001)
        assert np.abs(dens2[::2] - dens).max() < 1e-8


def test_grid_covers_eight_prev_stds():
    xs = default_grid(BIMODAL, 0.5)
    prev = diffuse_gmm(BIMODAL, 0.5)
    assert xs[0] <= prev.mean() - 8 * prev.std() and xs[-1] >= prev.mean() + 8 * prev.std()


def test_bad_grid():
    with pytest.raises(ValueError):
        quadrature_posterior(BIMODAL, 0.1, 0.5, 0.0, np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        quadrature_posterior(BIMODAL, 0.1, 0.5, 0.0, np.array([0.0, 2.0, 1.0]))


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1))
def test_responsibilities_are_a_distribution(seed):
    rng = np.random.default_rng(seed)
    data = _random_mixture(rng)
    r = responsibilities(data, float(rng.uniform(1e-3, 1)), float(rng.uniform(-5, 5)))
    assert np.all(r >= 0) and abs(r.sum() - 1) < 1e-12


# ---------------------------------------------------------------- mode counting


def test_modes_single_gaussian():
    n, locs = count_modes(GaussianMixture1D([1.0], [0.7], [0.3]))
    assert n == 1 and locs[0] == pytest.approx(0.7, abs=1e-9)


def test_modes_separated_pair():
    n, locs = count_modes(GaussianMixture1D([0.5, 0.5], [-3, 3], [0.5, 0.5]))
    assert n == 2 and np.allclose(np.sort(locs), [-3, 3], atol=1e-6)


def test_modes_merged_pair():
    n, locs = count_modes(GaussianMixture1D([0.5, 0.5], [-0.5, 0.5], [1.0, 1.0]))
    assert n == 1 and abs(locs[0]) < 1e-9


def test_grid_mode_between_samples_counts_once():
    xs = np.linspace(-1, 1, 10)  # peak at 0 falls between two samples
    n, locs = count_modes((xs, np.exp(-xs**2)))
    assert n == 1 and abs(locs[0]) < 1e-12


def test_grid_mode_errors():
    with pytest.raises(ValueError):
        count_modes((np.zeros(3), np.zeros(4)))
    with pytest.raises(ValueError):
        count_modes((np.zeros(2), np.zeros(2)))


def test_mode_locations_are_derivative_sign_changes():
    rng = np.random.default_rng(3)
    for _ in range(20):
        g = _random_mixture(rng)
        _, locs = count_modes(g)
        for x in locs:
            h = 1e-5
            assert g.dpdf(x - h) > 0 > g.dpdf(x + h)
