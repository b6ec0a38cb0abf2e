"""Exact denoising posteriors for diffused 1-D Gaussian mixtures.

A mixture pushed through the forward process stays a mixture, and the
reverse transition q(x_{t-1} | x_t) between any two noise levels is again
a mixture with closed-form components. This gives ground truth for how
the denoising distribution changes shape as the step gap grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _log_normal(x, mean, var):
    return -0.5 * (x - mean) ** 2 / var - 0.5 * np.log(var) - _LOG_SQRT_2PI


@dataclass(frozen=True)
class GaussianMixture1D:
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        s = np.asarray(self.stds, dtype=np.float64)
        if not (w.shape == m.shape == s.shape) or w.ndim != 1 or w.size == 0:
            raise ValueError("weights, means and stds must be parallel 1-D lists")
        if np.any(w <= 0) or abs(w.sum() - 1.0) >= 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(s <= 0):
            raise ValueError("stds must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)

    @classmethod
    def from_unnormalized(cls, weights, means, stds) -> "GaussianMixture1D":
        w = np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
        w[-1] = 1.0 - w[:-1].sum()
        return cls(w, means, stds)

    @property
    def variances(self) -> np.ndarray:
        return self.stds**2

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def std(self) -> float:
        m = self.mean()
        return float(np.sqrt(self.weights @ (self.variances + (self.means - m) ** 2)))

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)[..., None]
        return np.exp(_log_normal(x, self.means, self.variances)) @ self.weights

    def dpdf(self, x) -> np.ndarray:
        """Derivative of the density."""
        x = np.asarray(x, dtype=np.float64)[..., None]
        comp = np.exp(_log_normal(x, self.means, self.variances))
        return (comp * (-(x - self.means) / self.variances)) @ self.weights

    def support(self, width: float = 8.0) -> tuple[float, float]:
        lo = float(np.min(self.means - width * self.stds))
        hi = float(np.max(self.means + width * self.stds))
        return lo, hi


@dataclass(frozen=True)
class PosteriorResult:
    mixture: GaussianMixture1D
    mode_locations: np.ndarray
    is_multimodal: bool


def diffuse_gmm(data: GaussianMixture1D, abar: float) -> GaussianMixture1D:
    """Marginal of x_t = sqrt(abar) x_0 + sqrt(1 - abar) eps."""
    if not 0.0 < abar <= 1.0:
        raise ValueError("abar must lie in (0, 1]")
    return GaussianMixture1D(
        data.weights.copy(),
        np.sqrt(abar) * data.means,
        np.sqrt(abar * data.variances + (1.0 - abar)),
    )


def _check_levels(abar_t: float, abar_prev: float) -> None:
    if not 0.0 < abar_t < abar_prev <= 1.0:
        raise ValueError("need 0 < abar_t < abar_prev <= 1")


def posterior_mixture(data: GaussianMixture1D, abar_t: float, abar_prev: float, x_t: float) -> GaussianMixture1D:
    """q(x_prev | x_t) as a mixture, without mode analysis."""
    _check_levels(abar_t, abar_prev)
    prev = diffuse_gmm(data, abar_prev)
    r = abar_t / abar_prev
    lik_var = 1.0 - r
    # component-wise Gaussian conditioning of x_prev on x_t = sqrt(r) x_prev + noise
    prec = 1.0 / prev.variances + r / lik_var
    var = 1.0 / prec
    mean = var * (prev.means / prev.variances + np.sqrt(r) * x_t / lik_var)
    marg = diffuse_gmm(data, abar_t)
    logw = np.log(data.weights) + _log_normal(x_t, marg.means, marg.variances)
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    w[np.argmax(w)] += 1.0 - w.sum()
    # components with vanishing responsibility are dropped (weights must be > 0)
    keep = w > 0
    w = w[keep] / w[keep].sum()
    return GaussianMixture1D(w, mean[keep], np.sqrt(var[keep]))


def exact_posterior(data: GaussianMixture1D, abar_t: float, abar_prev: float, x_t: float) -> PosteriorResult:
    mix = posterior_mixture(data, abar_t, abar_prev, x_t)
    _, modes = count_modes(mix)
    return PosteriorResult(mix, modes, len(modes) > 1)


def responsibilities(data: GaussianMixture1D, abar_t: float, x_t: float) -> np.ndarray:
    """Posterior component probabilities p(k | x_t) (all kept, may underflow to 0)."""
    marg = diffuse_gmm(data, abar_t)
    logw = np.log(data.weights) + _log_normal(x_t, marg.means, marg.variances)
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def default_grid(data: GaussianMixture1D, abar_prev: float, size: int = 20001) -> np.ndarray:
    """Grid spanning +-8 standard deviations of the previous-step marginal."""
    prev = diffuse_gmm(data, abar_prev)
    lo, hi = prev.support(8.0)
    m, s = prev.mean(), prev.std()
    lo, hi = min(lo, m - 8 * s), max(hi, m + 8 * s)
    return np.linspace(lo, hi, size)


def quadrature_posterior(
    data: GaussianMixture1D,
    abar_t: float,
    abar_prev: float,
    x_t: float,
    grid: int | np.ndarray = 20001,
) -> tuple[np.ndarray, np.ndarray]:
    """Brute-force q(x_prev | x_t) on a grid, normalized by the trapezoid rule.

    Evaluates the prior marginal times the one-jump transition density on
    every grid point; nothing is shared with :func:`posterior_mixture`.
    """
    _check_levels(abar_t, abar_prev)
    xs = default_grid(data, abar_prev, grid) if np.isscalar(grid) else np.asarray(grid, dtype=np.float64)
    if xs.ndim != 1 or xs.size < 3 or np.any(np.diff(xs) <= 0):
        raise ValueError("grid must be a strictly increasing 1-D array of >= 3 points")
    r = abar_t / abar_prev
    w, mu, sd = data.weights, data.means, data.stds
    prior = np.zeros_like(xs)
    for k in range(w.size):
        v = abar_prev * sd[k] ** 2 + 1.0 - abar_prev
        prior += w[k] * np.exp(-0.5 * (xs - np.sqrt(abar_prev) * mu[k]) ** 2 / v) / np.sqrt(2 * np.pi * v)
    lik = np.exp(-0.5 * (x_t - np.sqrt(r) * xs) ** 2 / (1.0 - r))
    dens = prior * lik
    mass = np.trapezoid(dens, xs)
    if not mass > 0:
        raise ValueError("posterior has no mass on the grid")
    return xs, dens / mass


def count_modes(target, grid_size: int = 10000) -> tuple[int, np.ndarray]:
    """Local maxima of a mixture density or of sampled (grid, density).

    For a mixture the analytic derivative is evaluated over +-8 component
    stds; every + to - sign change brackets a mode, which is then refined
    by bisection. For sampled densities runs of equal values are merged
    first, so a peak that falls between two grid points counts once; the
    centre of the top run is reported.
    """
    if isinstance(target, GaussianMixture1D):
        lo, hi = target.support(8.0)
        xs = np.linspace(lo, hi, grid_size)
        d = target.pdf(xs)
        g = target.dpdf(xs)
        # ignore numerically empty regions so underflow plateaus do not count
        floor = d.max() * 1e-12
        cand = np.nonzero((g[:-1] > 0) & (g[1:] <= 0) & (np.maximum(d[:-1], d[1:]) > floor))[0]
        modes = []
        for i in cand:
            a, b = xs[i], xs[i + 1]
            for _ in range(60):
                m = 0.5 * (a + b)
                if target.dpdf(m) > 0:
                    a = m
                else:
                    b = m
            modes.append(0.5 * (a + b))
        return len(modes), np.array(modes)
    xs, d = (np.asarray(a, dtype=np.float64) for a in target)
    if xs.shape != d.shape or xs.size < 3:
        raise ValueError("need matching grid and density arrays of length >= 3")
    floor = d.max() * 1e-12
    # run-length merge of ties
    starts = np.concatenate([[0], np.nonzero(np.diff(d) != 0)[0] + 1])
    ends = np.concatenate([starts[1:], [d.size]])
    v = d[starts]
    inner = (v[1:-1] > v[:-2]) & (v[1:-1] > v[2:]) & (v[1:-1] > floor)
    idx = np.nonzero(inner)[0] + 1
    modes = [0.5 * (xs[starts[k]] + xs[ends[k] - 1]) for k in idx]
    return len(modes), np.array(modes)
