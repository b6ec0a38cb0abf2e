"""Noise schedules and closed-form Gaussian diffusion algebra.

``alpha_bars[t]`` is the surviving signal fraction after ``t`` forward
steps. Arrays are stored with a leading index-0 entry so that ``betas[t]``
and ``sigmas[t]`` are addressed by the step number directly.

All step functions accept either a scalar step or an integer array with one
step per batch row; coefficients broadcast over the trailing axes of ``x``.
Inputs may be numpy arrays or :class:`~fastgesture.numerics.Tensor`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("linear", "geometric-alpha")
VARIANCES = ("beta", "posterior")
TERMINAL_ALPHA_BAR = 1e-4


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray
    kind: str = "geometric-alpha"
    variance: str = "beta"

    def posterior_variance(self, t):
        """Variance of q(x_{t-1} | x_t, x_0)."""
        t = np.asarray(t)
        ab = self.alpha_bars
        return self.betas[t] * (1.0 - ab[t - 1]) / (1.0 - ab[t])

    def to_text(self) -> str:
        """Plain key=value serialization (round-trips exactly)."""
        lines = [f"T={self.T}", f"kind={self.kind}", f"variance={self.variance}"]
        for name in ("betas", "alpha_bars", "sigmas"):
            vals = ",".join(repr(float(v)) for v in getattr(self, name))
            lines.append(f"{name}={vals}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NoiseSchedule":
        kv = dict(line.split("=", 1) for line in text.strip().splitlines() if "=" in line)
        arrays = {
            k: np.array([float(v) for v in kv[k].split(",")]) for k in ("betas", "alpha_bars", "sigmas")
        }
        return cls(T=int(kv["T"]), kind=kv["kind"], variance=kv["variance"], **arrays)


def make_schedule(T: int, kind: str = "geometric-alpha", variance: str = "beta") -> NoiseSchedule:
    """Build a ``T``-step schedule.

    ``geometric-alpha`` sets ``alpha_bars[t] = exp(-c t / T)`` with
    ``alpha_bars[T] = 1e-4``. ``linear`` spaces betas linearly between
    ``1e-4 * s`` and ``0.02 * s`` with ``s = 1000 / T`` (clipped below 1), so
    every T keeps roughly the same total noise as the classic 1000-step
    ramp.

    ``variance="beta"`` gives ``sigmas**2 == betas``; ``"posterior"`` uses
    the exact posterior variance; at t = 1 it is zero.
    """
    if not isinstance(T, (int, np.integer)) or not 1 <= T <= 1000:
        raise ValueError(f"T must be an integer in [1, 1000], got {T!r}")
    if kind not in KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}")
    if variance not in VARIANCES:
        raise ValueError(f"unknown variance mode {variance!r}")
    t = np.arange(1, T + 1, dtype=np.float64)
    if kind == "geometric-alpha":
        c = np.log(1.0 / TERMINAL_ALPHA_BAR)
        ab = np.concatenate([[1.0], np.exp(-c * t / T)])
        betas = np.concatenate([[0.0], 1.0 - ab[1:] / ab[:-1]])
        # recompute the product so the definitional identity holds to rounding
        ab = np.concatenate([[1.0], np.cumprod(1.0 - betas[1:])])
    else:
        s = 1000.0 / T
        b = 1e-4 * s + (0.02 - 1e-4) * s * t / T
        betas = np.concatenate([[0.0], np.clip(b, 1e-8, 0.9999)])
        ab = np.concatenate([[1.0], np.cumprod(1.0 - betas[1:])])
    if variance == "beta":
        sigmas = np.sqrt(betas)
    else:
        var = np.zeros_like(betas)
        var[1:] = betas[1:] * (1.0 - ab[:-1]) / (1.0 - ab[1:])
        sigmas = np.sqrt(var)
    return NoiseSchedule(T=int(T), betas=betas, alpha_bars=ab, sigmas=sigmas, kind=kind, variance=variance)


def _steps(t, schedule: NoiseSchedule, low: int) -> np.ndarray:
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        raise TypeError("time steps must be integers")
    if np.any(t < low) or np.any(t > schedule.T):
        raise ValueError(f"time step outside [{low}, {schedule.T}]")
    return t


def _coef(values: np.ndarray, x) -> np.ndarray:
    """Shape per-row coefficients so they broadcast against ``x``."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0:
        return values
    return values.reshape(values.shape + (1,) * (len(np.shape(getattr(x, "data", x))) - values.ndim))


def forward_step(x_prev, t, schedule: NoiseSchedule, eps):
    """One forward noising step q(x_t | x_{t-1})."""
    t = _steps(t, schedule, 1)
    b = schedule.betas[t]
    return _coef(np.sqrt(1.0 - b), x_prev) * x_prev + _coef(np.sqrt(b), eps) * eps


def q_sample(x0, t, schedule: NoiseSchedule, eps):
    """Closed-form marginal q(x_t | x_0)."""
    return _q_sample(x0, _steps(t, schedule, 1), schedule, eps)


def _q_sample(x0, t, schedule: NoiseSchedule, eps):
    # internal variant that also accepts t = 0 (returns x0 scaled by 1)
    ab = schedule.alpha_bars[t]
    return _coef(np.sqrt(ab), x0) * x0 + _coef(np.sqrt(1.0 - ab), eps) * eps


def posterior_coefficients(t, schedule: NoiseSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Weights of (x0_hat, x_t) in the mean of q(x_{t-1} | x_t, x0_hat)."""
    t = _steps(t, schedule, 1)
    ab_t = schedule.alpha_bars[t]
    ab_prev = schedule.alpha_bars[t - 1]
    b = schedule.betas[t]
    c0 = np.sqrt(ab_prev) * b / (1.0 - ab_t)
    ct = np.sqrt(1.0 - b) * (1.0 - ab_prev) / (1.0 - ab_t)
    return c0, ct


def posterior_step(x_t, x0_hat, t, schedule: NoiseSchedule, z):
    """Sample x_{t-1} from the Gaussian posterior given the clean estimate.

    At t = 1 the noise term is dropped and the clean estimate is returned.
    """
    if np.shape(getattr(x_t, "data", x_t)) != np.shape(getattr(x0_hat, "data", x0_hat)):
        raise ValueError("x_t and x0_hat shapes differ")
    t = _steps(t, schedule, 1)
    c0, ct = posterior_coefficients(t, schedule)
    # exact identity at t = 1 (c0 == 1, ct == 0 up to rounding)
    c0 = np.where(t == 1, 1.0, c0)
    ct = np.where(t == 1, 0.0, ct)
    sig = np.where(t == 1, 0.0, schedule.sigmas[t])
    out = _coef(c0, x0_hat) * x0_hat + _coef(ct, x_t) * x_t
    if np.any(sig > 0):
        out = out + _coef(sig, z) * z
    return out


def ddim_sigma(t, t_next, schedule: NoiseSchedule, eta: float) -> np.ndarray:
    ab_t = schedule.alpha_bars[t]
    ab_n = schedule.alpha_bars[t_next]
    return eta * np.sqrt((1.0 - ab_n) / (1.0 - ab_t) * (1.0 - ab_t / ab_n))


def ddim_step(x_t, x0_hat, t, t_next, schedule: NoiseSchedule, eta: float = 0.0, z=None):
    """Jump from step ``t`` to ``t_next < t``; ``eta = 0`` is deterministic."""
    t = _steps(t, schedule, 1)
    t_next = _steps(t_next, schedule, 0)
    if np.any(t_next >= t):
        raise ValueError("t_next must be smaller than t")
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    ab_t = schedule.alpha_bars[t]
    ab_n = schedule.alpha_bars[t_next]
    eps_hat = (x_t - _coef(np.sqrt(ab_t), x0_hat) * x0_hat) * _coef(1.0 / np.sqrt(1.0 - ab_t), x_t)
    s = ddim_sigma(t, t_next, schedule, eta)
    dir_coef = np.sqrt(np.maximum(1.0 - ab_n - s * s, 0.0))
    out = _coef(np.sqrt(ab_n), x0_hat) * x0_hat + _coef(dir_coef, eps_hat) * eps_hat
    if np.any(s > 0):
        if z is None:
            raise ValueError("eta > 0 needs an explicit noise draw z")
        out = out + _coef(s, z) * z
    return out


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    """Evenly spaced, strictly decreasing indices from T down to 0."""
    if not 1 <= steps <= T:
        raise ValueError(f"steps must lie in [1, {T}]")
    idx = np.round(np.linspace(T, 0, steps + 1)).astype(int)
    if np.any(np.diff(idx) >= 0):
        raise ValueError("step subset is not strictly decreasing")
    return idx
