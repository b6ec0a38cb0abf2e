"""Samplers and the latency benchmark.

All samplers start from pure noise and only see the control tracks and
the model; ground-truth motion never enters this module.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .models import GestureModel, TrackBatch
from .numerics import NumericalError
from .schedule import ddim_step, ddim_timesteps, posterior_step
from .synthdata import ControlTrack, GestureClip, inverse_kinematics

KINDS = ("gan_fewstep", "ancestral", "ddim")


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "gan_fewstep"
    steps: int | None = None  # None: every step of the model's schedule
    eta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.steps is not None and self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")

    def timesteps(self, T: int) -> np.ndarray:
        """Visited indices from T down to 0 inclusive."""
        steps = T if self.steps is None else self.steps
        if steps > T:
            raise ValueError(f"steps={steps} exceeds the schedule length T={T}")
        if self.kind == "ddim":
            return ddim_timesteps(T, steps)
        if steps != T:
            raise ValueError(f"{self.kind} sampling visits every step; got steps={steps} for T={T}")
        return np.arange(T, -1, -1)


def _check_model(model: GestureModel) -> None:
    if not model.is_finite():
        raise NumericalError("generator parameters contain NaN or Inf")


def denoise(spec: SamplerSpec, model: GestureModel, tracks: TrackBatch, rng: np.random.Generator, timings=None) -> np.ndarray:
    """Run the reverse chain for a batch; returns normalized features (B, N, n_feat).

    A fresh latent and a fresh noise draw are taken at every step.
    """
    cfg, sched = model.cfg, model.schedule
    b = len(tracks)
    ts = spec.timesteps(sched.T)
    x = rng.standard_normal((b,) + cfg.gesture_shape)
    for t, t_next in zip(ts[:-1], ts[1:]):
        t0 = time.perf_counter() if timings is not None else 0.0
        z = rng.standard_normal((b, cfg.d_z))
        x0_hat = model.predict_x0(x, z, tracks, np.full(b, t))
        noise = rng.standard_normal(x.shape)
        if spec.kind == "ddim":
            x = ddim_step(x, x0_hat, int(t), int(t_next), sched, spec.eta, noise if spec.eta > 0 else None)
        else:
            x = posterior_step(x, x0_hat, np.full(b, t), sched, noise)
        if timings is not None:
            timings.append(time.perf_counter() - t0)
    if not np.isfinite(x).all():
        raise NumericalError("sampler produced non-finite values")
    return x


def to_positions(model: GestureModel, x: np.ndarray) -> np.ndarray:
    """Normalized features (B, N, n_feat) -> joint positions (B, N, J, 2)."""
    pos = model.normalizer.decode(x)
    return pos.reshape(pos.shape[0], pos.shape[1], -1, 2)


def sample_batch(spec: SamplerSpec, model: GestureModel, tracks: Sequence[ControlTrack] | TrackBatch, rng=None) -> np.ndarray:
    """Positions (B, N, J, 2), one sample per track."""
    _check_model(model)
    tb = tracks if isinstance(tracks, TrackBatch) else model.tracks(tracks)
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    return to_positions(model, denoise(spec, model, tb, rng))


def sample(spec: SamplerSpec, model: GestureModel, track: ControlTrack, rng=None, fps: float = 20.0) -> GestureClip:
    pos = sample_batch(spec, model, [track], rng)[0]
    return GestureClip(positions=pos, angles=inverse_kinematics(pos), fps=fps)


def track_seed(master: int, track: ControlTrack) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, zlib.crc32(track.key())])


def batch_generate(spec: SamplerSpec, model: GestureModel, tracks: Sequence[ControlTrack], k: int) -> np.ndarray:
    """k samples per track, shape (len(tracks), k, N, J, 2).

    Each track has its own noise stream derived from the master seed and
    the track's content, so results do not depend on the order of tracks.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_model(model)
    out = []
    for track in tracks:
        rng = np.random.default_rng(track_seed(spec.seed, track))
        tb = model.tracks([track]).repeat(k)
        out.append(to_positions(model, denoise(spec, model, tb, rng)))
    return np.stack(out)


@dataclass
class LatencyReport:
    sampler: str
    steps: int
    reps: int
    frames: int  # frames generated per repetition
    total_ms: float  # mean wall time per repetition
    ms_per_frame: float
    step_ms: list[float] = field(default_factory=list)  # mean time per denoising step
    rep_ms: list[float] = field(default_factory=list)

    HEADER = ("sampler", "steps", "ms_per_frame", "reps", "frames", "total_ms")

    def row(self) -> list:
        return [self.sampler, self.steps, f"{self.ms_per_frame:.6f}", self.reps, self.frames, f"{self.total_ms:.4f}"]


def benchmark(spec: SamplerSpec, model: GestureModel, tracks: Sequence[ControlTrack], repetitions: int = 5, warmup: int = 1) -> LatencyReport:
    """Average generation wall time over ``repetitions`` runs on one thread.

    Condition encoding is included; model loading is not.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    _check_model(model)
    tb = model.tracks(tracks)
    steps = len(spec.timesteps(model.schedule.T)) - 1
    frames = len(tb) * model.cfg.n_frames
    with threadpool_limits(limits=1):
        for w in range(warmup):
            denoise(spec, model, tb, np.random.default_rng([spec.seed, w]))
        rep_ms, per_step = [], np.zeros(steps)
        for r in range(repetitions):
            timings: list[float] = []
            t0 = time.perf_counter()
            denoise(spec, model, tb, np.random.default_rng([spec.seed, r]), timings)
            rep_ms.append((time.perf_counter() - t0) * 1e3)
            per_step += np.array(timings) * 1e3
    total = float(np.mean(rep_ms))
    return LatencyReport(spec.kind, steps, repetitions, frames, total, total / frames, list(per_step / repetitions), rep_ms)
