"""Conditional generator (transformer encoder) and discriminator (7-layer MLP).

The generator predicts the clean sequence from a noisy one. Conditioning
enters as three prefix tokens (time + latent, style, seed gesture) and as a
per-frame envelope projection added to the frame tokens. The discriminator
scores a (x_{t-1}, x_t) pair together with the control features and the
step index.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import checkpoint
from .numerics import F, Tensor, parameter
from .schedule import NoiseSchedule
from .synthdata import ControlTrack, GestureDataset

PREFIX_TOKENS = 3


@dataclass(frozen=True)
class ModelConfig:
    n_frames: int = 80
    n_joints: int = 5
    n_styles: int = 4
    seed_frames: int = 8
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    d_z: int = 32
    env_window: int = 5
    disc_hidden: int = 256
    disc_groups: int = 8
    disc_pool: int = 4
    disc_time_dim: int = 32
    out_smooth: float = 1.0  # width (frames) of the band the output frame mixer starts from

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.n_frames % self.disc_pool:
            raise ValueError("n_frames must be divisible by disc_pool")
        if self.disc_hidden % self.disc_groups:
            raise ValueError("disc_hidden must be divisible by disc_groups")
        if self.env_window % 2 == 0:
            raise ValueError("env_window must be odd")
        if self.out_smooth < 0:
            raise ValueError("out_smooth must be >= 0")

    @property
    def n_feat(self) -> int:
        return self.n_joints * 2

    @property
    def gesture_shape(self) -> tuple[int, int]:
        return (self.n_frames, self.n_feat)

    def to_dict(self) -> dict:
        return asdict(self)


PAPER_SCALE = dict(n_layers=12, n_heads=8)


@dataclass(frozen=True)
class Normalizer:
    """Per-feature centering with one global scale (keeps the root joint at 0)."""

    mean: np.ndarray
    scale: float

    @classmethod
    def fit(cls, features: np.ndarray) -> "Normalizer":
        flat = features.reshape(-1, features.shape[-1])
        mean = flat.mean(axis=0)
        scale = float(np.sqrt(((flat - mean) ** 2).mean()))
        return cls(mean=mean, scale=scale)

    def encode(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale

    def decode(self, x: np.ndarray) -> np.ndarray:
        return x * self.scale + self.mean


@dataclass
class TrackBatch:
    """Model-side view of a batch of control tracks."""

    envelope: np.ndarray  # (B, N)
    style: np.ndarray  # (B,)
    seed: np.ndarray  # (B, F, n_feat), normalized

    def __len__(self) -> int:
        return self.envelope.shape[0]

    @classmethod
    def from_tracks(cls, tracks: Sequence[ControlTrack], normalizer: Normalizer) -> "TrackBatch":
        env = np.stack([np.asarray(t.beat_envelope, dtype=np.float64) for t in tracks])
        style = np.array([t.style_id for t in tracks])
        seed = np.stack([np.asarray(t.seed_frames).reshape(len(t.seed_frames), -1) for t in tracks])
        return cls(env, style, normalizer.encode(seed))

    @classmethod
    def from_dataset(cls, ds: GestureDataset, normalizer: Normalizer, idx=None) -> "TrackBatch":
        idx = np.arange(len(ds)) if idx is None else np.asarray(idx)
        seed = ds.positions[idx, : ds.seed_frames].reshape(len(idx), ds.seed_frames, -1)
        return cls(ds.envelopes[idx], ds.styles[idx], normalizer.encode(seed))

    def take(self, idx) -> "TrackBatch":
        return TrackBatch(self.envelope[idx], self.style[idx], self.seed[idx])

    def repeat(self, k: int) -> "TrackBatch":
        return TrackBatch(np.repeat(self.envelope, k, 0), np.repeat(self.style, k, 0), np.repeat(self.seed, k, 0))


@dataclass
class ConditionEmbedding:
    frame: Tensor  # (B, N, d) per-frame envelope features
    time: Tensor  # (B, 1, d)
    style: Tensor  # (B, 1, d)
    seed: Tensor  # (B, 1, d)


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal features of integer steps, shape (B, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def position_table(length: int, dim: int, base: float = 100.0) -> np.ndarray:
    """Interleaved sin/cos rows; the learnable positions start here."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    freqs = np.exp(-np.log(base) * np.arange(0, dim, 2) / dim)
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(pos * freqs)
    table[:, 1::2] = np.cos(pos * freqs[: dim // 2])
    return table


def frame_mixer(n: int, width: float) -> np.ndarray:
    """Row-normalized Gaussian band over frames; the identity when width is 0."""
    if width == 0:
        return np.eye(n)
    k = np.arange(n)
    band = np.exp(-0.5 * ((k[:, None] - k[None, :]) / width) ** 2)
    return band / band.sum(axis=1, keepdims=True)


def _dense(rng: np.random.Generator, fan_in: int, fan_out: int, scale: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, scale / np.sqrt(fan_in), size=(fan_in, fan_out))


def init_generator(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d, f = cfg.d_model, cfg.n_feat
    raw: dict[str, np.ndarray] = {
        "in_w": _dense(rng, f, d),
        "in_b": np.zeros(d),
        "env_w": _dense(rng, cfg.env_window, d),
        "env_b": np.zeros(d),
        "style_w": _dense(rng, cfg.n_styles, d),
        "style_b": np.zeros(d),
        "seed_w": _dense(rng, cfg.seed_frames * f, d),
        "seed_b": np.zeros(d),
        "time_w1": _dense(rng, d, d),
        "time_b1": np.zeros(d),
        "time_w2": _dense(rng, d, d),
        "time_b2": np.zeros(d),
        "z_w": _dense(rng, cfg.d_z, d),
        "z_b": np.zeros(d),
        "null_frame": rng.normal(0.0, 0.02, d),
        "null_style": rng.normal(0.0, 0.02, d),
        "null_seed": rng.normal(0.0, 0.02, d),
        # a random table makes neighbouring frames indistinguishable early on,
        # which shows up as frame-level jitter in x0 predictions
        "pos": position_table(cfg.n_frames + PREFIX_TOKENS, d),
    }
    resid = 1.0 / np.sqrt(2 * cfg.n_layers)
    for i in range(cfg.n_layers):
        p = f"l{i}."
        raw.update(
            {
                p + "ln1_g": np.ones(d),
                p + "ln1_b": np.zeros(d),
                p + "qkv_w": _dense(rng, d, 3 * d),
                p + "qkv_b": np.zeros(3 * d),
                p + "o_w": _dense(rng, d, d, resid),
                p + "o_b": np.zeros(d),
                p + "ln2_g": np.ones(d),
                p + "ln2_b": np.zeros(d),
                p + "ff1_w": _dense(rng, d, cfg.d_ff),
                p + "ff1_b": np.zeros(cfg.d_ff),
                p + "ff2_w": _dense(rng, cfg.d_ff, d, resid),
                p + "ff2_b": np.zeros(d),
            }
        )
    raw.update({"out_ln_g": np.ones(d), "out_ln_b": np.zeros(d), "out_w": _dense(rng, d, f), "out_b": np.zeros(f)})
    # per-frame tokens leak white noise from x_t into x0_hat, which wipes out
    # the velocity zeros at beats; a learnable frame mixer that starts as a
    # narrow low-pass removes most of it from the first step on
    raw["out_mix"] = frame_mixer(cfg.n_frames, cfg.out_smooth)
    return {k: parameter(v, name=k) for k, v in raw.items()}


def init_discriminator(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    widths = [discriminator_input_width(cfg)] + [cfg.disc_hidden] * 6 + [1]
    raw = {}
    for i in range(7):
        raw[f"d{i}_w"] = _dense(rng, widths[i], widths[i + 1])
        raw[f"d{i}_b"] = np.zeros(widths[i + 1])
        if i < 6:
            raw[f"gn{i}_g"] = np.ones(widths[i + 1])
            raw[f"gn{i}_b"] = np.zeros(widths[i + 1])
    return {k: parameter(v, name=k) for k, v in raw.items()}


def discriminator_input_width(cfg: ModelConfig) -> int:
    pooled = cfg.n_frames // cfg.disc_pool
    return pooled * 2 * cfg.n_feat + pooled + cfg.n_styles + cfg.seed_frames * cfg.n_feat + cfg.disc_time_dim


def envelope_windows(envelope: np.ndarray, width: int) -> np.ndarray:
    half = width // 2
    padded = np.pad(envelope, ((0, 0), (half, half)))
    return np.lib.stride_tricks.sliding_window_view(padded, width, axis=1)


def _check_batch(cfg: ModelConfig, tracks: TrackBatch) -> None:
    b = len(tracks)
    if tracks.envelope.shape != (b, cfg.n_frames):
        raise ValueError(f"envelope shape {tracks.envelope.shape} != ({b}, {cfg.n_frames})")
    if tracks.seed.shape != (b, cfg.seed_frames, cfg.n_feat):
        raise ValueError(f"seed shape {tracks.seed.shape} does not match configuration")
    if np.any(tracks.style < 0) or np.any(tracks.style >= cfg.n_styles):
        raise ValueError("style id out of range")


def encode_condition(params, cfg: ModelConfig, tracks: TrackBatch, t, null_mask=False) -> ConditionEmbedding:
    """Embed control content and the step index.

    ``null_mask`` (scalar or per-row booleans) swaps envelope, style and seed
    content for learned null vectors; the time embedding is always kept.
    """
    _check_batch(cfg, tracks)
    b = len(tracks)
    t = np.broadcast_to(np.asarray(t), (b,))
    mask = np.broadcast_to(np.asarray(null_mask, dtype=np.float64), (b,))
    m3 = mask[:, None, None]

    frame = F.linear(envelope_windows(tracks.envelope, cfg.env_window), params["env_w"], params["env_b"])
    frame = F.blend(frame, params["null_frame"], m3)
    style = F.linear(np.eye(cfg.n_styles)[tracks.style], params["style_w"], params["style_b"])
    style = F.blend(F.reshape(style, (b, 1, cfg.d_model)), params["null_style"], m3)
    seed_flat = tracks.seed.reshape(b, -1)
    seed = F.linear(seed_flat, params["seed_w"], params["seed_b"])
    seed = F.blend(F.reshape(seed, (b, 1, cfg.d_model)), params["null_seed"], m3)
    temb = timestep_embedding(t, cfg.d_model)
    time = F.gelu(F.linear(temb, params["time_w1"], params["time_b1"]))
    time = F.linear(time, params["time_w2"], params["time_b2"])
    return ConditionEmbedding(frame=frame, time=F.reshape(time, (b, 1, cfg.d_model)), style=style, seed=seed)


def _attention(h: Tensor, params, prefix: str, n_heads: int) -> Tensor:
    b, L, d = h.shape
    dh = d // n_heads
    qkv = F.linear(h, params[prefix + "qkv_w"], params[prefix + "qkv_b"])
    qkv = F.transpose(F.reshape(qkv, (b, L, 3, n_heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = F.matmul(q, F.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
    att = F.matmul(F.softmax(scores, axis=-1), v)
    att = F.reshape(F.transpose(att, (0, 2, 1, 3)), (b, L, d))
    return F.linear(att, params[prefix + "o_w"], params[prefix + "o_b"])


def generator_forward(params, cfg: ModelConfig, x_t, z, cond: ConditionEmbedding) -> Tensor:
    """Predict the clean sequence (B, N, n_feat) from x_t, latent z and the condition."""
    x_t = x_t if isinstance(x_t, Tensor) else np.asarray(x_t, dtype=np.float64)
    b = x_t.shape[0]
    if tuple(x_t.shape[1:]) != cfg.gesture_shape:
        raise ValueError(f"x_t shape {x_t.shape} != (B, {cfg.n_frames}, {cfg.n_feat})")
    if np.shape(z) != (b, cfg.d_z):
        raise ValueError(f"z shape {np.shape(z)} != ({b}, {cfg.d_z})")
    if cond.frame.shape[0] != b:
        raise ValueError("condition batch does not match x_t")
    frames = F.linear(x_t, params["in_w"], params["in_b"]) + cond.frame
    zt = F.reshape(F.linear(z, params["z_w"], params["z_b"]), (b, 1, cfg.d_model))
    h = F.concat([cond.time + zt, cond.style, cond.seed, frames], axis=1) + params["pos"]
    for i in range(cfg.n_layers):
        p = f"l{i}."
        h = h + _attention(F.layer_norm(h, params[p + "ln1_g"], params[p + "ln1_b"]), params, p, cfg.n_heads)
        u = F.layer_norm(h, params[p + "ln2_g"], params[p + "ln2_b"])
        u = F.linear(F.gelu(F.linear(u, params[p + "ff1_w"], params[p + "ff1_b"])), params[p + "ff2_w"], params[p + "ff2_b"])
        h = h + u
    h = F.layer_norm(h[:, PREFIX_TOKENS:], params["out_ln_g"], params["out_ln_b"])
    return F.matmul(params["out_mix"], F.linear(h, params["out_w"], params["out_b"]))


def discriminator_condition(cfg: ModelConfig, tracks: TrackBatch, t) -> np.ndarray:
    """Constant condition features seen by the discriminator, (B, width)."""
    _check_batch(cfg, tracks)
    b = len(tracks)
    pooled = tracks.envelope.reshape(b, -1, cfg.disc_pool).mean(axis=2)
    onehot = np.eye(cfg.n_styles)[tracks.style]
    temb = timestep_embedding(np.broadcast_to(np.asarray(t), (b,)), cfg.disc_time_dim)
    return np.concatenate([pooled, onehot, tracks.seed.reshape(b, -1), temb], axis=1)


def discriminator_logits(params, cfg: ModelConfig, x_prev, x_t, tracks: TrackBatch, t) -> Tensor:
    if tuple(np.shape(getattr(x_prev, "data", x_prev))) != tuple(np.shape(getattr(x_t, "data", x_t))):
        raise ValueError("x_prev and x_t shapes differ")
    b = np.shape(getattr(x_t, "data", x_t))[0]
    if tuple(np.shape(getattr(x_t, "data", x_t))[1:]) != cfg.gesture_shape:
        raise ValueError("pair shape does not match configuration")
    pair = F.concat([x_prev, x_t], axis=-1)
    pooled = F.mean(F.reshape(pair, (b, cfg.n_frames // cfg.disc_pool, cfg.disc_pool, 2 * cfg.n_feat)), axis=2)
    h = F.concat([F.reshape(pooled, (b, -1)), discriminator_condition(cfg, tracks, t)], axis=1)
    for i in range(6):
        h = F.linear(h, params[f"d{i}_w"], params[f"d{i}_b"])
        h = F.selu(F.group_norm(h, cfg.disc_groups, params[f"gn{i}_g"], params[f"gn{i}_b"]))
    return F.reshape(F.linear(h, params["d6_w"], params["d6_b"]), (b,))


def discriminator_forward(params, cfg: ModelConfig, x_prev, x_t, tracks: TrackBatch, t) -> Tensor:
    """Probability (B,) that the pair came from the forward process."""
    return F.sigmoid(discriminator_logits(params, cfg, x_prev, x_t, tracks, t))


def param_count(params) -> int:
    return int(sum(p.size for p in params.values()))


@dataclass
class GestureModel:
    """Everything a sampler needs: generator weights, config, data scaling, schedule."""

    cfg: ModelConfig
    params: dict[str, Tensor]
    normalizer: Normalizer
    schedule: NoiseSchedule

    def tracks(self, tracks: Sequence[ControlTrack]) -> TrackBatch:
        return TrackBatch.from_tracks(tracks, self.normalizer)

    def predict_x0(self, x_t: np.ndarray, z: np.ndarray, tracks: TrackBatch, t, null_mask=False) -> np.ndarray:
        cond = encode_condition(self.params, self.cfg, tracks, t, null_mask)
        return generator_forward(self.params, self.cfg, x_t, z, cond).data

    def is_finite(self) -> bool:
        return all(np.isfinite(p.data).all() for p in self.params.values())

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {
            "kind": "generator",
            "model": self.cfg.to_dict(),
            "schedule": self.schedule.to_text(),
            "normalizer": {"mean": self.normalizer.mean.tolist(), "scale": self.normalizer.scale},
        }
        meta.update(extra_meta or {})
        checkpoint.save(path, checkpoint.prefixed("G", {k: p.data for k, p in self.params.items()}), meta)

    @classmethod
    def from_arrays(cls, arrays, meta, prefix: str = "G") -> "GestureModel":
        params = {k: parameter(v, name=k) for k, v in checkpoint.group(arrays, prefix).items()}
        norm = Normalizer(np.array(meta["normalizer"]["mean"]), float(meta["normalizer"]["scale"]))
        return cls(ModelConfig(**meta["model"]), params, norm, NoiseSchedule.from_text(meta["schedule"]))

    @classmethod
    def load(cls, path) -> "GestureModel":
        arrays, meta = checkpoint.load(path)
        prefix = "EMA" if any(k.startswith("EMA/") for k in arrays) else "G"
        return cls.from_arrays(arrays, meta, prefix)
