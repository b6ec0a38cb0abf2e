"""Synthetic beat-driven gesture clips on a planar joint chain.

Each clip swings a 4-bone chain around a style-specific rest pose. The
swing reverses direction on every beat and each beat adds a short angular
pulse whose sign is drawn at random, so the motion around a beat is
genuinely two-way ambiguous given the control track. Both the swing and
the pulses are symmetric about the beat frame, which makes the
end-effector come to rest exactly on the beat.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

STYLE_PERIODS = (10, 13, 16, 20)
STYLE_POSES = np.array(
    [
        [0.6, 0.3, 0.2, 0.1],
        [1.2, -0.4, 0.5, -0.2],
        [0.9, 0.6, -0.5, 0.4],
        [1.5, -0.2, -0.3, 0.6],
    ]
)
STYLE_SWING = np.array(
    [
        [0.25, 0.15, 0.10, 0.10],
        [0.10, 0.25, 0.15, 0.10],
        [0.20, 0.10, 0.25, 0.15],
        [0.15, 0.20, 0.10, 0.25],
    ]
)
STYLE_PULSE = np.array(
    [
        [0.35, 0.25, 0.20, 0.15],
        [0.20, 0.35, 0.25, 0.20],
        [0.30, 0.20, 0.35, 0.25],
        [0.25, 0.30, 0.20, 0.35],
    ]
)
PULSE_WIDTH = 1.5
ENVELOPE_WIDTH = 1.0
NOISE_STD = 0.01
NOISE_SMOOTH = 2.0


@dataclass(frozen=True)
class SkeletonSpec:
    bone_lengths: tuple[float, ...] = (1.0, 0.8, 0.6, 0.4)

    def __post_init__(self):
        if len(self.bone_lengths) < 1 or any(b <= 0 for b in self.bone_lengths):
            raise ValueError("bone lengths must be positive")

    @property
    def joint_count(self) -> int:
        return len(self.bone_lengths) + 1


@dataclass
class GestureClip:
    """Joint positions (N, J, 2) with the joint angles (N, J-1) behind them.

    For model outputs the angles come from :func:`inverse_kinematics` and
    the positions are kept as generated.
    """

    positions: np.ndarray
    angles: np.ndarray
    fps: float = 20.0

    @property
    def frames(self) -> int:
        return self.positions.shape[0]


@dataclass
class ControlTrack:
    beat_envelope: np.ndarray
    beat_frames: np.ndarray
    style_id: int
    seed_frames: np.ndarray

    def key(self) -> bytes:
        """Byte fingerprint of the track content."""
        parts = [
            np.ascontiguousarray(self.beat_envelope, dtype=np.float64).tobytes(),
            np.asarray(self.beat_frames, dtype=np.int64).tobytes(),
            np.int64(self.style_id).tobytes(),
            np.ascontiguousarray(self.seed_frames, dtype=np.float64).tobytes(),
        ]
        return b"".join(parts)


def forward_kinematics(angles, spec: SkeletonSpec = SkeletonSpec()) -> np.ndarray:
    """Relative joint angles (..., J-1) to joint positions (..., J, 2)."""
    angles = np.asarray(angles, dtype=np.float64)
    lengths = np.asarray(spec.bone_lengths)
    if angles.shape[-1] != lengths.size:
        raise ValueError(f"expected {lengths.size} angles per frame, got {angles.shape[-1]}")
    absolute = np.cumsum(angles, axis=-1)
    seg = np.stack([np.cos(absolute), np.sin(absolute)], axis=-1) * lengths[:, None]
    joints = np.cumsum(seg, axis=-2)
    root = np.zeros(angles.shape[:-1] + (1, 2))
    return np.concatenate([root, joints], axis=-2)


def inverse_kinematics(positions) -> np.ndarray:
    """Relative angles from joint positions (ignores segment lengths)."""
    positions = np.asarray(positions, dtype=np.float64)
    seg = np.diff(positions, axis=-2)
    absolute = np.arctan2(seg[..., 1], seg[..., 0])
    rel = np.diff(absolute, axis=-1, prepend=0.0)
    return (rel + np.pi) % (2 * np.pi) - np.pi


def bone_lengths(positions) -> np.ndarray:
    return np.linalg.norm(np.diff(np.asarray(positions), axis=-2), axis=-1)


def _smooth_noise(rng: np.random.Generator, n: int, dims: int) -> np.ndarray:
    half = int(np.ceil(4 * NOISE_SMOOTH))
    k = np.exp(-0.5 * (np.arange(-half, half + 1) / NOISE_SMOOTH) ** 2)
    k /= np.sqrt((k**2).sum())
    white = rng.normal(size=(n + 2 * half, dims))
    out = np.stack([np.convolve(white[:, d], k, mode="valid") for d in range(dims)], axis=1)
    return NOISE_STD * out


def generate_clip(
    rng_seed,
    style_id: int,
    spec: SkeletonSpec = SkeletonSpec(),
    N: int = 80,
    fps: float = 20.0,
    n_styles: int = 4,
    seed_frames: int = 8,
) -> tuple[GestureClip, ControlTrack]:
    if not 0 <= style_id < min(n_styles, len(STYLE_PERIODS)):
        raise ValueError(f"style_id {style_id} outside [0, {n_styles})")
    if spec.joint_count != STYLE_POSES.shape[1] + 1:
        raise ValueError("style tables are defined for 4-bone chains")
    if not 0 < seed_frames < N:
        raise ValueError("seed_frames must lie in (0, N)")
    rng = np.random.default_rng(rng_seed)
    period = STYLE_PERIODS[style_id]
    first = int(rng.integers(2, 2 + period))
    beats = np.arange(first, N - 2, period)
    n = np.arange(N, dtype=np.float64)

    swing_amp = rng.uniform(0.7, 1.3) * rng.choice([-1.0, 1.0])
    # short periods swing less so the beat pulses stay dominant
    swing_amp *= (period / max(STYLE_PERIODS)) ** 2
    swing = np.cos(np.pi * (n - first) / period)[:, None] * (swing_amp * STYLE_SWING[style_id])

    signs = rng.choice([-1.0, 1.0], size=beats.size)
    mags = rng.uniform(0.9, 1.1, size=beats.size)
    bumps = np.exp(-0.5 * ((n[:, None] - beats[None, :]) / PULSE_WIDTH) ** 2)
    pulse = (bumps * (signs * mags)).sum(axis=1)[:, None] * STYLE_PULSE[style_id]

    heights = rng.uniform(0.7, 1.0, size=beats.size)
    env_bumps = np.exp(-0.5 * ((n[:, None] - beats[None, :]) / ENVELOPE_WIDTH) ** 2)
    envelope = np.clip((env_bumps * heights).sum(axis=1), 0.0, 1.0)

    angles = STYLE_POSES[style_id] + swing + pulse + _smooth_noise(rng, N, spec.joint_count - 1)
    positions = forward_kinematics(angles, spec)
    clip = GestureClip(positions=positions, angles=angles, fps=fps)
    track = ControlTrack(
        beat_envelope=envelope,
        beat_frames=beats,
        style_id=int(style_id),
        seed_frames=positions[:seed_frames].copy(),
    )
    return clip, track


@dataclass
class GestureDataset:
    """Parallel arrays for a collection of clips and their control tracks."""

    positions: np.ndarray  # (M, N, J, 2)
    envelopes: np.ndarray  # (M, N)
    styles: np.ndarray  # (M,)
    beat_frames: list[np.ndarray]
    fps: float = 20.0
    seed_frames: int = 8
    n_styles: int = 4
    clip_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.clip_ids is None:
            self.clip_ids = np.arange(len(self.styles))

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @property
    def n_frames(self) -> int:
        return int(self.positions.shape[1])

    @property
    def joint_count(self) -> int:
        return int(self.positions.shape[2])

    def features(self) -> np.ndarray:
        """Flattened per-frame positions (M, N, J*2)."""
        m, n = self.positions.shape[:2]
        return self.positions.reshape(m, n, -1)

    def seeds(self) -> np.ndarray:
        return self.positions[:, : self.seed_frames]

    def clip(self, i: int) -> GestureClip:
        pos = self.positions[i]
        return GestureClip(pos, inverse_kinematics(pos), self.fps)

    def track(self, i: int) -> ControlTrack:
        return ControlTrack(
            beat_envelope=self.envelopes[i],
            beat_frames=self.beat_frames[i],
            style_id=int(self.styles[i]),
            seed_frames=self.positions[i, : self.seed_frames],
        )

    def tracks(self) -> list[ControlTrack]:
        return [self.track(i) for i in range(len(self))]

    def subset(self, idx) -> "GestureDataset":
        idx = np.asarray(idx)
        return GestureDataset(
            positions=self.positions[idx],
            envelopes=self.envelopes[idx],
            styles=self.styles[idx],
            beat_frames=[self.beat_frames[i] for i in idx],
            fps=self.fps,
            seed_frames=self.seed_frames,
            n_styles=self.n_styles,
            clip_ids=self.clip_ids[idx],
        )

    @classmethod
    def from_items(cls, clips: Sequence[GestureClip], tracks: Sequence[ControlTrack], n_styles: int = 4, clip_ids=None):
        return cls(
            positions=np.stack([c.positions for c in clips]),
            envelopes=np.stack([t.beat_envelope for t in tracks]),
            styles=np.array([t.style_id for t in tracks]),
            beat_frames=[np.asarray(t.beat_frames) for t in tracks],
            fps=clips[0].fps,
            seed_frames=tracks[0].seed_frames.shape[0],
            n_styles=n_styles,
            clip_ids=None if clip_ids is None else np.asarray(clip_ids),
        )


def split_sizes(count: int, split_ratio: Sequence[float]) -> tuple[int, int, int]:
    if count < 10:
        raise ValueError("need at least 10 clips to split")
    r = np.asarray(split_ratio, dtype=np.float64)
    if r.shape != (3,) or np.any(r <= 0):
        raise ValueError("split_ratio must be three positive fractions")
    r = r / r.sum()
    n_train = int(round(count * r[0]))
    n_val = int(round(count * r[1]))
    n_test = count - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError("count too small for the requested split")
    return n_train, n_val, n_test


def make_dataset(
    count: int = 1000,
    split_ratio: Sequence[float] = (0.8, 0.1, 0.1),
    spec: SkeletonSpec = SkeletonSpec(),
    n_styles: int = 4,
    N: int = 80,
    fps: float = 20.0,
    seed: int = 0,
    seed_frames: int = 8,
) -> dict[str, GestureDataset]:
    """Round-robin styles over clips, then cut contiguous train/val/test blocks."""
    sizes = split_sizes(count, split_ratio)
    clips, tracks = [], []
    for i in range(count):
        ss = np.random.SeedSequence(seed, spawn_key=(i,))
        c, t = generate_clip(ss, i % n_styles, spec, N, fps, n_styles, seed_frames)
        clips.append(c)
        tracks.append(t)
    full = GestureDataset.from_items(clips, tracks, n_styles=n_styles)
    bounds = np.cumsum((0,) + sizes)
    names = ("train", "val", "test")
    return {name: full.subset(np.arange(bounds[k], bounds[k + 1])) for k, name in enumerate(names)}


# --------------------------------------------------------------------------
# CSV exchange: one row per frame


def csv_header(joint_count: int) -> list[str]:
    cols = ["clip_id", "frame"]
    for j in range(joint_count):
        cols += [f"j{j}_x", f"j{j}_y"]
    return cols + ["envelope", "style", "is_beat"]


def write_csv(path, dataset: GestureDataset) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(dataset.joint_count))
        for i in range(len(dataset)):
            beats = set(int(b) for b in dataset.beat_frames[i])
            flat = dataset.positions[i].reshape(dataset.n_frames, -1)
            for f in range(dataset.n_frames):
                w.writerow(
                    [int(dataset.clip_ids[i]), f]
                    + [repr(float(v)) for v in flat[f]]
                    + [repr(float(dataset.envelopes[i, f])), int(dataset.styles[i]), int(f in beats)]
                )


def read_csv(path, fps: float = 20.0, seed_frames: int = 8, n_styles: int = 4) -> GestureDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    joint_count = (len(header) - 5) // 2
    if header != csv_header(joint_count):
        raise ValueError(f"{path}: unexpected header")
    ids = np.array([int(row[0]) for row in rows])
    uniq, first = np.unique(ids, return_index=True)
    order = uniq[np.argsort(first)]
    by_clip: dict[int, list] = {int(c): [] for c in order}
    for row in rows:
        by_clip[int(row[0])].append(row)
    positions, envelopes, styles, beats = [], [], [], []
    for cid in order:
        part = sorted(by_clip[int(cid)], key=lambda row: int(row[1]))
        vals = np.array([[float(v) for v in row[2 : 2 + 2 * joint_count]] for row in part])
        positions.append(vals.reshape(len(part), joint_count, 2))
        envelopes.append(np.array([float(row[-3]) for row in part]))
        styles.append(int(part[0][-2]))
        beats.append(np.array([int(row[1]) for row in part if row[-1] == "1"], dtype=np.int64))
    return GestureDataset(
        positions=np.stack(positions),
        envelopes=np.stack(envelopes),
        styles=np.array(styles),
        beat_frames=beats,
        fps=fps,
        seed_frames=seed_frames,
        n_styles=n_styles,
        clip_ids=np.asarray(order),
    )
