"""Fréchet gesture distance, beat alignment and diversity.

FGD compares Gaussian fits of latent features produced by a small MLP
autoencoder that is trained on real clips only.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .models import GestureModel, Normalizer
from .numerics import AdamW, F, Tape, backward, parameter
from .sampling import batch_generate, benchmark, sample_batch
from .synthdata import GestureDataset

SHRINKAGE = 1e-6
BEAT_SIGMA = 0.1  # seconds
BEAT_PERCENTILE = 30.0


# ----------------------------------------------------------------------
# Fréchet distance


def _sqrt_psd(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2)
    if w.min() < -1e-8:
        raise np.linalg.LinAlgError(f"matrix is not positive semidefinite (eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def gaussian_stats(feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError("features must be a 2-D array (n, d)")
    n, d = feats.shape
    if n < d + 1:
        raise ValueError(f"need at least d+1={d + 1} feature vectors, got {n}")
    return feats.mean(axis=0), np.cov(feats, rowvar=False).reshape(d, d) + SHRINKAGE * np.eye(d)


def frechet_from_stats(mu_a, cov_a, mu_b, cov_b) -> float:
    """‖μa−μb‖² + tr(Σa + Σb − 2(ΣaΣb)^½).

    The trace of (ΣaΣb)^½ equals that of (Σa^½ Σb Σa^½)^½, which is
    symmetric and so has a stable eigendecomposition.
    """
    ra = _sqrt_psd(cov_a)
    w = np.linalg.eigvalsh(ra @ cov_b @ ra)
    if w.min() < -1e-8:
        raise np.linalg.LinAlgError("covariance product has a negative eigenvalue")
    cross = np.sqrt(np.clip(w, 0.0, None)).sum()
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross)
    if value < 0:
        scale = max(1.0, np.trace(cov_a) + np.trace(cov_b))
        assert -value < 1e-6 * scale, f"negative Fréchet artifact {value}"
        value = 0.0
    return value


def frechet_distance(feats_a, feats_b) -> float:
    mu_a, cov_a = gaussian_stats(feats_a)
    mu_b, cov_b = gaussian_stats(feats_b)
    if mu_a.shape != mu_b.shape:
        raise ValueError("feature dimensions differ")
    # symmetrize the evaluation order so d(a, b) == d(b, a) to rounding
    return 0.5 * (frechet_from_stats(mu_a, cov_a, mu_b, cov_b) + frechet_from_stats(mu_b, cov_b, mu_a, cov_a))


# ----------------------------------------------------------------------
# feature extractor


@dataclass
class FeatureExtractor:
    """MLP autoencoder over flattened clips: in -> hidden -> d_f -> hidden -> in."""

    params: dict
    normalizer: Normalizer
    d_f: int
    seed: int
    train_error: float
    heldout_error: float

    def _encode(self, x):
        p = self.params
        h = F.gelu(F.linear(x, p["e1_w"], p["e1_b"]))
        return F.linear(h, p["e2_w"], p["e2_b"])

    def _decode(self, z):
        p = self.params
        h = F.gelu(F.linear(z, p["d1_w"], p["d1_b"]))
        return F.linear(h, p["d2_w"], p["d2_b"])

    def flat(self, positions: np.ndarray) -> np.ndarray:
        positions = np.asarray(positions, dtype=np.float64)
        if positions.ndim != 4:
            raise ValueError("positions must have shape (B, N, J, 2)")
        x = self.normalizer.encode(positions.reshape(positions.shape[0], positions.shape[1], -1))
        return x.reshape(len(x), -1)

    def features(self, positions: np.ndarray) -> np.ndarray:
        """Latent features (B, d_f) for clips given as positions (B, N, J, 2)."""
        return self._encode(self.flat(positions)).data

    def reconstruction_error(self, positions: np.ndarray) -> float:
        x = self.flat(positions)
        return float(np.mean((self._decode(self._encode(x)).data - x) ** 2))

    def save(self, path) -> None:
        meta = {
            "kind": "feature-extractor",
            "d_f": self.d_f,
            "seed": self.seed,
            "train_error": self.train_error,
            "heldout_error": self.heldout_error,
            "normalizer": _norm_meta(self.normalizer),
        }
        checkpoint.save(path, checkpoint.prefixed("FE", {k: p.data for k, p in self.params.items()}), meta)

    @classmethod
    def load(cls, path) -> "FeatureExtractor":
        arrays, meta = checkpoint.load(path)
        if meta.get("kind") != "feature-extractor":
            raise ValueError(f"{path} is not a feature-extractor checkpoint")
        params = {k: parameter(v, k) for k, v in checkpoint.group(arrays, "FE").items()}
        return cls(
            params,
            _norm_from_meta(meta["normalizer"]),
            int(meta["d_f"]),
            int(meta["seed"]),
            float(meta["train_error"]),
            float(meta["heldout_error"]),
        )


def _norm_meta(n: Normalizer) -> dict:
    return {"mean": n.mean.tolist(), "scale": n.scale}


def _norm_from_meta(m: dict) -> Normalizer:
    return Normalizer(np.array(m["mean"]), float(m["scale"]))


def train_feature_extractor(
    train: GestureDataset,
    heldout: GestureDataset | None = None,
    *,
    d_f: int = 32,
    hidden: int = 256,
    epochs: int = 60,
    batch: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
) -> FeatureExtractor:
    """Fit the autoencoder on real clips; deterministic given ``seed``."""
    if len(train) < 100:
        raise ValueError(f"feature extractor needs at least 100 clips, got {len(train)}")
    norm = Normalizer.fit(train.features())
    rng = np.random.default_rng([seed, 0xFE])
    fe = FeatureExtractor({}, norm, d_f, seed, float("nan"), float("nan"))
    x_all = fe.flat(train.positions)
    n_in = x_all.shape[1]

    def dense(i, o):
        return rng.normal(size=(i, o)) * np.sqrt(2.0 / i)

    params = {
        "e1_w": parameter(dense(n_in, hidden), "e1_w"),
        "e1_b": parameter(np.zeros(hidden), "e1_b"),
        "e2_w": parameter(dense(hidden, d_f) * 0.5, "e2_w"),
        "e2_b": parameter(np.zeros(d_f), "e2_b"),
        "d1_w": parameter(dense(d_f, hidden), "d1_w"),
        "d1_b": parameter(np.zeros(hidden), "d1_b"),
        "d2_w": parameter(dense(hidden, n_in) * 0.5, "d2_w"),
        "d2_b": parameter(np.zeros(n_in), "d2_b"),
    }
    fe.params = params
    opt = AdamW(lr, weight_decay=0.0)
    for epoch in range(epochs):
        perm = np.random.default_rng([seed, epoch]).permutation(len(x_all))
        for k in range(0, len(perm) - batch + 1, batch):
            xb = x_all[perm[k : k + batch]]
            with Tape() as tape:
                loss = F.mse_loss(fe._decode(fe._encode(xb)), xb)
            opt.step(params, backward(tape, loss, params))
    fe.train_error = fe.reconstruction_error(train.positions)
    fe.heldout_error = fe.reconstruction_error(heldout.positions) if heldout is not None else float("nan")
    return fe


# ----------------------------------------------------------------------
# beat alignment and diversity


def end_effector_speed(positions: np.ndarray, fps: float = 20.0) -> np.ndarray:
    """Speed of the last joint per frame (central differences)."""
    tip = np.asarray(positions)[:, -1, :]
    return np.linalg.norm(np.gradient(tip, axis=0), axis=-1) * fps


def kinematic_beats(positions: np.ndarray, fps: float = 20.0, percentile: float = BEAT_PERCENTILE) -> np.ndarray:
    """Frames where end-effector speed has a strict local minimum below its given percentile."""
    positions = np.asarray(positions)
    if positions.ndim != 3 or positions.shape[0] < 3:
        raise ValueError("need a clip of shape (N >= 3, J, 2)")
    s = end_effector_speed(positions, fps)
    thresh = np.percentile(s, percentile)
    inner = (s[1:-1] < s[:-2]) & (s[1:-1] < s[2:]) & (s[1:-1] < thresh)
    return np.flatnonzero(inner) + 1


def beat_score(control_beats, gesture_beats, fps: float = 20.0, sigma: float = BEAT_SIGMA) -> float:
    """Mean over control beats of exp(-d²/2σ²), d the distance (s) to the nearest gesture beat."""
    cb = np.asarray(control_beats, dtype=np.float64) / fps
    gb = np.asarray(gesture_beats, dtype=np.float64) / fps
    if cb.size == 0:
        raise ValueError("need at least one control beat")
    if gb.size == 0:
        return 0.0
    d2 = ((cb[:, None] - gb[None, :]) ** 2).min(axis=1)
    return float(np.mean(np.exp(-d2 / (2 * sigma**2))))


def beat_align(control_beats, positions: np.ndarray, fps: float = 20.0, sigma: float = BEAT_SIGMA) -> float:
    positions = np.asarray(positions)
    if positions.size == 0:
        raise ValueError("empty clip")
    return beat_score(control_beats, kinematic_beats(positions, fps), fps, sigma)


def diversity(clips) -> float:
    """Mean element-normalized L1 distance over all unordered pairs."""
    x = np.asarray(clips, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("diversity needs at least 2 clips")
    x = x.reshape(x.shape[0], -1)
    i, j = np.triu_indices(len(x), k=1)
    return float(np.mean(np.abs(x[i] - x[j]).mean(axis=1)))


# ----------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    fgd: float
    ba: float
    div: float
    ms_per_frame: float
    fingerprint: str

    HEADER = ("fgd", "ba", "div", "ms_per_frame", "fingerprint")

    def __post_init__(self):
        if not (self.fgd >= 0 and 0 <= self.ba <= 1 and self.div >= 0):
            raise ValueError(f"metric out of range: {self}")

    def row(self) -> list:
        return [repr(self.fgd), repr(self.ba), repr(self.div), repr(self.ms_per_frame), self.fingerprint]

    def table(self) -> str:
        lines = [f"{'metric':<14}{'value':>14}"]
        for name, v in (("FGD", self.fgd), ("BA", self.ba), ("DIV", self.div), ("ms/frame", self.ms_per_frame)):
            lines.append(f"{name:<14}{v:>14.6g}")
        lines.append(f"{'config':<14}{self.fingerprint:>14}")
        return "\n".join(lines)


def write_metrics_csv(path, rows: Sequence[MetricsReport], extra: Sequence[dict] | None = None) -> None:
    extra = extra or [{} for _ in rows]
    keys = list(extra[0]) if extra else []
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + list(MetricsReport.HEADER))
        for r, e in zip(rows, extra):
            w.writerow([e[k] for k in keys] + r.row())


def fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:12]


def mean_ba(ds: GestureDataset, clips) -> float:
    """BA averaged over the tracks of ds that contain at least one beat."""
    keep = [i for i in range(len(ds)) if len(ds.beat_frames[i])]
    if not keep:
        raise ValueError("no track in the set has a control beat")
    return float(np.mean([beat_align(ds.beat_frames[i], clips[i], ds.fps) for i in keep]))


def real_ba(ds: GestureDataset) -> float:
    return mean_ba(ds, ds.positions)


def evaluate(
    model: GestureModel,
    spec,
    test: GestureDataset,
    extractor: FeatureExtractor | None,
    *,
    div_k: int = 5,
    div_tracks: int | None = 20,
    bench_tracks: int = 8,
    bench_reps: int = 5,
) -> MetricsReport:
    """FGD (one sample per test track), BA, DIV (k samples per track), ms/frame."""
    if extractor is None:
        raise ValueError("evaluation requires a trained feature extractor")
    tracks = test.tracks()
    gen = sample_batch(spec, model, tracks)
    fgd = frechet_distance(extractor.features(test.positions), extractor.features(gen))
    ba = mean_ba(test, gen)
    subset = tracks if div_tracks is None else tracks[:div_tracks]
    multi = batch_generate(spec, model, subset, div_k)
    div = float(np.mean([diversity(m) for m in multi]))
    ms = benchmark(spec, model, tracks[:bench_tracks], repetitions=bench_reps).ms_per_frame if bench_reps else float("nan")
    fp = fingerprint({"model": model.cfg.to_dict(), "schedule": model.schedule.to_text(), "sampler": asdict(spec)})
    return MetricsReport(fgd, ba, div, ms, fp)
