"""Adversarial training of the few-step conditional denoiser.

Per iteration the discriminator sees real pairs (x_{t-1}, x_t) drawn
ancestrally from the forward process and fake pairs obtained by sampling
the Gaussian posterior around the generator's clean estimate. The
generator minimizes the non-saturating adversarial loss plus a weighted
Huber reconstruction of the clean sequence.

Every random draw of iteration ``k`` comes from a generator seeded with
``(seed, k)``, and the data order of epoch ``e`` from ``(seed, e)``; runs
are therefore bitwise reproducible and can resume from any checkpoint.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint
from .models import (
    GestureModel,
    ModelConfig,
    Normalizer,
    TrackBatch,
    discriminator_logits,
    encode_condition,
    generator_forward,
    init_discriminator,
    init_generator,
)
from .numerics import AdamW, Ema, F, NumericalError, Tape, backward, parameter
from .schedule import NoiseSchedule, _q_sample, forward_step, make_schedule, posterior_step
from .synthdata import GestureDataset

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "epoch", "d_loss", "g_adv", "g_recon", "g_total")
COLLAPSE_THRESHOLD = 0.05


@dataclass(frozen=True)
class TrainConfig:
    T: int = 20
    lr_g: float = 3e-5
    lr_d: float = 1.25e-4
    batch: int = 64
    lambda_geo: float = 10.0
    huber_delta: float = 1.0
    cond_dropout: float = 0.1
    epochs: int = 100
    max_steps: int | None = None
    ema_decay: float = 0.999
    ema_warmup: bool = True
    weight_decay: float = 1e-4
    d_steps_per_g: int = 1
    adversarial: bool = True
    schedule_kind: str = "geometric-alpha"
    variance: str = "posterior"
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lambda_geo < 0:
            raise ValueError("lambda_geo must be >= 0")
        if self.T < 1 or self.batch < 1 or self.epochs < 1:
            raise ValueError("T, batch and epochs must be >= 1")
        if not 0.0 <= self.cond_dropout <= 1.0:
            raise ValueError("cond_dropout must lie in [0, 1]")
        if self.d_steps_per_g < 1:
            raise ValueError("d_steps_per_g must be >= 1")
        if not (self.lr_g > 0 and self.lr_d > 0):
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError("ema_decay must lie in [0, 1]")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["model"] = ModelConfig(**d.get("model", {}))
        return cls(**d)

    def make_schedule(self) -> NoiseSchedule:
        return make_schedule(self.T, self.schedule_kind, self.variance)


@dataclass
class LossReport:
    step: int
    epoch: int
    d_loss: float
    g_adv: float
    g_recon: float
    g_total: float

    def row(self) -> list:
        return [self.step, self.epoch, self.d_loss, self.g_adv, self.g_recon, self.g_total]


@dataclass
class Batch:
    x0: np.ndarray  # (B, N, n_feat), normalized
    tracks: TrackBatch


class Trainer:
    """Holds both networks, their optimizers and the generator EMA."""

    def __init__(self, config: TrainConfig, train_set: GestureDataset, normalizer: Normalizer | None = None):
        if len(train_set) == 0:
            raise ValueError("training set is empty")
        self.config = config
        self.cfg = config.model
        if train_set.n_frames != self.cfg.n_frames or train_set.joint_count != self.cfg.n_joints:
            raise ValueError("dataset clip shape does not match the model configuration")
        self.schedule = config.make_schedule()
        self.normalizer = normalizer or Normalizer.fit(train_set.features())
        self.data = self.normalizer.encode(train_set.features())
        self.tracks = TrackBatch.from_dataset(train_set, self.normalizer)
        init_rng = np.random.default_rng([config.seed, 0xC0FFEE])
        self.G = init_generator(self.cfg, init_rng)
        self.D = init_discriminator(self.cfg, init_rng)
        self.opt_g = AdamW(config.lr_g, weight_decay=config.weight_decay)
        self.opt_d = AdamW(config.lr_d, weight_decay=config.weight_decay)
        self.ema = Ema(self.G, config.ema_decay, warmup=config.ema_warmup)
        self.step = 0
        self.history: list[LossReport] = []
        self.warnings: list[str] = []

    # ------------------------------------------------------------------
    @property
    def steps_per_epoch(self) -> int:
        return max(1, len(self.data) // min(self.config.batch, len(self.data)))

    def batch_indices(self, step: int) -> np.ndarray:
        b = min(self.config.batch, len(self.data))
        epoch, k = divmod(step, self.steps_per_epoch)
        perm = np.random.default_rng([self.config.seed, epoch, 1]).permutation(len(self.data))
        return perm[k * b : (k + 1) * b]

    def batch(self, step: int) -> Batch:
        idx = self.batch_indices(step)
        return Batch(self.data[idx], self.tracks.take(idx))

    def step_rng(self, step: int, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, step, 2, stream])

    def sample_t(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.integers(1, self.schedule.T + 1, size=n)

    def real_pair(self, x0: np.ndarray, t: np.ndarray, rng: np.random.Generator):
        """Ancestral draw: x_{t-1} ~ q(.|x0), then x_t ~ q(.|x_{t-1})."""
        x_prev = _q_sample(x0, t - 1, self.schedule, rng.normal(size=x0.shape))
        x_t = forward_step(x_prev, t, self.schedule, rng.normal(size=x0.shape))
        return x_prev, x_t

    def _null_mask(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.random(n) < self.config.cond_dropout

    def fake_prev(self, G, x_t, t, tracks, rng, null_mask):
        z = rng.normal(size=(len(x_t), self.cfg.d_z))
        cond = encode_condition(G, self.cfg, tracks, t, null_mask)
        x0_hat = generator_forward(G, self.cfg, x_t, z, cond)
        noise = rng.normal(size=x_t.shape)
        return x0_hat, posterior_step(x_t, x0_hat, t, self.schedule, noise)

    # ------------------------------------------------------------------
    def d_step(self, batch: Batch, rng: np.random.Generator, t: np.ndarray | None = None) -> float:
        """One discriminator update; the generator is only evaluated."""
        n = len(batch.x0)
        t = self.sample_t(rng, n) if t is None else np.broadcast_to(np.asarray(t), (n,))
        x_prev, x_t = self.real_pair(batch.x0, t, rng)
        mask = self._null_mask(rng, n)
        _, fake = self.fake_prev(self.G, x_t, t, batch.tracks, rng, mask)
        fake = fake.data
        with Tape() as tape:
            real_logit = discriminator_logits(self.D, self.cfg, x_prev, x_t, batch.tracks, t)
            fake_logit = discriminator_logits(self.D, self.cfg, fake, x_t, batch.tracks, t)
            # -log D(real) - log(1 - D(fake))
            loss = F.mean(F.softplus(-real_logit)) + F.mean(F.softplus(fake_logit))
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(f"d_step {self.step}: non-finite discriminator loss")
        grads = backward(tape, loss, self.D)
        self.opt_d.step(self.D, grads)
        return value

    def g_step(self, batch: Batch, rng: np.random.Generator, t: np.ndarray | None = None) -> tuple[float, float, float]:
        """One generator update followed by the EMA update; returns (adv, recon, total)."""
        c = self.config
        n = len(batch.x0)
        t = self.sample_t(rng, n) if t is None else np.broadcast_to(np.asarray(t), (n,))
        _, x_t = self.real_pair(batch.x0, t, rng)
        mask = self._null_mask(rng, n)
        with Tape() as tape:
            x0_hat, fake = self.fake_prev(self.G, x_t, t, batch.tracks, rng, mask)
            recon = F.huber_loss(x0_hat, batch.x0, c.huber_delta)
            if c.adversarial:
                logit = discriminator_logits(self.D, self.cfg, fake, x_t, batch.tracks, t)
                adv = F.mean(F.softplus(-logit))  # non-saturating -log D(fake)
                total = adv + c.lambda_geo * recon
            else:
                adv = None
                total = c.lambda_geo * recon
        adv_v = adv.item() if adv is not None else 0.0
        recon_v = recon.item()
        total_v = adv_v + c.lambda_geo * recon_v
        if not np.isfinite(total_v):
            raise NumericalError(f"g_step {self.step}: non-finite generator loss")
        grads = backward(tape, total, self.G)
        self.opt_g.step(self.G, grads)
        self.ema.update(self.G)
        return adv_v, recon_v, total_v

    def train_step(self) -> LossReport:
        k = self.step
        batch = self.batch(k)
        d_loss = 0.0
        if self.config.adversarial:
            for j in range(self.config.d_steps_per_g):
                d_loss = self.d_step(batch, self.step_rng(k, j))
        adv, recon, total = self.g_step(batch, self.step_rng(k, 1000))
        rep = LossReport(k, k // self.steps_per_epoch, d_loss, adv, recon, total)
        self.history.append(rep)
        self.step += 1
        return rep

    # ------------------------------------------------------------------
    def model(self, ema: bool = True) -> GestureModel:
        params = self.ema.as_params() if ema else {k: parameter(p.data.copy(), k) for k, p in self.G.items()}
        return GestureModel(self.cfg, params, self.normalizer, self.schedule)

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        arrays.update(checkpoint.prefixed("G", {k: p.data for k, p in self.G.items()}))
        arrays.update(checkpoint.prefixed("D", {k: p.data for k, p in self.D.items()}))
        arrays.update(checkpoint.prefixed("EMA", self.ema.shadow))
        arrays.update(checkpoint.prefixed("opt_g", self.opt_g.state_dict()))
        arrays.update(checkpoint.prefixed("opt_d", self.opt_d.state_dict()))
        return arrays

    def save(self, path) -> Path:
        meta = {
            "kind": "trainer",
            "train": self.config.to_dict(),
            "model": self.cfg.to_dict(),
            "schedule": self.schedule.to_text(),
            "normalizer": {"mean": self.normalizer.mean.tolist(), "scale": self.normalizer.scale},
            "step": self.step,
            "ema_updates": self.ema.updates,
            "history": [r.row() for r in self.history],
            "warnings": self.warnings,
        }
        return checkpoint.save(path, self.state_arrays(), meta)

    @classmethod
    def resume(cls, path, train_set: GestureDataset) -> "Trainer":
        arrays, meta = checkpoint.load(path)
        if meta.get("kind") != "trainer":
            raise ValueError(f"{path} is not a trainer checkpoint")
        config = TrainConfig.from_dict(meta["train"])
        norm = Normalizer(np.array(meta["normalizer"]["mean"]), float(meta["normalizer"]["scale"]))
        tr = cls(config, train_set, norm)
        for name, target in (("G", tr.G), ("D", tr.D)):
            for k, v in checkpoint.group(arrays, name).items():
                target[k].data = np.array(v)
        tr.ema.shadow = {k: np.array(v) for k, v in checkpoint.group(arrays, "EMA").items()}
        tr.ema.updates = int(meta["ema_updates"])
        tr.opt_g.load_state_dict(checkpoint.group(arrays, "opt_g"))
        tr.opt_d.load_state_dict(checkpoint.group(arrays, "opt_d"))
        tr.step = int(meta["step"])
        tr.history = [LossReport(int(r[0]), int(r[1]), *map(float, r[2:])) for r in meta["history"]]
        tr.warnings = list(meta.get("warnings", []))
        return tr


@dataclass
class TrainResult:
    trainer: Trainer
    model: GestureModel  # EMA generator
    history: list[LossReport]
    warnings: list[str]


def write_loss_csv(path, history: list[LossReport]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in history:
            w.writerow([r.step, r.epoch] + [repr(v) for v in (r.d_loss, r.g_adv, r.g_recon, r.g_total)])


def total_steps(config: TrainConfig, trainer: Trainer) -> int:
    steps = config.epochs * trainer.steps_per_epoch
    return steps if config.max_steps is None else min(steps, config.max_steps)


def fit(
    config: TrainConfig,
    train_set: GestureDataset,
    *,
    out_dir=None,
    checkpoint_every: int | None = None,
    resume_from=None,
    stop_at: int | None = None,
    callback: Callable[[Trainer, LossReport], None] | None = None,
) -> TrainResult:
    """Alternate discriminator and generator updates for the configured budget.

    ``stop_at`` ends the run early at that global step (the budget used for
    the schedule of epochs is unchanged), which is how interrupted runs are
    simulated. Checkpoints go to ``out_dir/ckpt_<epoch>.npz`` every
    ``checkpoint_every`` epochs; the loss log to ``out_dir/loss.csv``.
    """
    tr = Trainer.resume(resume_from, train_set) if resume_from else Trainer(config, train_set)
    config = tr.config
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    end = total_steps(config, tr)
    if stop_at is not None:
        end = min(end, stop_at)
    spe = tr.steps_per_epoch
    smoothed = None
    low_run = 0
    while tr.step < end:
        rep = tr.train_step()
        if config.adversarial:
            smoothed = rep.d_loss if smoothed is None else 0.9 * smoothed + 0.1 * rep.d_loss
            low_run = low_run + 1 if smoothed < COLLAPSE_THRESHOLD else 0
            if low_run == spe:
                msg = f"discriminator saturated (smoothed d_loss < {COLLAPSE_THRESHOLD}) through epoch {rep.epoch}"
                tr.warnings.append(msg)
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
                low_run = 0
        if callback is not None:
            callback(tr, rep)
        if tr.step % spe == 0:
            epoch = tr.step // spe
            log.info("epoch %d step %d d=%.4f g_adv=%.4f g_rec=%.4f", epoch, tr.step, rep.d_loss, rep.g_adv, rep.g_recon)
            if out is not None and checkpoint_every and epoch % checkpoint_every == 0:
                tr.save(out / f"ckpt_{epoch:05d}.npz")
    if out is not None:
        write_loss_csv(out / "loss.csv", tr.history)
        tr.save(out / "trainer.npz")
        tr.model(ema=True).save(out / "model.npz", {"train": config.to_dict(), "step": tr.step})
    return TrainResult(tr, tr.model(ema=True), tr.history, tr.warnings)


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    model_kw = {k[6:]: kw.pop(k) for k in list(kw) if k.startswith("model_")}
    if model_kw:
        kw["model"] = replace(config.model, **model_kw)
    return replace(config, **kw)
