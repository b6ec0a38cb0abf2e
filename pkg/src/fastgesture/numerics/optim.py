"""AdamW and parameter EMA over name -> Tensor dictionaries."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import NumericalError, Tensor


def _check_shapes(params: Mapping[str, Tensor], other: Mapping[str, np.ndarray], what: str) -> None:
    if params.keys() != other.keys():
        raise ValueError(f"{what}: parameter names differ")
    for k, p in params.items():
        if np.shape(other[k]) != p.shape:
            raise ValueError(f"{what}: shape mismatch for {k}: {np.shape(other[k])} vs {p.shape}")


@dataclass
class AdamW:
    """Adam with decoupled weight decay; updates parameters in place."""

    lr: float
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> None:
        _check_shapes(params, grads, "adamw_step")
        for k, g in grads.items():
            if not np.isfinite(g).all():
                raise NumericalError(f"non-finite gradient for {k}")
        if not self.m:
            self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
            self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for k, p in params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": a for k, a in self.m.items()}
        out.update({f"v/{k}": a for k, a in self.v.items()})
        out["step_count"] = np.asarray(self.step_count)
        return out

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        self.step_count = int(state["step_count"])
        self.m = {k[2:]: np.array(a) for k, a in state.items() if k.startswith("m/")}
        self.v = {k[2:]: np.array(a) for k, a in state.items() if k.startswith("v/")}


def adamw_step(state: AdamW, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> AdamW:
    state.step(params, grads)
    return state


class Ema:
    """Shadow copy tracking ``decay * shadow + (1 - decay) * params``.

    With ``warmup=True`` the effective decay is ``min(decay, (1 + n) / (10 + n))``
    after ``n`` updates, so short runs are not dominated by the initial weights.
    """

    def __init__(self, params: Mapping[str, Tensor], decay: float = 0.999, warmup: bool = False):
        if not 0.0 <= decay <= 1.0:
            raise ValueError("decay must lie in [0, 1]")
        self.decay = decay
        self.warmup = warmup
        self.updates = 0
        self.shadow = {k: p.data.copy() for k, p in params.items()}

    def current_decay(self) -> float:
        if not self.warmup:
            return self.decay
        return min(self.decay, (1.0 + self.updates) / (10.0 + self.updates))

    def update(self, params: Mapping[str, Tensor]) -> None:
        _check_shapes(params, self.shadow, "ema_update")
        d = self.current_decay()
        self.updates += 1
        for k, p in params.items():
            s = self.shadow[k]
            s *= d
            s += (1.0 - d) * p.data

    def as_params(self) -> dict[str, Tensor]:
        return {k: Tensor(a.copy()) for k, a in self.shadow.items()}


def ema_update(state: Ema, params: Mapping[str, Tensor]) -> Ema:
    state.update(params)
    return state
