"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays. While a :class:`Tape` is active,
every primitive whose inputs include a tracked tensor appends one node to
the tape; :func:`backward` replays the nodes in reverse creation order,
which is already a valid topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "NumericalError",
    "Tape",
    "Tensor",
    "as_tensor",
    "backward",
    "parameter",
]


class NumericalError(FloatingPointError):
    """A NaN or infinity appeared where a finite value is required."""


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; nested tapes record only into the innermost.
    """

    def __init__(self) -> None:
        self.nodes: list[tuple[Tensor, tuple, Callable]] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        self.nodes = []


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


class Tensor:
    """A float64 array that can take part in recorded computations."""

    __slots__ = ("data", "requires_grad", "name")
    # make ndarray <op> Tensor dispatch to Tensor's reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _raw(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _tracked(x) -> bool:
    return isinstance(x, Tensor) and x.requires_grad


def _finite(a: np.ndarray) -> bool:
    # a single reduction; overflow of the sum itself is also treated as failure
    return bool(np.isfinite(np.add.reduce(a, axis=None)))


def _emit(out: np.ndarray, inputs: tuple, vjp: Callable, check: bool = True) -> Tensor:
    # shape-only primitives pass check=False: they cannot create non-finite values
    if check and not _finite(out):
        raise NumericalError(f"non-finite value produced by {vjp.__qualname__.split('.')[0]}")
    t = Tensor(out)
    tape = active_tape()
    if tape is not None and any(_tracked(x) for x in inputs):
        t.requires_grad = True
        tape.nodes.append((t, inputs, vjp))
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(tape: Tape, loss: Tensor, params=None):
    """Propagate d(loss) back through ``tape``.

    ``params`` may be a mapping name -> Tensor (returns a dict), a sequence
    of tensors (returns a list) or None (returns a dict keyed by ``id``).
    Parameters the loss does not depend on receive exact zeros. The tape is
    reset afterwards.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ValueError("backward needs a scalar loss tensor")
    if not np.isfinite(loss.data).all():
        raise NumericalError("loss is not finite")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, vjp in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for x, gx in zip(inputs, vjp(g)):
            if gx is None or not _tracked(x):
                continue
            gx = _unbroadcast(np.asarray(gx, dtype=np.float64), x.shape)
            key = id(x)
            prev = grads.get(key)
            grads[key] = gx if prev is None else prev + gx
    tape.reset()
    # non-finite values propagate, so checking what reached the leaves suffices
    for g in grads.values():
        if not _finite(g):
            raise NumericalError("non-finite gradient during backward pass")

    def _get(p: Tensor) -> np.ndarray:
        g = grads.get(id(p))
        return np.zeros_like(p.data) if g is None else g

    if params is None:
        return grads
    if isinstance(params, Mapping):
        return {k: _get(p) for k, p in params.items()}
    return [_get(p) for p in params]


# --------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    return _emit(_raw(a) + _raw(b), (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    return _emit(_raw(a) - _raw(b), (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    ad, bd = _raw(a), _raw(b)

    def mul_vjp(g):
        return (g * bd if _tracked(a) else None, g * ad if _tracked(b) else None)

    return _emit(ad * bd, (a, b), mul_vjp)


def div(a, b) -> Tensor:
    ad, bd = _raw(a), _raw(b)
    out = ad / bd

    def div_vjp(g):
        return (g / bd if _tracked(a) else None, -g * out / bd if _tracked(b) else None)

    return _emit(out, (a, b), div_vjp)


def neg(a) -> Tensor:
    return _emit(-_raw(a), (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    ad = _raw(a)

    def power_vjp(g):
        return (g * exponent * ad ** (exponent - 1),)

    return _emit(ad**exponent, (a,), power_vjp)


def square(a) -> Tensor:
    ad = _raw(a)
    return _emit(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def exp(a) -> Tensor:
    out = np.exp(_raw(a))
    return _emit(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    ad = _raw(a)
    return _emit(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    out = np.sqrt(_raw(a))
    return _emit(out, (a,), lambda g: (0.5 * g / out,))


def tanh(a) -> Tensor:
    out = np.tanh(_raw(a))
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    out = _sigmoid_np(_raw(a))
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    """log(1 + exp(a)), evaluated without overflow."""
    ad = _raw(a)
    out = np.maximum(ad, 0.0) + np.log1p(np.exp(-np.abs(ad)))
    return _emit(out, (a,), lambda g: (g * _sigmoid_np(ad),))


def relu(a) -> Tensor:
    ad = _raw(a)
    return _emit(np.maximum(ad, 0.0), (a,), lambda g: (g * (ad > 0),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """Tanh approximation of the Gaussian error linear unit."""
    x = _raw(a)
    x2 = x * x
    th = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + th)

    def gelu_vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner),)

    return _emit(out, (a,), gelu_vjp)


SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946


def selu(a) -> Tensor:
    x = _raw(a)
    neg_part = SELU_SCALE * SELU_ALPHA * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, SELU_SCALE * x, neg_part)

    def selu_vjp(g):
        return (g * np.where(x > 0, SELU_SCALE, neg_part + SELU_SCALE * SELU_ALPHA),)

    return _emit(out, (a,), selu_vjp)


# --------------------------------------------------------------------------
# reductions and shape manipulation


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    ad = _raw(a)
    shape = ad.shape

    def sum_vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _emit(np.sum(ad, axis=axis, keepdims=keepdims), (a,), sum_vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    ad = _raw(a)
    n = ad.size if axis is None else int(np.prod([ad.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    ad = _raw(a)
    old = ad.shape
    return _emit(ad.reshape(shape), (a,), lambda g: (g.reshape(old),), check=False)


def transpose(a, axes=None) -> Tensor:
    ad = _raw(a)
    if axes is None:
        axes = tuple(reversed(range(ad.ndim)))
    inv = tuple(np.argsort(axes))
    return _emit(ad.transpose(axes), (a,), lambda g: (g.transpose(inv),), check=False)


def swapaxes(a, i: int, j: int) -> Tensor:
    ad = _raw(a)
    return _emit(np.swapaxes(ad, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), check=False)


def _basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(Ellipsis), type(None))) for i in items)


def getitem(a, idx) -> Tensor:
    ad = _raw(a)

    def getitem_vjp(g):
        out = np.zeros_like(ad)
        if _basic_index(idx):
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _emit(ad[idx], (a,), getitem_vjp, check=False)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    raws = [_raw(t) for t in tensors]
    bounds = np.cumsum([r.shape[axis] for r in raws])[:-1]

    def concat_vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit(np.concatenate(raws, axis=axis), tuple(tensors), concat_vjp, check=False)


def broadcast_to(a, shape) -> Tensor:
    ad = _raw(a)
    return _emit(np.broadcast_to(ad, shape).copy(), (a,), lambda g: (g,))


# --------------------------------------------------------------------------
# linear algebra


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # one GEMM instead of a loop of per-batch products
    if b.ndim == 2 and a.ndim > 2:
        return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[-1],))
    return a @ b


def matmul(a, b) -> Tensor:
    ad, bd = _raw(a), _raw(b)

    def matmul_vjp(g):
        ga = gb = None
        if _tracked(a):
            ga = _mm(g, np.swapaxes(bd, -1, -2)) if bd.ndim > 1 else np.multiply.outer(g, bd)
        if _tracked(b):
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _emit(_mm(ad, bd), (a, b), matmul_vjp)


def linear(x, weight, bias=None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# --------------------------------------------------------------------------
# normalization, attention helpers, losses


def softmax(a, axis: int = -1) -> Tensor:
    x = _raw(a)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def softmax_vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit(out, (a,), softmax_vjp)


def standardize(a, eps: float = 1e-5) -> Tensor:
    """Zero mean, unit variance over the last axis (biased variance)."""
    x = _raw(a)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def standardize_vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _emit(y, (a,), standardize_vjp)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    return add(mul(standardize(x, eps), gain), bias)


def group_norm(x, groups: int, gain=None, bias=None, eps: float = 1e-10) -> Tensor:
    """Normalize channel groups of the last axis, then apply the affine map.

    ``eps`` is kept tiny so the normalized groups have unit variance to
    within 1e-8; constant groups still map to exact zeros.
    """
    shape = _raw(x).shape
    channels = shape[-1]
    if groups < 1 or channels % groups:
        raise ValueError(f"{channels} channels not divisible into {groups} groups")
    y = reshape(x, shape[:-1] + (groups, channels // groups))
    y = reshape(standardize(y, eps), shape)
    if gain is not None:
        y = mul(y, gain)
    if bias is not None:
        y = add(y, bias)
    return y


def huber_loss(pred, target, delta: float = 1.0) -> Tensor:
    """Mean Huber penalty of ``pred - target``."""
    p, q = _raw(pred), _raw(target)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    if not delta > 0:
        raise ValueError("delta must be positive")
    r = p - q
    ar = np.abs(r)
    n = r.size
    val = np.where(ar <= delta, 0.5 * r * r, delta * (ar - 0.5 * delta)).sum() / n

    def huber_vjp(g):
        d = g * np.clip(r, -delta, delta) / n
        return d, -d

    return _emit(np.asarray(val), (pred, target), huber_vjp)


def mse_loss(pred, target) -> Tensor:
    diff = sub(pred, target)
    return mean(square(diff))


def blend(a, b, mask) -> Tensor:
    """Select ``b`` where mask is 1 and ``a`` where it is 0 (mask constant)."""
    m = np.asarray(mask, dtype=np.float64)
    return add(mul(a, 1.0 - m), mul(b, m))


def gradients_of(fn: Callable[[], Tensor], params: Iterable[Tensor]) -> tuple[float, list[np.ndarray]]:
    """Run ``fn`` under a fresh tape and return (loss value, grads)."""
    params = list(params)
    with Tape() as tape:
        loss = fn()
    return loss.item(), backward(tape, loss, params)
