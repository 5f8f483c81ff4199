"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation records itself on a module-level tape as it
executes.  ``backward(loss)`` walks that tape once, in reverse execution
order, accumulating adjoints into ``.grad`` buffers, then clears the tape.
All kernels are pure numpy and deterministic: identical inputs give
bit-identical outputs.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ShapeError, UsageError

# Ordered record of op outputs from the current forward pass(es).  Reverse
# iteration over this list visits each recorded operation exactly once,
# newest first, which is what the adjoint sweep needs.
_TAPE: list["Tensor"] = []
_GRAD_ENABLED: bool = True


class no_grad:
    """Context manager that disables taping (evaluation / frozen passes)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def tape_size() -> int:
    return len(_TAPE)


def reset_tape() -> None:
    """Drop any recorded operations without running a backward pass."""
    for t in _TAPE:
        t._bw = None
        t._parents = ()
    _TAPE.clear()


class Tensor:
    """A dense float64 array that can participate in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw", "_track")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._bw: Callable[[np.ndarray], None] | None = None
        self._track = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """A constant view of this tensor's value, cut off from the tape."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise UsageError("tensor/tensor division is not supported; use mul with a reciprocal")
        return mul(self, _as_tensor(1.0 / float(scalar)))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], bw: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result, recording it on the tape when gradients can flow."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p._track for p in parents):
        out._parents = parents
        out._bw = bw
        out._track = True
        _TAPE.append(out)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t._track:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on everything the scalar ``loss`` depends on.

    Walks the tape in reverse execution order, then clears it.  Raises
    UsageError when ``loss`` is not a scalar or was produced off-tape.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._bw is None and not loss.requires_grad:
        raise UsageError("loss is not connected to the gradient tape")
    loss.grad = np.ones_like(loss.data)
    for t in reversed(_TAPE):
        if t.grad is not None and t._bw is not None:
            t._bw(t.grad)
    reset_tape()


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- elementwise and structural ops ---------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(data, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.shape}")

    def bw(g):
        _accum(a, g.T)

    return _make(a.data.T.copy(), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape))

    return _make(data, (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), _as_tensor(1.0 / n))


def vmax(a: Tensor) -> Tensor:
    """Maximum over all elements; gradient routes to the first argmax."""
    if a.data.size == 0:
        raise ShapeError("vmax of an empty tensor")
    idx = int(np.argmax(a.data))
    data = np.asarray(a.data.reshape(-1)[idx])

    def bw(g):
        gfull = np.zeros_like(a.data)
        gfull.reshape(-1)[idx] = np.asarray(g).reshape(-1)[0]
        _accum(a, gfull)

    return _make(data, (a,), bw)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack 2-D tensors along axis 0."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_rows needs at least one part")
    data = np.concatenate([p.data for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[lo:hi])

    return _make(data, tuple(parts), bw)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Stack 2-D tensors along axis 1."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_cols needs at least one part")
    data = np.concatenate([p.data for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.data.shape[1] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[:, lo:hi])

    return _make(data, tuple(parts), bw)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"slice_cols expects a 2-D tensor, got {a.shape}")

    def bw(g):
        acc = np.zeros_like(a.data)
        acc[:, lo:hi] = g
        _accum(a, acc)

    return _make(a.data[:, lo:hi].copy(), (a,), bw)


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows by index; the adjoint scatter-adds back."""
    idx = np.asarray(idx, dtype=np.intp)
    data = a.data[idx]

    def bw(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        _accum(a, acc)

    return _make(data, (a,), bw)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup into an embedding table (out-of-range ids raise IndexError)."""
    return take_rows(table, ids)


# -- nonlinearities ---------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        _accum(a, g * mask)

    return _make(a.data * mask, (a,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU (smooth, erf-free)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner
        _accum(a, g * local)

    return _make(data, (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def bw(g):
        _accum(a, g * 0.5 / data)

    return _make(data, (a,), bw)


def reciprocal(a: Tensor) -> Tensor:
    data = 1.0 / a.data

    def bw(g):
        _accum(a, -g * data * data)

    return _make(data, (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtraction)."""
    if a.data.shape == () or a.data.shape[axis] == 0:
        raise ShapeError(f"softmax over an empty axis: shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        _accum(a, p * (g - dot))

    return _make(p, (a,), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.data.shape == () or a.data.shape[axis] == 0:
        raise ShapeError(f"log_softmax over an empty axis: shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def bw(g):
        p = np.exp(data)
        _accum(a, g - p * g.sum(axis=axis, keepdims=True))

    return _make(data, (a,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each slice along the last axis to zero mean/unit variance,
    then apply the affine (gain, bias)."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match feature dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gain.data + bias.data

    def bw(g):
        _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        _accum(bias, g.reshape(-1, d).sum(axis=0))
        gh = g * gain.data
        gh_mean = gh.mean(axis=-1, keepdims=True)
        ghx_mean = (gh * xhat).mean(axis=-1, keepdims=True)
        _accum(x, (gh - gh_mean - xhat * ghx_mean) * inv)

    return _make(data, (x, gain, bias), bw)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits).

    ``logits`` is (n, C); ``labels`` is a length-n index sequence.  Fused
    with log-softmax for stability.
    """
    labels = np.asarray(labels, dtype=np.intp)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects (n, C) logits, got {logits.shape}")
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy got {n} rows but {labels.shape} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    data = np.asarray(-logp[np.arange(n), labels].mean())

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        _accum(logits, p * (np.asarray(g).reshape(-1)[0] / n))

    return _make(data, (logits,), bw)


def conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Same-padded 1-D cross-correlation of a length-n signal.

    The kernel length must be odd so the zero padding is symmetric.
    """
    if x.data.ndim != 1 or kernel.data.ndim != 1:
        raise ShapeError(f"conv1d expects 1-D operands, got {x.shape} and {kernel.shape}")
    k = kernel.data.shape[0]
    if k % 2 == 0:
        raise ConfigError(f"conv1d kernel length must be odd, got {k}")
    n = x.data.shape[0]
    half = k // 2
    xp = np.concatenate([np.zeros(half), x.data, np.zeros(half)])
    data = np.array([xp[i : i + k] @ kernel.data for i in range(n)])

    def bw(g):
        gp = np.concatenate([np.zeros(half), g, np.zeros(half)])
        # cross-correlation adjoint: correlate the upstream grad with the
        # flipped kernel for dx, and with the padded input for dk
        dx = np.array([gp[i : i + k] @ kernel.data[::-1] for i in range(n)])
        dk = np.array([xp[j : j + n] @ g for j in range(k)])
        _accum(x, dx)
        _accum(kernel, dk)

    return _make(data, (x, kernel), bw)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when rate is 0 or no rng is supplied."""
    if rate < 0 or rate >= 1:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0 or rng is None:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)

    def bw(g):
        _accum(a, g * keep)

    return _make(a.data * keep, (a,), bw)


# -- optimizer --------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay.

    Moment buffers start at zero; the decay term is applied outside the
    adaptive scaling, so a zero-gradient step with decay shrinks parameters
    by exactly (1 - lr * weight_decay).
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 3e-5,
        weight_decay: float = 0.01,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if weight_decay < 0:
            raise ConfigError(f"weight decay must be nonnegative, got {weight_decay}")
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - self.lr * (update + self.weight_decay * p.data)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment buffers keyed for checkpointing."""
        out: dict[str, np.ndarray] = {}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.params:
            self.m[name] = np.array(arrays[f"adam.m.{name}"], dtype=np.float64)
            self.v[name] = np.array(arrays[f"adam.v.{name}"], dtype=np.float64)
        self.step_count = step_count
