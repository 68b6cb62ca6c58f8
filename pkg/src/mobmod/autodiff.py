"""Dense float64 tensors with reverse-mode gradients.

Small closure-based autodiff: every op returns a Tensor that remembers its
parents and how to push gradients back to them. Storage is numpy, the heavy
matmuls dispatch to BLAS, and everything is deterministic for fixed inputs.
Set MOBMOD_CHECK_FINITE=1 to assert op outputs stay finite.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

_CHECK_FINITE = os.environ.get("MOBMOD_CHECK_FINITE", "") not in ("", "0")

_GELU_C = math.sqrt(2.0 / math.pi)


class Tensor:
    """A float64 ndarray plus the bookkeeping needed for backward()."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the module-level functions do the work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return narrow(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into .grad of every reachable leaf."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values in op output")
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Stacked matrix product; d/da = g.b^T, d/db = a^T.g (unbroadcast)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}"
        )
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            _accum(x, g.reshape(x.data.shape))

    return _make(data, (x,), backward)


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = x.data.transpose(axes)

    def backward(g):
        if x.requires_grad:
            _accum(x, g.transpose(inv))

    return _make(data, (x,), backward)


def narrow(x, idx) -> Tensor:
    """Basic slicing with gradient scatter into a zero tensor."""
    x = _as_tensor(x)
    data = x.data[idx]

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[idx] = g
            _accum(x, full)

    return _make(data, (x,), backward)


def tsum(x) -> Tensor:
    x = _as_tensor(x)
    data = np.asarray(x.data.sum())

    def backward(g):
        if x.requires_grad:
            _accum(x, np.broadcast_to(g, x.data.shape).copy())

    return _make(data, (x,), backward)


def gelu(x) -> Tensor:
    """GELU, tanh approximation (GPT-2 convention)."""
    x = _as_tensor(x)
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    data = 0.5 * v * (1.0 + t)

    def backward(g):
        if x.requires_grad:
            d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v**2)
            dv = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * d_inner
            _accum(x, g * dv)

    return _make(data, (x,), backward)


def softmax_rows(x, causal: bool = False) -> Tensor:
    """Row-wise (last axis) softmax with max subtraction.

    With causal=True the last two axes must be square attention scores;
    entries with column > row get exactly zero weight.
    """
    x = _as_tensor(x)
    v = x.data
    if causal:
        n, m = v.shape[-2], v.shape[-1]
        if n != m:
            raise ValueError("causal softmax needs square score matrices")
        mask = np.triu(np.ones((n, n), dtype=bool), k=1)
        v = np.where(mask, -np.inf, v)
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * s).sum(axis=-1, keepdims=True)
            _accum(x, s * (g - dot))

    return _make(s, (x,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Per-row (last axis) normalization followed by an affine map."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    v = x.data
    mean = v.mean(axis=-1, keepdims=True)
    centered = v - mean
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gain.data + bias.data

    def backward(g):
        d = v.shape[-1]
        if gain.requires_grad:
            _accum(gain, _unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            _accum(bias, _unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            gx = g * gain.data
            term = gx - gx.mean(axis=-1, keepdims=True) \
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            _accum(x, term * inv)
        del d

    return _make(data, (x, gain, bias), backward)


def embedding(table, ids: np.ndarray) -> Tensor:
    """Gather table rows by integer ids; backward scatter-adds."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids.ravel(), g.reshape(-1, table.data.shape[-1]))
            _accum(table, full)

    return _make(data, (table,), backward)


def cross_entropy_mean(logits, targets: np.ndarray) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target].

    logits: Tensor [B, V]; targets: integer array [B] with values in [0, V).
    Gradient is (softmax - onehot) / B.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if logits.data.ndim != 2:
        raise ValueError("cross_entropy_mean expects [B, V] logits")
    b, v = logits.data.shape
    if targets.shape != (b,):
        raise ValueError("targets must be a [B] integer vector")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise ValueError("target out of range")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    losses = lse - z[np.arange(b), targets]
    data = np.asarray(losses.mean())

    def backward(g):
        if logits.requires_grad:
            soft = np.exp(z - m)
            soft /= soft.sum(axis=1, keepdims=True)
            soft[np.arange(b), targets] -= 1.0
            _accum(logits, g * soft / b)

    return _make(data, (logits,), backward)


@dataclass
class AdamState:
    """First/second moment estimates and the step counter, keyed like params."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState | None = None,
    lr: float = 0.01,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    if state is None:
        state = AdamState()
    t = state.t + 1
    new_params: dict = {}
    new_m: dict = {}
    new_v: dict = {}
    for name, p in params.items():
        g = np.asarray(grads[name])
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {p.shape}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        new_params[name] = p - lr * mhat / (np.sqrt(vhat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(m=new_m, v=new_v, t=t)


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> dict:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return dict(grads)
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def finite_diff_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    analytic: Mapping[str, np.ndarray] | None = None,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    f builds a scalar Tensor from a dict of parameter Tensors. When
    `analytic` is omitted the gradients come from f's own backward pass.
    Relative error uses a 1e-12 denominator floor.
    """
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    if analytic is None:
        leaves = {k: Tensor(v, requires_grad=True) for k, v in work.items()}
        loss = f(leaves)
        loss.backward()
        analytic = {
            k: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for k, t in leaves.items()
        }

    def value() -> float:
        return f({k: Tensor(v) for k, v in work.items()}).item()

    worst = 0.0
    for name, arr in work.items():
        an = np.asarray(analytic[name])
        flat = arr.reshape(-1)
        an_flat = an.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = value()
            flat[i] = keep - eps
            down = value()
            flat[i] = keep
            fd = (up - down) / (2 * eps)
            denom = max(abs(fd), abs(an_flat[i]), 1e-12)
            worst = max(worst, abs(fd - an_flat[i]) / denom)
    return worst
