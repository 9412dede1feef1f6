"""Minimal reverse-mode autodiff over float64 numpy arrays.

The graph is define-by-run and rebuilt on every forward pass: each op returns
a DiffNode holding its value, its parents, and a vector-Jacobian closure.
backward() walks the graph once in reverse topological order and accumulates
gradients into every reachable node that requires them.
"""

from __future__ import annotations

import hashlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .container import read_container, write_container
from .errors import ConfigurationError, NumericDomainError, UsageError

Array = np.ndarray


def _as_value(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    return a


class DiffNode:
    """One node of the computation graph: a float64 array plus its gradient slot."""

    __slots__ = ("value", "grad", "parents", "vjp", "requires_grad")

    def __init__(
        self,
        value,
        parents: tuple["DiffNode", ...] = (),
        vjp: Callable[[Array], tuple] | None = None,
        requires_grad: bool | None = None,
    ):
        self.value = _as_value(value)
        self.grad: Array | None = None
        self.parents = parents
        self.vjp = vjp
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"DiffNode(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


def constant(x) -> DiffNode:
    return DiffNode(x, requires_grad=False)


def _wrap(x) -> DiffNode:
    return x if isinstance(x, DiffNode) else constant(x)


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Reduce a broadcasted gradient back to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise and linear ops ---------------------------------------------

def add(a, b) -> DiffNode:
    a, b = _wrap(a), _wrap(b)
    out = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return DiffNode(out, (a, b), vjp)


def sub(a, b) -> DiffNode:
    a, b = _wrap(a), _wrap(b)
    out = a.value - b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

    return DiffNode(out, (a, b), vjp)


def mul(a, b) -> DiffNode:
    a, b = _wrap(a), _wrap(b)
    out = a.value * b.value

    def vjp(g):
        return (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        )

    return DiffNode(out, (a, b), vjp)


def neg(a) -> DiffNode:
    a = _wrap(a)
    return DiffNode(-a.value, (a,), lambda g: (-g,))


def matmul(a, b) -> DiffNode:
    a, b = _wrap(a), _wrap(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ConfigurationError(
            f"matmul expects 2-D operands, got {a.value.shape} and {b.value.shape}"
        )
    if a.value.shape[1] != b.value.shape[0]:
        raise ConfigurationError(
            f"matmul inner dimensions disagree: {a.value.shape} @ {b.value.shape}"
        )
    out = a.value @ b.value

    def vjp(g):
        return g @ b.value.T, a.value.T @ g

    return DiffNode(out, (a, b), vjp)


def relu(a) -> DiffNode:
    a = _wrap(a)
    mask = a.value > 0.0
    return DiffNode(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> DiffNode:
    a = _wrap(a)
    # evaluate on the negative half-line only so exp never overflows
    v = a.value
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    s = out

    return DiffNode(out, (a,), lambda g: (g * s * (1.0 - s),))


def log(a) -> DiffNode:
    a = _wrap(a)
    if np.any(a.value <= 0.0) or not np.all(np.isfinite(a.value)):
        raise NumericDomainError("log requires strictly positive finite input")
    out = np.log(a.value)
    return DiffNode(out, (a,), lambda g: (g / a.value,))


def exp(a) -> DiffNode:
    a = _wrap(a)
    out = np.exp(a.value)
    return DiffNode(out, (a,), lambda g: (g * out,))


def clip_min(a, lo: float) -> DiffNode:
    """Lower clamp; gradient passes only where the input was not clipped."""
    a = _wrap(a)
    mask = a.value >= lo
    out = np.where(mask, a.value, lo)
    return DiffNode(out, (a,), lambda g: (g * mask,))


def softmax_rows(logits) -> DiffNode:
    """Row-wise softmax with max-subtraction; rows of the output sum to 1."""
    a = _wrap(logits)
    if not np.all(np.isfinite(a.value)):
        raise NumericDomainError("softmax_rows requires finite logits")
    shifted = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return DiffNode(out, (a,), vjp)


# -- shape ops ----------------------------------------------------------------

def reduce_sum(a, axis=None, keepdims=False) -> DiffNode:
    a = _wrap(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return DiffNode(out, (a,), vjp)


def reduce_mean(a, axis=None, keepdims=False) -> DiffNode:
    a = _wrap(a)
    out = a.value.mean(axis=axis, keepdims=keepdims)
    n = a.value.size if axis is None else a.value.shape[axis]

    def vjp(g):
        g = np.asarray(g) / n
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return DiffNode(out, (a,), vjp)


def reshape(a, shape) -> DiffNode:
    a = _wrap(a)
    out = a.value.reshape(shape)
    return DiffNode(out, (a,), lambda g: (g.reshape(a.value.shape),))


def concat_cols(parts: Sequence) -> DiffNode:
    nodes = [_wrap(p) for p in parts]
    out = np.concatenate([n.value for n in nodes], axis=1)
    widths = [n.value.shape[1] for n in nodes]
    splits = np.cumsum(widths)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=1))

    return DiffNode(out, tuple(nodes), vjp)


def slice_cols(a, start: int, stop: int) -> DiffNode:
    a = _wrap(a)
    out = a.value[:, start:stop]

    def vjp(g):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        return (full,)

    return DiffNode(out, (a,), vjp)


def tile_rows(a, reps: int) -> DiffNode:
    """Stack `reps` copies of the row block: [a; a; ...]."""
    a = _wrap(a)
    n = a.value.shape[0]
    out = np.tile(a.value, (reps, 1))

    def vjp(g):
        return (g.reshape(reps, n, -1).sum(axis=0),)

    return DiffNode(out, (a,), vjp)


def repeat_rows(a, reps: int) -> DiffNode:
    """Repeat each row `reps` times in place: [a0; a0; ...; a1; a1; ...]."""
    a = _wrap(a)
    n = a.value.shape[0]
    out = np.repeat(a.value, reps, axis=0)

    def vjp(g):
        return (g.reshape(n, reps, -1).sum(axis=1),)

    return DiffNode(out, (a,), vjp)


# -- backward ------------------------------------------------------------------

def backward(root: DiffNode) -> None:
    """Populate .grad for every node reachable from `root` that requires grad.

    The root must be scalar. Gradients accumulate: repeated calls without
    clearing add their contributions.
    """
    if root.value.ndim != 0 and root.value.size != 1:
        raise UsageError(f"backward root must be scalar, got shape {root.value.shape}")

    # iterative reverse topological order
    order: list[DiffNode] = []
    seen: set[int] = set()
    stack: list[tuple[DiffNode, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    # per-pass accumulators keep repeated backward calls additive in .grad
    local: dict[int, Array] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = local.get(id(node))
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.zeros_like(node.value)
        node.grad += g
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad or pg is None:
                continue
            acc = local.get(id(parent))
            if acc is None:
                local[id(parent)] = np.asarray(pg, dtype=np.float64).reshape(parent.value.shape).copy()
            else:
                acc += pg


# -- parameters, Adam, checkpoints ---------------------------------------------

def rng_for(seed: int, *labels: str) -> np.random.Generator:
    """Deterministic generator for (seed, labels); labels split the stream."""
    digest = hashlib.sha256(("/".join(labels)).encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *words])))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> Array:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class ParameterStore:
    """Named trainable tensors with per-parameter Adam state."""

    def __init__(self):
        self._params: dict[str, DiffNode] = {}
        self._m: dict[str, Array] = {}
        self._v: dict[str, Array] = {}
        self._steps: dict[str, int] = {}

    def parameter(self, name: str, value: Array) -> DiffNode:
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name: {name!r}")
        node = DiffNode(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = node
        self._m[name] = np.zeros_like(node.value)
        self._v[name] = np.zeros_like(node.value)
        self._steps[name] = 0
        return node

    def __getitem__(self, name: str) -> DiffNode:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def nodes(self) -> list[DiffNode]:
        return list(self._params.values())

    def zero_grads(self) -> None:
        for node in self._params.values():
            node.grad = None

    def adam_step(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8) -> None:
        """Bias-corrected Adam update on all parameters; clears grads after."""
        b1, b2 = betas
        for name, node in self._params.items():
            g = node.grad if node.grad is not None else np.zeros_like(node.value)
            self._steps[name] += 1
            t = self._steps[name]
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            node.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        self.zero_grads()

    # snapshots are plain dicts of copied arrays (used by early stopping)
    def snapshot(self) -> dict[str, Array]:
        return {k: v.value.copy() for k, v in self._params.items()}

    def restore(self, snap: dict[str, Array]) -> None:
        for k, arr in snap.items():
            self._params[k].value[...] = arr

    # -- checkpoint io -------------------------------------------------------
    def save(self, path, meta: dict | None = None) -> None:
        arrays: dict[str, Array] = {}
        for name, node in self._params.items():
            arrays[f"param/{name}"] = node.value
            arrays[f"adam.m/{name}"] = self._m[name]
            arrays[f"adam.v/{name}"] = self._v[name]
        header = {
            "kind": "survmoe-checkpoint",
            "param_names": list(self._params),
            "adam_steps": {k: self._steps[k] for k in self._params},
            "meta": meta or {},
        }
        write_container(path, arrays, header)

    @classmethod
    def load(cls, path) -> tuple["ParameterStore", dict]:
        arrays, header = read_container(path)
        if header.get("kind") != "survmoe-checkpoint":
            raise UsageError(f"{path}: not a parameter checkpoint")
        store = cls()
        for name in header["param_names"]:
            store.parameter(name, arrays[f"param/{name}"])
            store._m[name] = np.array(arrays[f"adam.m/{name}"])
            store._v[name] = np.array(arrays[f"adam.v/{name}"])
            store._steps[name] = int(header["adam_steps"][name])
        return store, header.get("meta", {})
