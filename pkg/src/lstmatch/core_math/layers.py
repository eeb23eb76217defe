"""Parameter containers and the fixed layer set built on :mod:`.tensor`.

Parameter objects hold either plain ``np.ndarray`` leaves (storage, checkpoints,
optimizer state) or :class:`Tensor` leaves (a differentiable view produced by
:func:`to_tensors`).  The same forward functions accept both.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, Callable, Iterator

import numpy as np

from . import tensor as tn
from .tensor import Tensor


class DimensionError(ValueError):
    """Raised when operand shapes do not chain."""


@dataclass
class LinearParams:
    weight: Any  # (out, in)
    bias: Any = None  # (out,) or None

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class NormParams:
    gamma: Any
    beta: Any


@dataclass
class AttentionParams:
    """One post-norm transformer block: multi-head attention then feed-forward."""

    wq: LinearParams
    wk: LinearParams
    wv: LinearParams
    wo: LinearParams
    norm1: NormParams
    ff1: LinearParams
    ff2: LinearParams
    norm2: NormParams
    heads: int = 1

    @property
    def dim(self) -> int:
        return self.wq.out_dim


# ------------------------------------------------------------------ pytrees


def _is_leaf(x) -> bool:
    return isinstance(x, (np.ndarray, Tensor))


def tree_map(fn: Callable[[Any], Any], obj):
    """Apply ``fn`` to every array leaf, rebuilding the container structure."""
    if _is_leaf(obj):
        return fn(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return type(obj)(**{f.name: tree_map(fn, getattr(obj, f.name)) for f in dataclasses.fields(obj)})
    if isinstance(obj, (list, tuple)):
        return type(obj)(tree_map(fn, x) for x in obj)
    if isinstance(obj, dict):
        return {k: tree_map(fn, v) for k, v in obj.items()}
    return obj


def named_leaves(obj, prefix: str = "") -> Iterator[tuple[str, Any]]:
    """Yield ``(dotted.path, leaf)`` pairs in a stable order."""
    if _is_leaf(obj):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            yield from named_leaves(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, x in enumerate(obj):
            yield from named_leaves(x, f"{prefix}.{i}" if prefix else str(i))
    elif isinstance(obj, dict):
        for k in sorted(obj):
            yield from named_leaves(obj[k], f"{prefix}.{k}" if prefix else str(k))


def replace_leaves(obj, values: dict[str, np.ndarray], prefix: str = ""):
    """Inverse of :func:`named_leaves`: rebuild ``obj`` with leaves taken from ``values``."""
    if _is_leaf(obj):
        return np.array(values[prefix], dtype=np.float64).reshape(obj.shape)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return type(obj)(**{
            f.name: replace_leaves(getattr(obj, f.name), values, f"{prefix}.{f.name}" if prefix else f.name)
            for f in dataclasses.fields(obj)
        })
    if isinstance(obj, (list, tuple)):
        return type(obj)(replace_leaves(x, values, f"{prefix}.{i}" if prefix else str(i)) for i, x in enumerate(obj))
    if isinstance(obj, dict):
        return {k: replace_leaves(v, values, f"{prefix}.{k}" if prefix else str(k)) for k, v in obj.items()}
    return obj


def to_tensors(params, requires_grad: bool = True):
    return tree_map(lambda a: Tensor(a.data if isinstance(a, Tensor) else a, requires_grad=requires_grad), params)


def grads_of(tparams):
    """Collect ``.grad`` from a tensor tree; untouched leaves get zeros."""
    return tree_map(lambda t: np.zeros_like(t.data) if t.grad is None else t.grad, tparams)


def copy_params(params):
    return tree_map(lambda a: np.array(a, dtype=np.float64, copy=True), params)


# ------------------------------------------------------------------ init


def init_linear(rng: np.random.Generator, in_dim: int, out_dim: int, bias: bool = True) -> LinearParams:
    bound = 1.0 / math.sqrt(in_dim)
    w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    b = rng.uniform(-bound, bound, size=(out_dim,)) if bias else None
    return LinearParams(w, b)


def init_norm(dim: int) -> NormParams:
    return NormParams(np.ones(dim), np.zeros(dim))


def init_attention(rng: np.random.Generator, dim: int, heads: int, ff_mult: int = 4) -> AttentionParams:
    if dim % heads:
        raise DimensionError(f"model dim {dim} not divisible by {heads} heads")
    return AttentionParams(
        wq=init_linear(rng, dim, dim),
        # a key bias only shifts each softmax row by a constant, so it would never learn
        wk=init_linear(rng, dim, dim, bias=False),
        wv=init_linear(rng, dim, dim),
        wo=init_linear(rng, dim, dim),
        norm1=init_norm(dim),
        ff1=init_linear(rng, dim, ff_mult * dim),
        ff2=init_linear(rng, ff_mult * dim, dim),
        norm2=init_norm(dim),
        heads=heads,
    )


# ------------------------------------------------------------------ forward ops


def linear_forward(x, p: LinearParams) -> Tensor:
    x = tn.as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != p.in_dim:
        raise DimensionError(f"linear expects (*, {p.in_dim}), got {x.shape}")
    y = tn.matmul(x, tn.transpose(tn.as_tensor(p.weight)))
    if p.bias is not None:
        y = tn.add(y, p.bias)
    return y


def mlp_forward(x, layers: list[LinearParams], activation: Callable[[Tensor], Tensor] = tn.relu) -> Tensor:
    h = tn.as_tensor(x)
    for i, layer in enumerate(layers):
        h = linear_forward(h, layer)
        if i < len(layers) - 1:
            h = activation(h)
    return h


def softmax_row(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(s - s.max())
    return e / e.sum()


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, d = x.shape
    return tn.transpose(tn.reshape(x, (n, heads, d // heads)), (1, 0, 2))


def attention_forward(queries, keys, values, p: AttentionParams) -> Tensor:
    """Scaled dot-product multi-head attention block with residuals and post-norm.

    Returns a tensor shaped like ``queries``.  With no key rows the block is a
    no-op and ``queries`` is returned as-is.
    """
    q_in, k_in, v_in = tn.as_tensor(queries), tn.as_tensor(keys), tn.as_tensor(values)
    d = p.dim
    for name, t in (("queries", q_in), ("keys", k_in), ("values", v_in)):
        if t.data.ndim != 2 or t.shape[1] != d:
            raise DimensionError(f"{name} must be (*, {d}), got {t.shape}")
    if k_in.shape[0] != v_in.shape[0]:
        raise DimensionError("keys and values need the same row count")
    if k_in.shape[0] == 0 or q_in.shape[0] == 0:
        return q_in

    h = p.heads
    q = _split_heads(linear_forward(q_in, p.wq), h)
    k = _split_heads(linear_forward(k_in, p.wk), h)
    v = _split_heads(linear_forward(v_in, p.wv), h)
    logits = tn.scale(tn.matmul(q, tn.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(d // h))
    attn = tn.softmax(logits, axis=-1)
    ctx = tn.matmul(attn, v)  # heads x nq x dh
    ctx = tn.reshape(tn.transpose(ctx, (1, 0, 2)), (q_in.shape[0], d))
    x = tn.layer_norm(tn.add(q_in, linear_forward(ctx, p.wo)), p.norm1.gamma, p.norm1.beta)
    ff = linear_forward(tn.relu(linear_forward(x, p.ff1)), p.ff2)
    return tn.layer_norm(tn.add(x, ff), p.norm2.gamma, p.norm2.beta)


def attention_weights(queries, keys, p: AttentionParams) -> np.ndarray:
    """Per-head attention probabilities (heads x nq x nk); inspection only."""
    h = p.heads
    q = _split_heads(linear_forward(queries, p.wq), h).data
    k = _split_heads(linear_forward(keys, p.wk), h).data
    logits = q @ k.transpose(0, 2, 1) / math.sqrt(p.dim // h)
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)
