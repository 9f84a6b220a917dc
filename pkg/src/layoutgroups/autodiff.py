"""Minimal reverse-mode autodiff over dense float64 arrays.

Covers exactly the operations the relatedness model needs: matmuls,
elementwise nonlinearities, masked row softmax, dropout, embedding lookups,
layer norm and two fused losses. No broadcasting beyond row-bias addition.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np


class ShapeMismatch(Exception):
    pass


class NonFiniteGradient(Exception):
    pass


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad")

    def __init__(self, value, parents=(), backward=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.parents: Tuple["Tensor", ...] = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(
            p.requires_grad for p in self.parents
        )

    @property
    def shape(self):
        return self.value.shape


def constant(value) -> Tensor:
    return Tensor(value)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def _check_2d(name: str, *ts: Tensor) -> None:
    for t in ts:
        if t.value.ndim != 2:
            raise ShapeMismatch(f"{name}: expected 2-D operand, got {t.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} x {b.shape}")

    def backward(g):
        return g @ b.value.T, a.value.T @ g

    return Tensor(a.value @ b.value, (a, b), backward)


def matmul_t(a: Tensor, b: Tensor) -> Tensor:
    """a @ b.T for 2-D operands."""
    _check_2d("matmul_t", a, b)
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"matmul_t: {a.shape} x {b.shape}^T")

    def backward(g):
        return g @ b.value, g.T @ a.value

    return Tensor(a.value @ b.value.T, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    return Tensor(a.value + b.value, (a, b), lambda g: (g, g))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """(n, d) + (d,) row-bias addition."""
    if x.value.ndim != 2 or bias.value.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeMismatch(f"add_bias: {x.shape} vs {bias.shape}")
    return Tensor(x.value + bias.value, (x, bias), lambda g: (g, g.sum(axis=0)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")
    return Tensor(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value))


def scale(x: Tensor, c: float) -> Tensor:
    return Tensor(x.value * c, (x,), lambda g: (g * c,))


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    return Tensor(np.concatenate([p.value for p in parts], axis=axis), parts, backward)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    old = x.shape
    return Tensor(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.value)
    return Tensor(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.value, 0.0)
    return Tensor(out, (x,), lambda g: (g * (x.value > 0.0),))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.value)
    return Tensor(out, (x,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def row_softmax(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis of a 2-D tensor.

    ``mask`` is a boolean column-validity vector (or full matrix); masked
    positions get exactly zero probability and receive no gradient.
    """
    _check_2d("row_softmax", x)
    v = x.value
    if mask is None:
        valid = np.ones(v.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        valid = np.broadcast_to(mask, v.shape) if mask.ndim == 1 else mask
        if valid.shape != v.shape:
            raise ShapeMismatch(f"row_softmax mask {mask.shape} vs {v.shape}")
        if not valid.any(axis=1).all():
            raise ShapeMismatch("row_softmax: fully-masked row")
    shifted = np.where(valid, v, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    ex = np.where(valid, np.exp(shifted), 0.0)
    p = ex / ex.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)

    return Tensor(p, (x,), backward)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when rate is 0."""
    if rate < 0.0 or rate >= 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout with rate > 0 requires an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor(x.value * keep, (x,), lambda g: (g * keep,))


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    indices = np.asarray(indices, dtype=np.intp)
    if indices.min(initial=0) < 0 or (
        indices.size and indices.max() >= table.shape[0]
    ):
        raise IndexError(f"gather_rows: index outside table of {table.shape[0]} rows")

    def backward(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, indices, g)
        return (gt,)

    return Tensor(table.value[indices], (table,), backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.value.size
    return Tensor(x.value.mean(), (x,), lambda g: (np.full(x.shape, g / n),))


def sum_all(x: Tensor) -> Tensor:
    return Tensor(x.value.sum(), (x,), lambda g: (np.full(x.shape, g),))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row layer normalization with learnable gain and bias."""
    _check_2d("layer_norm", x)
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs d={d}")
    mu = x.value.mean(axis=1, keepdims=True)
    var = x.value.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv

    def backward(g):
        ggain = (g * xhat).sum(axis=0)
        gbias = g.sum(axis=0)
        gh = g * gain.value
        gx = inv * (
            gh
            - gh.mean(axis=1, keepdims=True)
            - xhat * (gh * xhat).mean(axis=1, keepdims=True)
        )
        return gx, ggain, gbias

    return Tensor(xhat * gain.value + bias.value, (x, gain, bias), backward)


def softmax_cross_entropy_rows(
    logits: Tensor, targets: np.ndarray, mask: Optional[np.ndarray] = None
) -> Tensor:
    """Mean over rows of cross-entropy between row-softmax(logits) and targets.

    ``targets`` are fixed distributions (each row sums to 1 over valid
    columns).
    """
    _check_2d("softmax_cross_entropy_rows", logits)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ShapeMismatch(f"targets {targets.shape} vs logits {logits.shape}")
    v = logits.value
    if mask is None:
        valid = np.ones(v.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        valid = np.broadcast_to(mask, v.shape) if mask.ndim == 1 else mask
    shifted = np.where(valid, v, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    ex = np.where(valid, np.exp(shifted), 0.0)
    denom = ex.sum(axis=1, keepdims=True)
    logp = np.where(valid, shifted - np.log(denom), 0.0)
    n_rows = v.shape[0]
    loss = -(targets * logp).sum() / n_rows
    p = ex / denom

    def backward(g):
        return ((p - targets) * valid * (g / n_rows),)

    return Tensor(loss, (logits,), backward)


def weighted_bce_logits(
    logits: Tensor, targets: np.ndarray, weights: np.ndarray
) -> Tensor:
    """Weighted-mean binary cross-entropy computed from logits (stable)."""
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if targets.shape != logits.shape or weights.shape != logits.shape:
        raise ShapeMismatch("weighted_bce_logits: shape mismatch")
    wsum = weights.sum()
    if wsum <= 0:
        raise ValueError("weighted_bce_logits: no positive weights")
    s = logits.value
    # log(1 + e^s) - t*s, computed without overflow
    elem = np.maximum(s, 0.0) - s * targets + np.log1p(np.exp(-np.abs(s)))
    loss = (weights * elem).sum() / wsum

    def backward(g):
        return (g * weights * (_sigmoid(s) - targets) / wsum,)

    return Tensor(loss, (logits,), backward)


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable Tensor."""
    if loss.value.shape != ():
        raise ShapeMismatch(f"backward: loss must be scalar, got {loss.shape}")

    order: List[Tensor] = []
    seen = set()
    stack: List[Tuple[Tensor, bool]] = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.asarray(1.0)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for p, g in zip(node.parents, grads):
            if not p.requires_grad or g is None:
                continue
            if p.grad is None:
                p.grad = np.array(g, dtype=np.float64)
            else:
                p.grad = p.grad + g


class ParameterStore:
    """Named parameters plus Adam moment accumulators."""

    def __init__(self) -> None:
        self.params: Dict[str, Tensor] = {}
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.step: int = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = parameter(np.array(value, dtype=np.float64))
        self.params[name] = t
        self.m[name] = np.zeros_like(t.value)
        self.v[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self) -> List[str]:
        return sorted(self.params)

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None

    def adam_step(
        self,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        trainable: Optional[Iterable[str]] = None,
    ) -> None:
        """Bias-corrected Adam update; clears gradients afterwards.

        Parameters with no gradient (unreached in the graph) are skipped.
        """
        names = sorted(trainable) if trainable is not None else self.names()
        for name in names:
            t = self.params[name]
            if t.grad is None:
                continue
            if not np.isfinite(t.grad).all():
                raise NonFiniteGradient(f"non-finite gradient in {name!r}")
        self.step += 1
        correction1 = 1.0 - beta1 ** self.step
        correction2 = 1.0 - beta2 ** self.step
        for name in names:
            t = self.params[name]
            if t.grad is None:
                continue
            g = t.grad
            self.m[name] = beta1 * self.m[name] + (1.0 - beta1) * g
            self.v[name] = beta2 * self.v[name] + (1.0 - beta2) * g * g
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            t.value = t.value - lr * m_hat / (np.sqrt(v_hat) + eps)
        self.zero_grads()

    def copy_values(self) -> Dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self.params.items()}

    def load_values(self, values: Dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            self.params[k].value = np.array(v, dtype=np.float64)

    def state_dict(self) -> dict:
        return {
            "step": self.step,
            "params": {
                k: {"shape": list(t.value.shape), "data": t.value.ravel().tolist()}
                for k, t in sorted(self.params.items())
            },
            "moments": {
                "m": {k: self.m[k].ravel().tolist() for k in sorted(self.m)},
                "v": {k: self.v[k].ravel().tolist() for k in sorted(self.v)},
            },
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "ParameterStore":
        store = cls()
        for name, rec in state["params"].items():
            value = np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
            store.add(name, value)
        store.step = int(state.get("step", 0))
        moments = state.get("moments")
        if moments:
            for name in store.params:
                shape = store.params[name].value.shape
                store.m[name] = np.array(
                    moments["m"][name], dtype=np.float64
                ).reshape(shape)
                store.v[name] = np.array(
                    moments["v"][name], dtype=np.float64
                ).reshape(shape)
        return store


def grad_check(
    f: Callable[[], Tensor],
    store: ParameterStore,
    eps: float = 1e-5,
    rng: Optional[np.random.Generator] = None,
    max_coords_per_param: Optional[int] = None,
    rel_floor: float = 1e-5,
) -> float:
    """Compare reverse-mode gradients of ``f()`` against central differences.

    ``f`` must rebuild its graph from the store's current parameter values on
    every call. Returns the maximum relative error over checked coordinates;
    for large parameters a random coordinate subset is checked. Gradients
    smaller than ``rel_floor`` are compared at floor scale, since central
    differences bottom out at roundoff (~1e-10 absolute for O(1) losses).
    """
    store.zero_grads()
    loss = f()
    backward(loss)
    analytic = {
        k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.value))
        for k, t in store.params.items()
    }
    store.zero_grads()

    max_err = 0.0
    for name in store.names():
        t = store.params[name]
        flat = t.value.ravel()
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            if rng is None:
                raise ValueError("coordinate subsampling requires an rng")
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = float(f().value)
            flat[idx] = orig - eps
            f_minus = float(f().value)
            flat[idx] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[name].ravel()[idx]
            err = abs(a - fd) / max(abs(a), abs(fd), rel_floor)
            max_err = max(max_err, err)
    return max_err
