"""Small define-by-run reverse-mode autodiff over float64 numpy arrays.

Only the operations needed by the CRAE models are provided: affine layers,
relu, softmax, log, elementwise arithmetic, reductions, indexing, stacking,
probability mixtures and cross-entropy.  Every op builds a ``Node`` holding
its inputs and a local backward rule; ``backward`` linearises the reachable
graph into a ``Tape`` and walks it once in reverse.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

EPS = 1e-12
DIST_TOL = 1e-6


class AutodiffError(ValueError):
    pass


@dataclass(eq=False)
class Node:
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]
    name: str = ""


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "node")

    def __init__(self, values, requires_grad: bool = False, node: Node | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def item(self) -> float:
        if self.values.size != 1:
            raise AutodiffError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def tensor(shape: Sequence[int], values: Iterable[float], requires_grad: bool = False) -> Tensor:
    """Build a tensor from a flat row-major value list, validating size and finiteness."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise AutodiffError(f"extents must be positive, got {shape}")
    flat = np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                      dtype=np.float64).ravel()
    expected = int(np.prod(shape)) if shape else 1
    if flat.size != expected:
        raise AutodiffError(f"shape {shape} needs {expected} values, got {flat.size}")
    if not np.all(np.isfinite(flat)):
        raise AutodiffError("tensor values must be finite")
    return Tensor(flat.reshape(shape), requires_grad=requires_grad)


def constant(values) -> Tensor:
    return Tensor(np.array(values, dtype=np.float64))


def parameter(values) -> Tensor:
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


def _result(values: np.ndarray, inputs: tuple[Tensor, ...], rule, name: str) -> Tensor:
    if any(t.requires_grad for t in inputs):
        return Tensor(values, requires_grad=True, node=Node(inputs, rule, name))
    return Tensor(values)


# ---------------------------------------------------------------------------
# primitive ops


def affine(W: Tensor, x: Tensor, bias: Tensor) -> Tensor:
    """``x @ W.T + bias`` for ``W`` (m, n), ``x`` (b, n), ``bias`` (m,)."""
    if W.values.ndim != 2 or x.values.ndim != 2 or bias.values.ndim != 1:
        raise AutodiffError(f"affine expects 2-d W, 2-d x, 1-d bias; got {W.shape}, {x.shape}, {bias.shape}")
    m, n = W.shape
    if x.shape[1] != n or bias.shape[0] != m:
        raise AutodiffError(f"affine dimension mismatch: W {W.shape}, x {x.shape}, bias {bias.shape}")
    Wv, xv = W.values, x.values
    out = xv @ Wv.T + bias.values

    def rule(g):
        return g.T @ xv, g @ Wv, g.sum(axis=0)

    return _result(out, (W, x, bias), rule, "affine")


class ReluMargin:
    """Smallest |input| seen by relu while active; see ``relu_margin``."""

    def __init__(self):
        self.value = np.inf


_margins: list[ReluMargin] = []


@contextmanager
def relu_margin() -> Iterator[ReluMargin]:
    """Record how close any relu input comes to the kink at 0 inside the block."""
    m = ReluMargin()
    _margins.append(m)
    try:
        yield m
    finally:
        _margins.remove(m)


def relu(x: Tensor) -> Tensor:
    for m in _margins:
        if x.values.size:
            m.value = min(m.value, float(np.abs(x.values).min()))
    mask = x.values > 0
    return _result(np.where(mask, x.values, 0.0), (x,), lambda g: (g * mask,), "relu")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    v = x.values
    if not np.all(np.isfinite(v)):
        raise AutodiffError("softmax input must be finite")
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), rule, "softmax")


def log(x: Tensor) -> Tensor:
    v = x.values
    if np.any(v <= 0):
        raise AutodiffError("log of non-positive value")
    return _result(np.log(v), (x,), lambda g: (g / v,), "log")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise AutodiffError(f"add shape mismatch {a.shape} vs {b.shape}")
    return _result(a.values + b.values, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise AutodiffError(f"mul shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.values, b.values
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(x.values * c, (x,), lambda g: (g * c,), "scale")


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape
    out = x.values.sum(axis=axis)

    def rule(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(out, (x,), rule, "sum")


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.values.size if axis is None else x.shape[axis]
    return scale(reduce_sum(x, axis), 1.0 / n)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _result(x.values.reshape(tuple(shape)), (x,), lambda g: (g.reshape(old),), "reshape")


def getitem(x: Tensor, index) -> Tensor:
    shape = x.shape

    def rule(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _result(np.array(x.values[index]), (x,), rule, "getitem")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def rule(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(np.concatenate([p.values for p in parts], axis=axis), parts, rule, "concat")


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)

    def rule(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(np.stack([p.values for p in parts], axis=axis), parts, rule, "stack")


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.values.copy())


def mixture(weights: Tensor, dists: Tensor) -> Tensor:
    """Row-wise convex combination ``out[i] = sum_k weights[i,k] * dists[i,k,:]``.

    Differentiable in both arguments.
    """
    w, d = weights.values, dists.values
    if d.ndim != 3 or w.shape != d.shape[:2]:
        raise AutodiffError(f"mixture expects weights (b,C) and dists (b,C,K); got {w.shape}, {d.shape}")
    out = np.einsum("bc,bck->bk", w, d)

    def rule(g):
        return np.einsum("bk,bck->bc", g, d), w[:, :, None] * g[:, None, :]

    return _result(out, (weights, dists), rule, "mixture")


def _check_rows(v: np.ndarray, what: str) -> None:
    if v.ndim != 2:
        raise AutodiffError(f"{what} must be 2-d (batch, k), got shape {v.shape}")
    if np.any(v < -DIST_TOL) or np.any(np.abs(v.sum(axis=1) - 1.0) > DIST_TOL):
        raise AutodiffError(f"{what} rows must be probability vectors")


def cross_entropy(pred: Tensor, target: Tensor) -> Tensor:
    """Batch mean of ``-sum_j target[j] * ln(max(pred[j], 1e-12))``."""
    if pred.shape != target.shape:
        raise AutodiffError(f"cross_entropy shape mismatch {pred.shape} vs {target.shape}")
    _check_rows(pred.values, "pred")
    _check_rows(target.values, "target")
    p, t = pred.values, target.values
    b = p.shape[0]
    clamped = np.maximum(p, EPS)
    logp = np.log(clamped)
    loss = -(t * logp).sum() / b

    def rule(g):
        gp = np.where(p > EPS, -t / clamped, 0.0) * (g / b)
        gt = -logp * (g / b)
        return gp, gt

    return _result(np.asarray(loss), (pred, target), rule, "cross_entropy")


# ---------------------------------------------------------------------------
# reverse pass


@dataclass
class Tape:
    """Op outputs reachable from one result, in topological order.

    Each entry is a non-leaf tensor; its ``node`` carries the recorded op.
    """

    entries: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        if out.node is None:
            return cls(order)
        # iterative post-order DFS; inputs land before their consumers
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for inp in reversed(t.node.inputs):
                if inp.node is not None and id(inp) not in seen:
                    stack.append((inp, False))
        return cls(order)


def backward(loss: Tensor, leaves: Sequence[Tensor] | None = None) -> list[np.ndarray] | None:
    """Propagate d(loss) to every requires_grad leaf reachable from ``loss``.

    Leaf gradients are stored on ``leaf.grad``.  When ``leaves`` is given the
    matching gradients are also returned, zero-filled for leaves the loss does
    not depend on.
    """
    if loss.values.ndim != 0:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    reached: dict[int, Tensor] = {}

    def accumulate(t: Tensor, g: np.ndarray) -> None:
        key = id(t)
        grads[key] = grads[key] + g if key in grads else g
        if t.node is None:
            reached[key] = t

    if loss.requires_grad:
        accumulate(loss, np.ones(()))
        for out in reversed(Tape.from_output(loss).entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(out.node.inputs, out.node.backward(g)):
                if inp.requires_grad and gi is not None:
                    accumulate(inp, gi)

    for key, leaf in reached.items():
        leaf.grad = grads[key]
    if leaves is None:
        return None
    result = []
    for leaf in leaves:
        g = grads.get(id(leaf))
        if g is None:
            g = np.zeros(leaf.shape)
            if leaf.requires_grad:
                leaf.grad = g
        result.append(g)
    return result


# ---------------------------------------------------------------------------
# optimisation and checking


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             velocity: dict[str, np.ndarray], lr: float, momentum: float) -> dict[str, np.ndarray]:
    """Heavy-ball SGD: ``v <- momentum*v + g``; ``p <- p - lr*v``.

    ``velocity`` is updated in place so it persists across calls.
    """
    if lr <= 0:
        raise AutodiffError(f"lr must be positive, got {lr}")
    if not 0 <= momentum < 1:
        raise AutodiffError(f"momentum must lie in [0, 1), got {momentum}")
    updated = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise AutodiffError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        v = velocity.get(name)
        v = g.copy() if v is None else momentum * v + g
        velocity[name] = v
        updated[name] = p - lr * v
    return updated


class SGD:
    def __init__(self, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        return sgd_step(params, grads, self.velocity, self.lr, self.momentum)


def grad_check(f: Callable[[Tensor], Tensor], point, h: float = 1e-5,
               coords: Sequence[int] | None = None) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``coords`` restricts the comparison to a subset of flat coordinates.
    """
    x0 = np.array(point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    (analytic,) = backward(f(x), [x])
    analytic = analytic.ravel()
    idx = range(x0.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        up, down = x0.copy().ravel(), x0.copy().ravel()
        up[i] += h
        down[i] -= h
        fu = f(Tensor(up.reshape(x0.shape))).item()
        fd = f(Tensor(down.reshape(x0.shape))).item()
        numeric = (fu - fd) / (2 * h)
        a = analytic[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
