"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tape`` records operations in creation order (which is a valid
topological order), and ``Tape.backward`` walks it once in reverse,
accumulating gradients into leaf tensors. Ops executed while no tape is
active run forward-only, which is the eval-mode fast path.

Everything is CPU, dense, and float64 by default (float32 via
``set_dtype`` for speed at the cost of grad-check headroom).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


def set_dtype(dtype) -> None:
    """Switch the default real dtype (np.float64 or np.float32)."""
    global _DTYPE
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _DTYPE = dtype


def get_dtype():
    return _DTYPE


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of differentiable ops for one forward pass.

    Use as a context manager; ops executed inside are recorded. A tape is
    single-threaded and single-use: run the forward, call ``backward``,
    discard.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def backward(self, loss: "Tensor") -> None:
        """Seed d(loss)/d(loss)=1 and propagate through all recorded nodes."""
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A dense array with an optional gradient slot.

    Leaves created with ``requires_grad=True`` (parameters) accumulate
    gradients; constants do not. Interior tensors are created by ops.
    """

    __slots__ = ("value", "grad", "_backward", "_needs_grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=_DTYPE)
        self.grad: np.ndarray | None = None
        self._backward = None
        self._needs_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if not self._needs_grad:
            return
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, needs_grad={self._needs_grad})"


def tensor(value) -> Tensor:
    """Wrap a constant (no gradient tracking)."""
    return Tensor(value, requires_grad=False)


def param(value) -> Tensor:
    """Wrap a trainable parameter (accumulates gradients)."""
    return Tensor(value, requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else tensor(x)


def _make(value, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Create an op output, recording it on the active tape when needed."""
    out = Tensor(value)
    tape = _active_tape()
    if tape is not None and any(p._needs_grad for p in parents):
        out._needs_grad = True
        out._backward = backward_fn
        tape.nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to a broadcast operand's original shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim != 2:
        raise ShapeError(f"matmul supports (n,k)@(k,m) or (k,)@(k,m); got {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul inner-dim mismatch: {av.shape} @ {bv.shape}")
    out_v = av @ bv

    def backward(g):
        if av.ndim == 1:
            a._accum(bv @ g)
            b._accum(np.outer(av, g))
        else:
            a._accum(g @ bv.T)
            b._accum(av.T @ g)

    return _make(out_v, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError:
        raise ShapeError(f"add shapes not broadcastable: {a.value.shape} vs {b.value.shape}")
    out_v = a.value + b.value

    def backward(g):
        a._accum(_unbroadcast(g, a.value.shape))
        b._accum(_unbroadcast(g, b.value.shape))

    return _make(out_v, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError:
        raise ShapeError(f"mul shapes not broadcastable: {a.value.shape} vs {b.value.shape}")
    out_v = a.value * b.value

    def backward(g):
        a._accum(_unbroadcast(g * b.value, a.value.shape))
        b._accum(_unbroadcast(g * a.value, b.value.shape))

    return _make(out_v, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _make(a.value * c, (a,), lambda g: a._accum(g * c))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: a._accum(g * mask))


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make(np.log(a.value), (a,), lambda g: a._accum(g / a.value))


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_v = np.exp(a.value)
    return _make(out_v, (a,), lambda g: a._accum(g * out_v))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a._accum(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_v = shifted - lse
    sm = np.exp(out_v)

    def backward(g):
        a._accum(g - sm * g.sum(axis=axis, keepdims=True))

    return _make(out_v, (a,), backward)


def sum_(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)
    out_v = a.value.sum(axis=axis)

    def backward(g):
        if axis is None:
            a._accum(np.broadcast_to(g, a.value.shape).copy())
        else:
            a._accum(np.broadcast_to(np.expand_dims(g, axis), a.value.shape).copy())

    return _make(out_v, (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    out_v = a.value.mean(axis=axis)

    def backward(g):
        if axis is None:
            a._accum(np.broadcast_to(g / n, a.value.shape).copy())
        else:
            a._accum(np.broadcast_to(np.expand_dims(g, axis) / n, a.value.shape).copy())

    return _make(out_v, (a,), backward)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    a = _as_tensor(a)
    mu = a.value.mean(axis=-1, keepdims=True)
    var = a.value.var(axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    y = (a.value - mu) / sigma

    def backward(g):
        m1 = g.mean(axis=-1, keepdims=True)
        m2 = (g * y).mean(axis=-1, keepdims=True)
        a._accum((g - m1 - y * m2) / sigma)

    return _make(y, (a,), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    table = _as_tensor(table)
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.value.shape[0]):
        raise ShapeError(f"embedding ids out of range [0, {table.value.shape[0]}): {idx}")
    out_v = table.value[idx]

    def backward(g):
        if not table._needs_grad:
            return
        acc = np.zeros_like(table.value)
        np.add.at(acc, idx, g)
        if table.grad is None:
            table.grad = acc
        else:
            table.grad = table.grad + acc

    return _make(out_v, (table,), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    out_v = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            t._accum(np.take(g, range(lo, hi), axis=axis))

    return _make(out_v, tuple(tensors), backward)


def stack_rows(tensors: list[Tensor]) -> Tensor:
    """Stack 1-d tensors of equal length into a (n, d) matrix."""
    return concat([reshape(t, (1, -1)) for t in tensors], axis=0)


def slice_(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    a = _as_tensor(a)
    n = a.value.shape[axis]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice [{start}:{stop}] out of bounds for axis {axis} of shape {a.value.shape}")
    idx = [slice(None)] * a.value.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out_v = a.value[idx]

    def backward(g):
        full = np.zeros_like(a.value)
        full[idx] = g
        a._accum(full)

    return _make(out_v, (a,), backward)


def rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Row-range slice, the common case for span extraction."""
    return slice_(a, start, stop, axis=0)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make(a.value.T, (a,), lambda g: a._accum(g.T))


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    orig = a.value.shape
    return _make(a.value.reshape(shape), (a,), lambda g: a._accum(g.reshape(orig)))


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine of two 1-d vectors; gradient treats both as free variables."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 1 or b.value.ndim != 1 or a.value.shape != b.value.shape:
        raise ShapeError(f"cosine_similarity needs equal-length vectors, got {a.value.shape} and {b.value.shape}")
    na = np.linalg.norm(a.value)
    nb = np.linalg.norm(b.value)
    denom = na * nb
    c = float(a.value @ b.value / denom)

    def backward(g):
        a._accum(g * (b.value / denom - c * a.value / (na * na)))
        b._accum(g * (a.value / denom - c * b.value / (nb * nb)))

    return _make(c, (a, b), backward)


def l2_normalize(a: Tensor) -> Tensor:
    """Normalize rows of a 2-d tensor (or a single vector) to unit L2 norm."""
    a = _as_tensor(a)
    r = np.linalg.norm(a.value, axis=-1, keepdims=True)
    y = a.value / r

    def backward(g):
        a._accum((g - (g * y).sum(axis=-1, keepdims=True) * y) / r)

    return _make(y, (a,), backward)


def cross_entropy_label_smoothed(logits: Tensor, targets, smoothing: float) -> Tensor:
    """Sum over positions of smoothed cross-entropy from raw logits.

    Smoothed target distribution: (1-smoothing) on the gold id plus a
    uniform smoothing/V mass over the whole vocabulary.
    """
    logits = _as_tensor(logits)
    tgt = np.asarray(targets, dtype=np.int64)
    if logits.value.ndim != 2 or tgt.ndim != 1 or logits.value.shape[0] != tgt.shape[0]:
        raise ShapeError(f"cross-entropy expects (T,V) logits with (T,) targets, got {logits.value.shape} and {tgt.shape}")
    n, v = logits.value.shape
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    q = np.full((n, v), smoothing / v)
    q[np.arange(n), tgt] += 1.0 - smoothing
    out_v = -(q * logp).sum()

    def backward(g):
        logits._accum(g * (np.exp(logp) - q))

    return _make(out_v, (logits,), backward)


# --------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    """Outcome of comparing reverse-mode gradients to central differences."""

    max_rel_err: float
    tolerance: float
    passed: bool
    worst_param: str = ""
    per_param: dict = field(default_factory=dict)


def grad_check(f, params: dict[str, Tensor], step: float = 1e-5, tolerance: float = 1e-4) -> GradCheckReport:
    """Check the gradient of a scalar-valued ``f(params)`` numerically.

    ``f`` is called with no arguments and must read the live ``params``
    tensors. The relative error of each parameter tensor is measured
    against the largest gradient entry of that tensor (floored at 1e-6)
    so that near-zero components do not produce spurious failures.
    """
    with Tape() as tape:
        out = f()
    if not np.isfinite(out.value).all():
        raise FloatingPointError(f"non-finite forward value {out.value!r} in grad_check")
    for p in params.values():
        p.zero_grad()
    tape.backward(out)
    analytic = {name: (np.zeros_like(p.value) if p.grad is None else p.grad.copy()) for name, p in params.items()}

    numeric: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(f().value)
            flat[i] = orig - step
            f_minus = float(f().value)
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * step)
        numeric[name] = g

    per_param = {}
    worst_name, worst = "", 0.0
    for name in params:
        a, b = analytic[name], numeric[name]
        denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-6)
        err = float(np.abs(a - b).max(initial=0.0) / denom)
        per_param[name] = err
        if err > worst:
            worst_name, worst = name, err
    for p in params.values():
        p.zero_grad()
    return GradCheckReport(max_rel_err=worst, tolerance=tolerance, passed=worst <= tolerance,
                           worst_param=worst_name, per_param=per_param)
