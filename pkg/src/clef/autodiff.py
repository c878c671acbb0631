"""Dense float64 tensors with reverse-mode autodiff and an Adam optimizer.

Sized for the small sequence models trained in this repo: row-major
storage, copies instead of views, one recording tape per training run.
Every forward op validates that its output is finite.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ClefError, NonFiniteValue, NonInvertibleValue, ShapeMismatch

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_DIVIDE_FLOOR = 1e-12


class Tensor:
    """Row-major float64 tensor; `data` exposes the flat storage."""

    __slots__ = ("array", "requires_grad", "grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.array = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> list[int]:
        return list(self.array.shape)

    @property
    def data(self) -> np.ndarray:
        return self.array.reshape(-1)

    @property
    def size(self) -> int:
        return self.array.size

    def item(self) -> float:
        if self.array.size != 1:
            raise ShapeMismatch(f"item() on tensor of shape {self.shape}")
        return float(self.array.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.array.copy()

    def detach(self) -> "Tensor":
        """Copy with no history and no grad requirement."""
        return Tensor(self.array.copy())

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def grad_or_zeros(self) -> np.ndarray:
        return np.zeros_like(self.array) if self.grad is None else self.grad

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __sub__(self, other):
        return subtract(self, as_tensor(other))

    def __mul__(self, other):
        return multiply(self, as_tensor(other))

    def __truediv__(self, other):
        return divide(self, as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class TapeEntry:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of ops; inputs always precede their consumers."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def clear(self) -> None:
        self.entries.clear()


_TAPE_STACK: list[Tape] = []


@contextmanager
def recording(tape: Tape):
    """Record ops onto `tape` while the context is active."""
    _TAPE_STACK.append(tape)
    try:
        yield tape
    finally:
        _TAPE_STACK.pop()


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _check_finite(arr: np.ndarray, op: str) -> None:
    # sum() is NaN/Inf iff any entry is non-finite (desk-scale magnitudes
    # cannot overflow a float64 sum), and is much cheaper than isfinite().all()
    if not np.isfinite(arr.sum()):
        raise NonFiniteValue(f"{op} produced non-finite values")


def _emit(out_array: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    _check_finite(out_array, op)
    out = Tensor(out_array)
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.entries.append(TapeEntry(out, inputs, backward))
    return out


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> bool:
    """True when b broadcasts over a's leading dimension (or is scalar)."""
    if a.array.shape == b.array.shape:
        return False
    if b.array.ndim == 0:
        return True
    if a.array.ndim == b.array.ndim + 1 and a.array.shape[1:] == b.array.shape:
        return True
    raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


def _reduce_to(b_shape: tuple, g: np.ndarray) -> np.ndarray:
    """Sum gradient over the broadcast leading dimension."""
    if g.shape == b_shape:
        return g
    if b_shape == ():
        return np.asarray(g.sum())
    return g.sum(axis=0)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("add", a, b)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("subtract", a, b)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("multiply", a, b)


def divide(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("divide", a, b)


def elementwise(op_kind: str, a: Tensor, b: Tensor) -> Tensor:
    """add / subtract / multiply / divide with leading-dim broadcast on b."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, op_kind)
    bs = b.array.shape
    if op_kind == "add":
        out = a.array + b.array

        def backward(g):
            return g, _reduce_to(bs, g)

    elif op_kind == "subtract":
        out = a.array - b.array

        def backward(g):
            return g, -_reduce_to(bs, g)

    elif op_kind == "multiply":
        out = a.array * b.array
        aa, ba = a.array, b.array

        def backward(g):
            return g * ba, _reduce_to(bs, g * aa)

    elif op_kind == "divide":
        if np.min(np.abs(b.array)) < _DIVIDE_FLOOR:
            raise NonInvertibleValue(
                f"divide: denominator entry below {_DIVIDE_FLOOR:g} in magnitude"
            )
        out = a.array / b.array
        aa, ba = a.array, b.array

        def backward(g):
            return g / ba, _reduce_to(bs, -g * aa / (ba * ba))

    else:
        raise ClefError(f"elementwise: unknown op_kind {op_kind!r}")
    return _emit(out, (a, b), backward, op_kind)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar constant."""
    x = as_tensor(x)
    out = x.array * factor

    def backward(g):
        return (g * factor,)

    return _emit(out, (x,), backward, "scale")


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.array.ndim not in (1, 2) or b.array.ndim not in (1, 2):
        raise ShapeMismatch("matmul supports 1-D and 2-D operands only")
    if a.array.shape[-1] != b.array.shape[0]:
        raise ShapeMismatch(f"matmul: inner dimensions {a.shape} x {b.shape} disagree")
    out = a.array @ b.array
    aa, ba = a.array, b.array
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward(g):
        ga = gb = None
        if aa.ndim == 2 and ba.ndim == 2:
            if need_a:
                ga = g @ ba.T
            if need_b:
                gb = aa.T @ g
        elif aa.ndim == 1 and ba.ndim == 2:
            if need_a:
                ga = ba @ g
            if need_b:
                gb = np.outer(aa, g)
        elif aa.ndim == 2 and ba.ndim == 1:
            if need_a:
                ga = np.outer(g, ba)
            if need_b:
                gb = aa.T @ g
        else:  # 1-D x 1-D inner product
            if need_a:
                ga = g * ba
            if need_b:
                gb = g * aa
        return ga, gb

    return _emit(out, (a, b), backward, "matmul")


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.array.ndim != 2:
        raise ShapeMismatch("transpose expects a 2-D tensor")
    out = np.ascontiguousarray(x.array.T)

    def backward(g):
        return (np.ascontiguousarray(g.T),)

    return _emit(out, (x,), backward, "transpose")


# ---------------------------------------------------------------------------
# nonlinearities

def _phi(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x * _INV_SQRT2))


def gelu(x: Tensor) -> Tensor:
    """Exact-erf GELU: x * Phi(x)."""
    x = as_tensor(x)
    cdf = _phi(x.array)
    out = x.array * cdf
    xa = x.array

    def backward(g):
        pdf = np.exp(-0.5 * xa * xa) * _INV_SQRT_2PI
        return (g * (_phi(xa) + xa * pdf),)

    return _emit(out, (x,), backward, "gelu")


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.array))
    o = out

    def backward(g):
        return (g * o * (1.0 - o),)

    return _emit(out, (x,), backward, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.array)
    o = out

    def backward(g):
        return (g * (1.0 - o * o),)

    return _emit(out, (x,), backward, "tanh")


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis (rows of a matrix)."""
    x = as_tensor(x)
    shifted = x.array - x.array.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    s = out

    def backward(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _emit(out, (x,), backward, "softmax_rows")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization over the last axis."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.array.shape[-1] != gain.array.shape[-1] or gain.array.shape != bias.array.shape:
        raise ShapeMismatch("layer_norm: gain/bias must match the feature dimension")
    mu = x.array.mean(axis=-1, keepdims=True)
    xc = x.array - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = xc * inv
    out = xn * gain.array + bias.array
    ga = gain.array

    def backward(g):
        dxn = g * ga
        dgain = (g * xn).sum(axis=0) if g.ndim == 2 else g * xn
        dbias = g.sum(axis=0) if g.ndim == 2 else g
        mean_dxn = dxn.mean(axis=-1, keepdims=True)
        mean_dxn_xn = (dxn * xn).mean(axis=-1, keepdims=True)
        dx = inv * (dxn - mean_dxn - xn * mean_dxn_xn)
        return dx, dgain, dbias

    return _emit(out, (x, gain, bias), backward, "layer_norm")


# ---------------------------------------------------------------------------
# gathering / reshaping

def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Embedding lookup: rows `indices` of a 2-D table."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if table.array.ndim != 2:
        raise ShapeMismatch("gather_rows expects a 2-D table")
    if idx.min(initial=0) < 0 or (idx.size and idx.max() >= table.array.shape[0]):
        raise ShapeMismatch("gather_rows: index out of range")
    out = table.array[idx]
    rows = table.array.shape[0]
    cols = table.array.shape[1]

    def backward(g):
        dt = np.zeros((rows, cols), dtype=np.float64)
        np.add.at(dt, idx, g)
        return (dt,)

    return _emit(out, (table,), backward, "gather_rows")


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Copy of columns [start, stop) along the last axis."""
    x = as_tensor(x)
    out = np.ascontiguousarray(x.array[..., start:stop])
    full = x.array.shape

    def backward(g):
        dx = np.zeros(full, dtype=np.float64)
        dx[..., start:stop] = g
        return (dx,)

    return _emit(out, (x,), backward, "slice_cols")


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Copy of rows [start, stop) of a 2-D tensor."""
    x = as_tensor(x)
    if x.array.ndim != 2:
        raise ShapeMismatch("slice_rows expects a 2-D tensor")
    out = np.ascontiguousarray(x.array[start:stop])
    full = x.array.shape

    def backward(g):
        dx = np.zeros(full, dtype=np.float64)
        dx[start:stop] = g
        return (dx,)

    return _emit(out, (x,), backward, "slice_rows")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along axis 0."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeMismatch("concat_rows: empty input")
    out = np.concatenate([p.array for p in parts], axis=0)
    heights = [p.array.shape[0] for p in parts]

    def backward(g):
        grads = []
        offset = 0
        for h in heights:
            grads.append(np.ascontiguousarray(g[offset:offset + h]))
            offset += h
        return tuple(grads)

    return _emit(out, tuple(parts), backward, "concat_rows")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeMismatch("concat_cols: empty input")
    out = np.concatenate([p.array for p in parts], axis=-1)
    widths = [p.array.shape[-1] for p in parts]

    def backward(g):
        grads = []
        offset = 0
        for w in widths:
            grads.append(np.ascontiguousarray(g[..., offset:offset + w]))
            offset += w
        return tuple(grads)

    return _emit(out, tuple(parts), backward, "concat_cols")


def dropout(x: Tensor, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout; identity when train is False or p == 0."""
    if not train or p <= 0.0:
        return x
    mask = (rng.random(x.array.shape) >= p).astype(np.float64) / (1.0 - p)
    return multiply(x, Tensor(mask))


def grad_reverse(x: Tensor, lam: float) -> Tensor:
    """Identity forward; backward multiplies the gradient by -lam."""
    x = as_tensor(x)
    out = x.array.copy()

    def backward(g):
        return (-lam * g,)

    return _emit(out, (x,), backward, "grad_reverse")


# ---------------------------------------------------------------------------
# reductions and losses

def _scalar(g) -> float:
    return float(np.asarray(g).reshape(-1)[0])


def tensor_sum(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.array.sum())
    shape = x.array.shape

    def backward(g):
        return (np.full(shape, _scalar(g)),)

    return _emit(out, (x,), backward, "sum")


def tensor_mean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.array.size
    out = np.asarray(x.array.mean())
    shape = x.array.shape

    def backward(g):
        return (np.full(shape, _scalar(g) / n),)

    return _emit(out, (x,), backward, "mean")


def huber_loss(pred: Tensor, target: Tensor, delta: float = 1.0) -> Tensor:
    """Mean Huber loss; quadratic inside |a| <= delta, linear outside."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.array.shape != target.array.shape:
        raise ShapeMismatch(f"huber_loss: shapes {pred.shape} vs {target.shape}")
    if delta <= 0:
        raise ClefError("huber_loss: delta must be positive")
    a = target.array - pred.array
    abs_a = np.abs(a)
    quad = 0.5 * a * a
    lin = delta * (abs_a - 0.5 * delta)
    out = np.asarray(np.where(abs_a <= delta, quad, lin).mean())
    n = a.size
    clipped = np.clip(a, -delta, delta)

    def backward(g):
        base = _scalar(g) * clipped / n
        return -base, base.copy()

    return _emit(out, (pred, target), backward, "huber_loss")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.array.shape != target.array.shape:
        raise ShapeMismatch(f"mse_loss: shapes {pred.shape} vs {target.shape}")
    diff = pred.array - target.array
    out = np.asarray((diff * diff).mean())
    n = diff.size

    def backward(g):
        base = 2.0 * _scalar(g) * diff / n
        return base, -base

    return _emit(out, (pred, target), backward, "mse_loss")


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean binary cross-entropy on raw logits (numerically stable)."""
    logits, targets = as_tensor(logits), as_tensor(targets)
    if logits.array.shape != targets.array.shape:
        raise ShapeMismatch("bce_with_logits: shape mismatch")
    x, t = logits.array, targets.array
    out = np.asarray((np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))).mean())
    n = x.size

    def backward(g):
        sig = 1.0 / (1.0 + np.exp(-x))
        return (_scalar(g) * (sig - t) / n, None)

    return _emit(out, (logits, targets), backward, "bce_with_logits")


# ---------------------------------------------------------------------------
# backward pass

def backward(loss: Tensor, tape: Tape) -> None:
    """Populate grads of every requires_grad tensor reachable from `loss`."""
    if loss.array.size != 1:
        raise ClefError(f"backward: loss must be scalar, got shape {loss.shape}")
    produced = any(entry.output is loss for entry in tape.entries)
    if not produced:
        raise ClefError("backward: loss is not an output recorded on this tape")
    loss.grad = np.ones_like(loss.array)
    for entry in reversed(tape.entries):
        g = entry.output.grad
        if g is None:
            continue
        grads = entry.backward(g)
        for inp, gi in zip(entry.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            inp.accumulate_grad(gi)


# ---------------------------------------------------------------------------
# optimizer

class AdamState:
    """Adam moments for a fixed parameter list."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.array) for p in self.params]
        self.v = [np.zeros_like(p.array) for p in self.params]


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update in place; clears grads afterward."""
    if len(params) != len(state.params) or any(p is not q for p, q in zip(params, state.params)):
        raise ClefError("adam_step: state was not initialized for these parameters")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for i, p in enumerate(params):
        g = p.grad_or_zeros()
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / bias1
        v_hat = state.v[i] / bias2
        p.array -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = None
