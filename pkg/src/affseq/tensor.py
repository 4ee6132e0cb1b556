"""Dense tensors with a reverse-mode gradient tape.

Storage defaults to float32; every reduction (matmul dot products, sums,
means, layer-norm moments, softmax normalizers) accumulates in float64
before the result is cast back to the storage dtype. Tensors built with
``dtype=np.float64`` stay float64 end to end, which is what the
finite-difference checker relies on for tight tolerances.

A ``Graph`` is a linear tape. Ops executed while a graph is active append
one node each; ``Graph.backward`` replays the tape strictly in reverse
creation order and accumulates gradients into every tensor that
``requires_grad``. With no active graph, every op is a pure function.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError, StateError

_FLOATS = (np.dtype(np.float32), np.dtype(np.float64))

_ACTIVE: "Graph | None" = None

F64 = np.float64


def _prepare(data, dtype) -> np.ndarray:
    if dtype is not None:
        arr = np.asarray(data).astype(dtype, copy=False)
    elif isinstance(data, (np.ndarray, np.generic)) and np.asarray(data).dtype in _FLOATS:
        arr = np.asarray(data)
    else:
        # python scalars/lists default to the package's float32 storage
        arr = np.asarray(data, dtype=np.float32)
    return np.ascontiguousarray(arr)


class Tensor:
    """Dense n-d float array with an optional same-shape gradient buffer.

    The data buffer is immutable by convention once constructed; only
    ``grad`` is written to (by ``Graph.backward`` and the optimizer).
    Non-finite contents are rejected at construction so NaN/Inf can never
    propagate silently.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = _prepare(data, dtype)
        if any(n < 1 for n in arr.shape):
            raise DimensionError(f"tensor extents must be positive, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("tensor rejected: contains NaN or Inf")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    # reductions / views -------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce(self, axis, keepdims, mean=False)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce(self, axis, keepdims, mean=True)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)

    # arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def astensor(x, dtype=None) -> Tensor:
    """Wrap scalars/arrays as constant tensors; pass Tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype)


class Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Graph:
    """Linear tape of recorded operations.

    Usage::

        with Graph() as g:
            loss = ...   # ops recorded here
        g.backward(loss, params=model_params)

    Backward walks the tape in exact reverse creation order; each
    parameter's gradient is the sum of contributions from every node that
    consumed it. A graph can run backward once; reusing it raises
    ``StateError``.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._spent = False
        self._prev = None

    def __enter__(self) -> "Graph":
        global _ACTIVE
        self._prev = _ACTIVE
        _ACTIVE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE
        _ACTIVE = self._prev
        return False

    def record(self, op: str, inputs: tuple, output: Tensor, backward_fn) -> None:
        self.nodes.append(Node(op, inputs, output, backward_fn))

    def backward(self, loss: Tensor, params=()) -> None:
        """Accumulate d(loss)/d(t) into ``t.grad`` for every recorded tensor.

        ``params`` may list extra leaf tensors; any of them left untouched
        by the traversal (unreachable from the loss) get a zero gradient.
        """
        if self._spent:
            raise StateError("backward already ran on this graph; record a new forward pass")
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._spent = True
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.output.grad
            if g is None:
                continue
            node.backward_fn(g)
        for p in params:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)


class pause_recording:
    """Context manager that suspends the active tape (pure-eval region)."""

    def __enter__(self):
        global _ACTIVE
        self._saved = _ACTIVE
        _ACTIVE = None
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE
        _ACTIVE = self._saved
        return False


def _record(op: str, inputs: tuple, out: Tensor, backward_fn) -> Tensor:
    if _ACTIVE is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE.record(op, inputs, out, backward_fn)
    return out


def _accum(t, g: np.ndarray) -> None:
    if not (isinstance(t, Tensor) and t.requires_grad):
        return
    g = np.asarray(g, dtype=t.data.dtype)
    if g.shape != t.data.shape:
        raise DimensionError(f"gradient shape {g.shape} does not match tensor shape {t.data.shape}")
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape`` (float64 sums)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)), dtype=F64)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True, dtype=F64)
    return g


def _result_dtype(*tensors):
    return np.result_type(*(t.data.dtype for t in tensors))


# ---------------------------------------------------------------------------
# elementwise / broadcast arithmetic


def _binary(op: str, a, b, fwd, bwd_a, bwd_b) -> Tensor:
    a, b = astensor(a), astensor(b)
    try:
        out_data = fwd(a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from e
    out = Tensor(out_data)

    def backward(g):
        _accum(a, _unbroadcast(bwd_a(g, a.data, b.data), a.shape))
        _accum(b, _unbroadcast(bwd_b(g, a.data, b.data), b.shape))

    return _record(op, (a, b), out, backward)


def add(a, b) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def neg(a) -> Tensor:
    a = astensor(a)
    out = Tensor(-a.data)

    def backward(g):
        _accum(a, -g)

    return _record("neg", (a,), out, backward)


def relu(a) -> Tensor:
    a = astensor(a)
    out = Tensor(np.maximum(a.data, 0))

    def backward(g):
        _accum(a, g * (a.data > 0))

    return _record("relu", (a,), out, backward)


def tanh(a) -> Tensor:
    a = astensor(a)
    out_data = np.tanh(a.data)
    out = Tensor(out_data)

    def backward(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _record("tanh", (a,), out, backward)


def softplus(a) -> Tensor:
    """log(1 + e^x), evaluated without overflow for large |x|."""
    a = astensor(a)
    x64 = a.data.astype(F64, copy=False)
    out = Tensor(np.logaddexp(0.0, x64).astype(a.dtype, copy=False))

    def backward(g):
        sig = 0.5 * (1.0 + np.tanh(0.5 * x64))  # stable sigmoid
        _accum(a, g * sig.astype(a.dtype, copy=False))

    return _record("softplus", (a,), out, backward)


# ---------------------------------------------------------------------------
# matmul


def matmul(a, b) -> Tensor:
    """np.matmul semantics on the trailing two axes, float64 dot products."""
    a, b = astensor(a), astensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    a64 = a.data.astype(F64, copy=False)
    b64 = b.data.astype(F64, copy=False)
    try:
        out64 = np.matmul(a64, b64)
    except ValueError as e:
        raise DimensionError(f"matmul batch dims do not broadcast: {a.shape} @ {b.shape}") from e
    out = Tensor(out64.astype(_result_dtype(a, b), copy=False))

    def backward(g):
        g64 = g.astype(F64, copy=False)
        ga = np.matmul(g64, np.swapaxes(b64, -1, -2))
        gb = np.matmul(np.swapaxes(a64, -1, -2), g64)
        _accum(a, _unbroadcast(ga, a.shape))
        _accum(b, _unbroadcast(gb, b.shape))

    return _record("matmul", (a, b), out, backward)


# ---------------------------------------------------------------------------
# normalizing ops (last axis)


def softmax(a) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    a = astensor(a)
    x64 = a.data.astype(F64, copy=False)
    e = np.exp(x64 - x64.max(axis=-1, keepdims=True))
    s64 = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s64.astype(a.dtype, copy=False))

    def backward(g):
        g64 = g.astype(F64, copy=False)
        gx = s64 * (g64 - (g64 * s64).sum(axis=-1, keepdims=True))
        _accum(a, gx.astype(a.dtype, copy=False))

    return _record("softmax", (a,), out, backward)


def log_softmax(a) -> Tensor:
    a = astensor(a)
    x64 = a.data.astype(F64, copy=False)
    m = x64.max(axis=-1, keepdims=True)
    ls64 = x64 - m - np.log(np.exp(x64 - m).sum(axis=-1, keepdims=True))
    out = Tensor(ls64.astype(a.dtype, copy=False))

    def backward(g):
        g64 = g.astype(F64, copy=False)
        gx = g64 - np.exp(ls64) * g64.sum(axis=-1, keepdims=True)
        _accum(a, gx.astype(a.dtype, copy=False))

    return _record("log_softmax", (a,), out, backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    x, gamma, beta = astensor(x), astensor(gamma), astensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match feature width {d}")
    x64 = x.data.astype(F64, copy=False)
    mu = x64.mean(axis=-1, keepdims=True)
    xc = x64 - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    g64 = gamma.data.astype(F64, copy=False)
    out64 = xhat * g64 + beta.data.astype(F64, copy=False)
    out = Tensor(out64.astype(x.dtype, copy=False))
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        gg = g.astype(F64, copy=False)
        _accum(gamma, (gg * xhat).sum(axis=lead, dtype=F64).astype(gamma.dtype, copy=False))
        _accum(beta, gg.sum(axis=lead, dtype=F64).astype(beta.dtype, copy=False))
        dxhat = gg * g64
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        _accum(x, gx.astype(x.dtype, copy=False))

    return _record("layer_norm", (x, gamma, beta), out, backward)


# ---------------------------------------------------------------------------
# dropout


def dropout(x, p: float, rng, training: bool) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Identity in eval mode. The mask comes entirely from ``rng``, so a
    generator derived from (seed, layer, step) replays exactly.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = astensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = rng.random(x.shape) >= p
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    out = Tensor(x.data * keep * scale)

    def backward(g):
        _accum(x, g * keep * scale)

    return _record("dropout", (x,), out, backward)


# ---------------------------------------------------------------------------
# shape ops


def reshape(x, shape: tuple) -> Tensor:
    x = astensor(x)
    try:
        out = Tensor(x.data.reshape(shape))
    except ValueError as e:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from e

    def backward(g):
        _accum(x, g.reshape(x.shape))

    return _record("reshape", (x,), out, backward)


def transpose(x, axes=None) -> Tensor:
    x = astensor(x)
    perm = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    out = Tensor(np.transpose(x.data, perm))
    inverse = tuple(np.argsort(perm))

    def backward(g):
        _accum(x, np.transpose(g, inverse))

    return _record("transpose", (x,), out, backward)


def gather_rows(x, idx) -> Tensor:
    """Select rows along axis 0; backward scatter-adds into the source."""
    x = astensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise DimensionError(f"gather_rows needs a non-empty 1-d index, got shape {idx.shape}")
    if idx.min() < 0 or idx.max() >= x.shape[0]:
        raise DimensionError(f"gather_rows index out of range for {x.shape[0]} rows")
    out = Tensor(x.data[idx])

    def backward(g):
        buf = np.zeros(x.shape, dtype=F64)
        np.add.at(buf, idx, g.astype(F64, copy=False))
        _accum(x, buf.astype(x.dtype, copy=False))

    return _record("gather_rows", (x,), out, backward)


# ---------------------------------------------------------------------------
# reductions


def _reduce(x: Tensor, axis, keepdims: bool, mean: bool) -> Tensor:
    x = astensor(x)
    axes = axis if axis is None else (axis if isinstance(axis, tuple) else (axis,))
    red64 = x.data.sum(axis=axes, keepdims=keepdims, dtype=F64)
    count = x.data.size if axes is None else int(np.prod([x.shape[a] for a in axes]))
    if mean:
        red64 = red64 / count
    out = Tensor(red64.astype(x.dtype, copy=False))

    def backward(g):
        g = np.asarray(g)
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        gx = np.broadcast_to(g, x.shape)
        _accum(x, (gx / count) if mean else gx.copy())

    return _record("mean" if mean else "sum", (x,), out, backward)


# ---------------------------------------------------------------------------
# finite differences


def finite_difference_check(f, x: Tensor, h: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor and must be deterministic
    (no dropout). The analytic gradient comes from one taped backward;
    the numeric one perturbs each coordinate by +/- h with the tape
    suspended. Pass float64 tensors (and close over float64 parameters)
    when tolerances below ~1e-3 matter.
    """
    if h <= 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    base = x.data.copy()
    with pause_recording():
        with Graph() as g:
            xv = Tensor(base, requires_grad=True, dtype=x.dtype)
            out = f(xv)
            g.backward(out)
        analytic = (xv.grad if xv.grad is not None else np.zeros_like(base)).ravel()

        flat = base.ravel()
        worst = 0.0
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            fp = f(Tensor(base, dtype=x.dtype)).item()
            flat[i] = saved - h
            fm = f(Tensor(base, dtype=x.dtype)).item()
            flat[i] = saved
            fd = (fp - fm) / (2.0 * h)
            rel = abs(float(analytic[i]) - fd) / (abs(float(analytic[i])) + 1e-8)
            worst = max(worst, rel)
    return worst
