"""A small reverse-mode differentiation engine over float64 numpy arrays.

Recording is explicit::

    with Tape() as tape:
        loss = ...            # primitives executed here are recorded
    grads = tape.backward(loss, params)

Outside a tape every primitive is plain numpy evaluation, which is what the
evaluation path uses.  A tape may be replayed any number of times; gradients
are never accumulated into the tensors themselves.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ContractError, NumericError

_TAPES = []
_DEBUG = os.environ.get("DSMT_DEBUG", "0") not in ("", "0")


def set_debug(flag):
    """Check every primitive output for NaN/Inf when ``flag`` is true."""
    global _DEBUG
    prev = _DEBUG
    _DEBUG = bool(flag)
    return prev


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    __array_priority__ = 100

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    backward: object
    op: str


class Tape:
    """Ordered record of executed primitives and their adjoint rules."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss, params=None):
        return backward(self, loss, params)


class Gradients(dict):
    """``id(tensor) -> gradient`` map; unreached tensors read as zeros."""

    def __init__(self, grads, tensors=()):
        super().__init__(grads)
        self._known = {id(t): t for t in tensors}

    def of(self, tensor):
        g = dict.get(self, id(tensor))
        return np.zeros_like(tensor.data) if g is None else g

    __call__ = of


def backward(tape, loss, params=None):
    """Replay adjoints in reverse order and return the gradient map."""
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(id(node.out))
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    out = Gradients(grads, params or ())
    return out


def _check(name, arr):
    if _DEBUG and not np.all(np.isfinite(arr)):
        raise NumericError(f"{name}: non-finite value in output")
    return arr


def _make(data, inputs, grad_fn, op):
    data = _check(op, data)
    tape = _TAPES[-1] if _TAPES else None
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        tape.nodes.append(_Node(out, inputs, grad_fn, op))
        return out
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# element-wise
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b):
    """Hadamard product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def grad(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), grad, "div")


def safe_div(a, b, tiny=1e-12):
    """``a / b`` where ``|b| >= tiny``, zero elsewhere (no gradient flows there)."""
    a, b = as_tensor(a), as_tensor(b)
    shape = _broadcast_shape("safe_div", a, b)
    ok = np.broadcast_to(np.abs(b.data) >= tiny, shape)
    denom = np.where(np.abs(b.data) >= tiny, b.data, 1.0)
    out = np.where(ok, a.data / denom, 0.0)

    def grad(g):
        g = np.where(ok, g, 0.0)
        return _unbroadcast(g / denom, a.shape), _unbroadcast(-g * out / denom, b.shape)

    return _make(out, (a, b), grad, "safe_div")


def sigmoid_np(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus_np(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = as_tensor(x)
    out = sigmoid_np(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(x):
    """``log(1 + exp(x))``, equal to ``-log sigmoid(-x)``."""
    x = as_tensor(x)
    return _make(softplus_np(x.data), (x,), lambda g: (g * sigmoid_np(x.data),), "softplus")


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def identity(x):
    return as_tensor(x)


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def row_norm(x, axis=-1, keepdims=False):
    """Euclidean norm along ``axis``; gradient is zero where the norm is zero."""
    x = as_tensor(x)
    out = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))

    def grad(g):
        g = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g * x.data / safe, 0.0),)

    return _make(out if keepdims else np.squeeze(out, axis=axis), (x,), grad, "row_norm")


def dropout(x, rate, rng):
    """Inverted dropout: train-time mask scaled by ``1/(1-rate)``; identity when ``rng`` is None."""
    x = as_tensor(x)
    if rng is None or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout: rate must be in [0,1), got {rate}")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------


def _expand_grad(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape).copy()


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    return _make(out, (x,), lambda g: (_expand_grad(g, x.shape, axis, keepdims),), "sum")


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = np.mean(x.data, axis=axis, keepdims=keepdims)
    count = x.data.size // max(out.size, 1) if x.data.size else 1
    return _make(
        out, (x,), lambda g: (_expand_grad(g, x.shape, axis, keepdims) / count,), "mean"
    )


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ContractError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None):
    """Swap the last two axes by default."""
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ContractError(f"concat: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, tuple(tensors), grad, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ContractError(f"stack: {exc}") from None

    def grad(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tuple(tensors), grad, "stack")


def index(x, key):
    """Basic or advanced indexing; the adjoint scatters with ``np.add.at``."""
    x = as_tensor(x)
    out = x.data[key]

    def grad(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return (gx,)

    return _make(np.array(out), (x,), grad, "index")


def gather_rows(x, idx):
    """``x[idx]`` for an integer index vector; adjoint is a segment sum."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ContractError(f"gather_rows: index out of range for {x.shape[0]} rows")

    def grad(g):
        return (_kernels.backend.segment_sum(g, idx, x.shape[0]),)

    return _make(x.data[idx], (x,), grad, "gather_rows")


def segment_sum(x, idx, n):
    """Sum rows of ``x`` into ``n`` buckets given by ``idx``."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape[0] != x.shape[0]:
        raise ContractError(f"segment_sum: {idx.shape[0]} indices for {x.shape[0]} rows")
    out = _kernels.backend.segment_sum(x.data, idx, n)
    return _make(out, (x,), lambda g: (g[idx],), "segment_sum")


# ---------------------------------------------------------------------------
# linear algebra and structured ops
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Batched matrix product with numpy ``@`` semantics (both operands >= 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def grad(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), grad, "matmul")


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def grad(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make(out, (x,), grad, "softmax")


def scaled_dot_product(q, k):
    """``q @ k^T / sqrt(width)`` over the last two axes."""
    q, k = as_tensor(q), as_tensor(k)
    if q.shape[-1] != k.shape[-1]:
        raise ContractError(f"scaled_dot_product: widths {q.shape[-1]} and {k.shape[-1]}")
    return mul(matmul(q, transpose(k)), 1.0 / math.sqrt(q.shape[-1]))


def circular_correlation(a, b):
    """Row-wise ``out[k] = sum_i a[i] * b[(i + k) mod d]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ContractError(f"circular_correlation: shapes {a.shape} and {b.shape}")
    squeeze = a.ndim == 1
    ad = a.data[None] if squeeze else a.data.reshape(-1, a.shape[-1])
    bd = b.data[None] if squeeze else b.data.reshape(-1, b.shape[-1])
    kern = _kernels.backend
    out = kern.corr_forward(ad, bd).reshape(a.shape)

    def grad(g):
        ga, gb = kern.corr_backward(g.reshape(ad.shape), ad, bd)
        return ga.reshape(a.shape), gb.reshape(b.shape)

    return _make(out, (a, b), grad, "circular_correlation")


def conv2d(x, w, padding=0):
    """Stride-1 2-D cross-correlation: ``x`` (N,C,H,W), ``w`` (F,C,kh,kw)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ContractError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    if x.shape[2] + 2 * padding < w.shape[2] or x.shape[3] + 2 * padding < w.shape[3]:
        raise ContractError(f"conv2d: filter {w.shape[2:]} larger than input {x.shape[2:]}")
    kern = _kernels.backend
    out = kern.conv2d_forward(x.data, w.data, padding)
    return _make(out, (x, w), lambda g: kern.conv2d_backward(g, x.data, w.data, padding), "conv2d")


# ---------------------------------------------------------------------------
# verification and optimisation
# ---------------------------------------------------------------------------


def finite_diff_check(fn, params, h=1e-5, coords=None, rng=None):
    """Max relative error between tape gradients and central differences.

    ``fn`` maps the ``params`` tensors to a scalar tensor.  ``coords`` caps
    the number of coordinates probed per parameter (all when None).
    """
    if not h > 0:
        raise ContractError(f"finite_diff_check: step must be positive, got {h}")
    with Tape() as tape:
        loss = fn(*params)
    if not np.isfinite(loss.data).all():
        raise NumericError("finite_diff_check: non-finite function value")
    grads = tape.backward(loss, params)
    worst = 0.0
    for p in params:
        analytic = grads.of(p).reshape(-1)
        flat = p.data.reshape(-1)
        n = flat.size
        if coords is not None and coords < n:
            rng = rng or np.random.default_rng(0)
            picks = rng.choice(n, size=coords, replace=False)
        else:
            picks = range(n)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(*params).item()
            flat[i] = orig - h
            fm = fn(*params).item()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError("finite_diff_check: non-finite function value")
            numeric = (fp - fm) / (2.0 * h)
            a = analytic[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, params, grads):
    """Bias-corrected Adam update, in place on ``params`` (name -> ndarray)."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"adam_step: gradient shape {g.shape} != parameter {p.shape} for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


class Adam:
    """Adam over a ``name -> Tensor`` parameter dict."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, grads):
        arrays = {k: t.data for k, t in self.params.items()}
        adam_step(self.state, arrays, {k: grads.of(t) for k, t in self.params.items()})
