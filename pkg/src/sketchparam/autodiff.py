"""Minimal reverse-mode automatic differentiation over float32 arrays.

Operations record onto an explicitly scoped :class:`Tape`; outside a tape
(or when no input requires gradients) they run as plain numpy, which is the
inference fast path. `backward` walks the tape once in reverse; a tape can
only be consumed once, and gradients accumulate into the zero-initialized
buffers of leaf tensors created with ``requires_grad=True``.

The op set is the minimum needed for small transformer encoder-decoders and
convolutional stacks: matmul (batched over leading axes), broadcasting
add/sub/mul, reshape/transpose/concat/slice, softmax, sigmoid, gelu, log,
clip, layer norm, stride-1 same-padding conv2d, 2x2 average pooling, and the
scalar losses (mse, probability cross-entropy). Embedding lookup is matmul
against one-hot (or probability) rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


class ShapeMismatchError(ValueError):
    pass


class NonScalarLossError(ValueError):
    pass


class MissingGradientError(RuntimeError):
    pass


class TapeConsumedError(RuntimeError):
    """backward was called twice on the same tape without a reset."""


_ACTIVE: "Tape | None" = None


class Tape:
    """Append-only op record; enters/exits as a context manager."""

    def __init__(self):
        self.entries: list[_Entry] = []
        self.consumed = False

    def __enter__(self):
        global _ACTIVE
        if _ACTIVE is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _ACTIVE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = None
        return False


@dataclass
class _Entry:
    out: "Tensor"
    inputs: tuple
    backward: object  # callable(grad_out) -> tuple of grads aligned with inputs


class Tensor:
    """Dense float32 array with optional gradient tracking.

    Scalar reduction outputs (losses) are the one exception to the float32
    rule: they carry float64 so finite-difference checks are not limited by
    the quantization of the loss value itself.
    """

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False, _keep_dtype: bool = False):
        self.data = np.asarray(data) if _keep_dtype else np.asarray(data, dtype=np.float32)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar -------------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self):
        return total(self)

    def mean(self):
        return mean(self)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)):
        return Tensor(np.float32(x))
    return Tensor(x)


def _tracing(*tensors) -> bool:
    return _ACTIVE is not None and any(t.requires_grad for t in tensors)


def _wrap(data) -> Tensor:
    arr = np.asarray(data)
    # scalar losses keep float64 (see Tensor docstring)
    if arr.ndim == 0 and arr.dtype == np.float64:
        return Tensor(arr, _keep_dtype=True)
    return Tensor(arr)


def _record(data, inputs, backward_fn) -> Tensor:
    out = _wrap(data)
    out.requires_grad = True
    out.tape = _ACTIVE
    out.grad = None  # intermediates use transient buffers during backward
    _ACTIVE.entries.append(_Entry(out, tuple(inputs), backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatchError(
            f"{op}: shapes {a.shape} and {b.shape} do not broadcast"
        ) from exc


# ---------------------------------------------------------------------------
# elementwise and linear ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    data = a.data + b.data
    if not _tracing(a, b):
        return _wrap(data)
    na, nb = a.requires_grad, b.requires_grad

    def bwd(g):
        return (
            _unbroadcast(g, a.shape) if na else None,
            _unbroadcast(g, b.shape) if nb else None,
        )

    return _record(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    data = a.data - b.data
    if not _tracing(a, b):
        return _wrap(data)
    na, nb = a.requires_grad, b.requires_grad

    def bwd(g):
        return (
            _unbroadcast(g, a.shape) if na else None,
            -_unbroadcast(g, b.shape) if nb else None,
        )

    return _record(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    data = a.data * b.data
    if not _tracing(a, b):
        return _wrap(data)
    na, nb = a.requires_grad, b.requires_grad
    ad, bd = a.data, b.data

    def bwd(g):
        return (
            _unbroadcast(g * bd, a.shape) if na else None,
            _unbroadcast(g * ad, b.shape) if nb else None,
        )

    return _record(data, (a, b), bwd)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    data = -a.data
    if not _tracing(a):
        return _wrap(data)

    def bwd(g):
        return (-g,)

    return _record(data, (a,), bwd)


def matmul(a, b) -> Tensor:
    """Matrix product; leading axes broadcast like numpy matmul."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(
            f"matmul requires ndim >= 2, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(
            f"matmul inner dims differ: {a.shape} vs {b.shape}"
        )
    data = a.data @ b.data
    if not _tracing(a, b):
        return Tensor(data)
    na, nb = a.requires_grad, b.requires_grad
    ad, bd = a.data, b.data

    def bwd(g):
        ga = _unbroadcast(g @ bd.swapaxes(-1, -2), a.shape) if na else None
        gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, b.shape) if nb else None
        return (ga, gb)

    return _record(data, (a, b), bwd)


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)
    if not _tracing(a):
        return Tensor(data)
    src_shape = a.shape

    def bwd(g):
        return (g.reshape(src_shape),)

    return _record(data, (a,), bwd)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    data = a.data.transpose(axes)
    if not _tracing(a):
        return Tensor(data)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        return (g.transpose(inverse),)

    return _record(data, (a,), bwd)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat of no tensors")
    data = np.concatenate([p.data for p in parts], axis=axis)
    if not _tracing(*parts):
        return Tensor(data)
    needs = [p.requires_grad for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bwd(g):
        pieces = np.split(g, sizes, axis=axis)
        return tuple(p if n else None for p, n in zip(pieces, needs))

    return _record(data, tuple(parts), bwd)


def slice_(a, key) -> Tensor:
    """Basic (non-fancy) slicing; gradient scatters back into place."""
    a = _as_tensor(a)
    data = a.data[key].copy()
    if not _tracing(a):
        return Tensor(data)
    src_shape = a.shape

    def bwd(g):
        buf = np.zeros(src_shape, dtype=np.float32)
        buf[key] = g
        return (buf,)

    return _record(data, (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------

def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)
    if not _tracing(a):
        return Tensor(data)
    y = data

    def bwd(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record(data, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    data = expit(a.data).astype(np.float32)
    if not _tracing(a):
        return Tensor(data)
    y = data

    def bwd(g):
        return (g * y * (1.0 - y),)

    return _record(data, (a,), bwd)


_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def gelu(a) -> Tensor:
    """tanh-approximation gelu (the approximation's own exact derivative)."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_K * (x + _GELU_C * (x * x * x))  # x**3 hits numpy's slow pow
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)
    if not _tracing(a):
        return Tensor(data.astype(np.float32))

    def bwd(g):
        dinner = _GELU_K * (1.0 + 3.0 * _GELU_C * (x * x))
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _record(data.astype(np.float32), (a,), bwd)


def log(a) -> Tensor:
    """Natural log; the caller guarantees strictly positive input."""
    a = _as_tensor(a)
    data = np.log(a.data)
    if not _tracing(a):
        return Tensor(data)
    ad = a.data

    def bwd(g):
        return (g / ad,)

    return _record(data, (a,), bwd)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient is zero where the clamp engaged."""
    a = _as_tensor(a)
    data = np.clip(a.data, lo, hi)
    if not _tracing(a):
        return Tensor(data)
    mask = ((a.data >= lo) & (a.data <= hi)).astype(np.float32)

    def bwd(g):
        return (g * mask,)

    return _record(data, (a,), bwd)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with learned per-feature gain and bias."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    dim = a.shape[-1]
    if gain.shape != (dim,) or bias.shape != (dim,):
        raise ShapeMismatchError(
            f"layer_norm gain/bias must be ({dim},), got {gain.shape}/{bias.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gain.data + bias.data
    if not _tracing(a, gain, bias):
        return Tensor(data)
    na, ng, nb = a.requires_grad, gain.requires_grad, bias.requires_grad
    gd = gain.data
    lead = tuple(range(a.ndim - 1))

    def bwd(g):
        dgain = (g * xhat).sum(axis=lead) if ng else None
        dbias = g.sum(axis=lead) if nb else None
        if na:
            dxhat = g * gd
            dx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        else:
            dx = None
        return (dx, dgain, dbias)

    return _record(data, (a, gain, bias), bwd)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def conv2d(x, w, b) -> Tensor:
    """Stride-1, same-padding 2-D convolution.

    x: (N, C, H, W); w: (O, C, kh, kw) with odd kernel dims; b: (O,).
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatchError(
            f"conv2d expects x (N,C,H,W) and w (O,C,kh,kw), got {x.shape}, {w.shape}"
        )
    n, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise ShapeMismatchError(f"conv2d channel mismatch: {x.shape} vs {w.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeMismatchError(f"conv2d kernel dims must be odd, got {kh}x{kw}")
    if b.shape != (o,):
        raise ShapeMismatchError(f"conv2d bias must be ({o},), got {b.shape}")
    ph, pw = kh // 2, kw // 2

    def windows(arr):
        padded = np.pad(arr, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        return np.lib.stride_tricks.sliding_window_view(
            padded, (kh, kw), axis=(2, 3)
        )

    win = windows(x.data)
    data = np.einsum("nchwij,ocij->nohw", win, w.data, optimize=True)
    data += b.data[None, :, None, None]
    data = data.astype(np.float32)
    if not _tracing(x, w, b):
        return Tensor(data)
    nx, nw, nb_ = x.requires_grad, w.requires_grad, b.requires_grad
    wd_ = w.data

    def bwd(g):
        gb = g.sum(axis=(0, 2, 3)) if nb_ else None
        gw = (
            np.einsum("nchwij,nohw->ocij", win, g, optimize=True) if nw else None
        )
        if nx:
            gwin = windows(g)
            flipped = wd_[:, :, ::-1, ::-1]
            gx = np.einsum("nohwij,ocij->nchw", gwin, flipped, optimize=True)
        else:
            gx = None
        return (gx, gw, gb)

    return _record(data, (x, w, b), bwd)


def avgpool2(a) -> Tensor:
    """2x2 mean pooling (stride 2) over the trailing two axes."""
    a = _as_tensor(a)
    *lead, h, w = a.shape
    if h % 2 or w % 2:
        raise ShapeMismatchError(f"avgpool2 needs even trailing dims, got {a.shape}")
    data = a.data.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))
    if not _tracing(a):
        return Tensor(data)

    def bwd(g):
        g = np.repeat(np.repeat(g, 2, axis=-1), 2, axis=-2)
        return ((g * 0.25).astype(np.float32),)

    return _record(data, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions and losses
# ---------------------------------------------------------------------------

def total(a) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(dtype=np.float64)
    if not _tracing(a):
        return _wrap(data)
    shape = a.shape

    def bwd(g):
        return (np.full(shape, g, dtype=np.float32),)

    return _record(data, (a,), bwd)


def mean(a) -> Tensor:
    a = _as_tensor(a)
    data = a.data.mean(dtype=np.float64)
    if not _tracing(a):
        return _wrap(data)
    shape = a.shape
    inv = 1.0 / a.data.size

    def bwd(g):
        return (np.full(shape, g * inv, dtype=np.float32),)

    return _record(data, (a,), bwd)


def mse(a, b) -> Tensor:
    """Mean squared error over all elements; differentiable in both."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mse shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    d64 = diff.astype(np.float64)
    data = np.mean(d64 * d64)
    if not _tracing(a, b):
        return _wrap(data)
    na, nb = a.requires_grad, b.requires_grad
    scale = 2.0 / diff.size

    def bwd(g):
        d = (g * scale) * diff
        return (d if na else None, -d if nb else None)

    return _record(data, (a, b), bwd)


def cross_entropy(probs, target, floor: float = 1e-9) -> Tensor:
    """Mean over rows of -sum(target * log(max(probs, floor))).

    `target` is a constant array of the same shape (one-hot rows or any
    distribution); rows are all leading positions, classes the last axis.
    """
    probs = _as_tensor(probs)
    target = np.asarray(target, dtype=np.float32)
    if probs.shape != target.shape:
        raise ShapeMismatchError(
            f"cross_entropy shapes differ: {probs.shape} vs {target.shape}"
        )
    rows = int(np.prod(probs.shape[:-1])) if probs.ndim > 1 else 1
    p = np.maximum(probs.data, floor)
    data = -(target.astype(np.float64) * np.log(p.astype(np.float64))).sum() / rows
    data = np.asarray(data)
    if not _tracing(probs):
        return _wrap(data)
    mask = probs.data >= floor

    def bwd(g):
        return ((-g / rows) * (target / p) * mask,)

    return _record(data, (probs,), bwd)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate gradients of every reachable leaf for a scalar loss."""
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        shape = getattr(loss, "shape", None)
        raise NonScalarLossError(f"loss must be a scalar Tensor, got shape {shape}")
    tape = loss.tape
    if tape is None:
        raise RuntimeError("loss is not attached to a tape (nothing was recorded)")
    if tape.consumed:
        raise TapeConsumedError(
            "backward was already called on this tape; build a new tape"
        )
    tape.consumed = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float32)}
    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.out), None)
        if g is None:
            continue
        for t, gi in zip(entry.inputs, entry.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            gi = np.asarray(gi, dtype=np.float32)
            if t.grad is not None:  # leaf buffer
                t.grad += gi
            elif t.tape is tape:  # intermediate of this tape
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi


# ---------------------------------------------------------------------------
# parameters and Adam
# ---------------------------------------------------------------------------

class ParameterStore:
    """Ordered named parameters with per-parameter Adam state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        self._t[name] = 0
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def step_count(self, name: str) -> int:
        return self._t[name]

    def freeze(self) -> None:
        """Stop gradient tracking; frozen parameters never change."""
        for t in self._params.values():
            t.requires_grad = False
            t.grad = None

    def state_bytes(self) -> bytes:
        """Raw parameter bytes in name order (for freeze-contract hashing)."""
        chunks = []
        for name, t in self._params.items():
            chunks.append(name.encode("utf-8"))
            chunks.append(np.ascontiguousarray(t.data).tobytes())
        return b"".join(chunks)


def adam_step(
    store: ParameterStore,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update over every parameter; clears gradients."""
    for name, p in store.items():
        if p.grad is None:
            raise MissingGradientError(f"parameter {name!r} has no gradient buffer")
        g = p.grad
        store._t[name] += 1
        t = store._t[name]
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(np.float32)
        p.grad[...] = 0.0


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: list = field(default_factory=list)

    def ok(self, tol: float = 1e-2) -> bool:
        return self.max_rel_error < tol


def grad_check(
    f,
    inputs,
    eps: float = 1e-3,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of scalar f(*inputs) to central differences.

    The error is max |analytic - numeric| normalized by the largest gradient
    magnitude seen (floored at 1e-3), which keeps near-zero coordinates from
    dominating in float32. `max_coords`, when set, checks a seeded random
    subset of coordinates per input.
    """
    inputs = [t if isinstance(t, Tensor) else Tensor(t, requires_grad=True)
              for t in inputs]
    for t in inputs:
        if not t.requires_grad:
            raise ValueError("grad_check inputs must require gradients")
        t.grad[...] = 0.0
    with Tape():
        loss = f(*inputs)
    backward(loss)
    analytic = [t.grad.copy() for t in inputs]
    rng = np.random.default_rng(seed)
    per_input = []
    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n_coords = flat.size
        if max_coords is not None and n_coords > max_coords:
            idx = rng.choice(n_coords, size=max_coords, replace=False)
        else:
            idx = np.arange(n_coords)
        numeric = np.zeros(len(idx), dtype=np.float64)
        for j, k in enumerate(idx):
            orig = flat[k]
            flat[k] = orig + eps
            hi = float(f(*inputs).data)
            flat[k] = orig - eps
            lo = float(f(*inputs).data)
            flat[k] = orig
            numeric[j] = (hi - lo) / (2.0 * eps)
        a_sel = a.reshape(-1)[idx].astype(np.float64)
        scale = max(np.abs(a_sel).max(initial=0.0),
                    np.abs(numeric).max(initial=0.0), 1e-3)
        rel = float(np.abs(a_sel - numeric).max(initial=0.0) / scale)
        per_input.append(rel)
        worst = max(worst, rel)
    return GradCheckReport(max_rel_error=worst, per_input=per_input)
