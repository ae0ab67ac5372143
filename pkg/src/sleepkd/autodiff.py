"""Reverse-mode automatic differentiation on float64 numpy arrays.

A ``Tape`` records every differentiable op in execution order; calling
``Tape.backward(loss)`` seeds ``loss.grad`` with ones and replays the
records in reverse, accumulating into ``DiffArray.grad`` buffers.
Running backward twice on the same tape accumulates gradients twice;
call ``zero_grad`` on the parameters (or build a fresh tape) between
steps.

Ops only record when a tape is active and at least one input requires
gradients, so a frozen network runs forward without touching memory
beyond its activations.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError

_TAPE = None


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


class DiffArray:
    """A float64 ndarray with a lazily allocated gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _f64(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "DiffArray":
        return DiffArray(self.data, requires_grad=False)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"DiffArray(shape={self.data.shape}, requires_grad={self.requires_grad})"


def param(data) -> DiffArray:
    return DiffArray(data, requires_grad=True)


def constant(data) -> DiffArray:
    return DiffArray(data, requires_grad=False)


class Tape:
    """Op recorder. Use as a context manager around the forward pass."""

    def __init__(self):
        self._records = []

    def __enter__(self):
        global _TAPE
        if _TAPE is not None:
            raise RuntimeError("a Tape is already active; tapes do not nest")
        _TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _TAPE
        _TAPE = None
        return False

    def backward(self, loss: DiffArray):
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.ensure_grad()[...] += 1.0
        for fn in reversed(self._records):
            fn()

    def clear(self):
        self._records.clear()

    def __len__(self):
        return len(self._records)


def _record(fn):
    _TAPE._records.append(fn)


def _wants_grad(*xs) -> bool:
    return _TAPE is not None and any(x.requires_grad for x in xs)


def _check_same_shape(a: DiffArray, b: DiffArray, op: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: DiffArray, b: DiffArray) -> DiffArray:
    _check_same_shape(a, b, "add")
    out = DiffArray(a.data + b.data, _wants_grad(a, b))
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            if a.requires_grad:
                a.ensure_grad()[...] += out.grad
            if b.requires_grad:
                b.ensure_grad()[...] += out.grad
        _record(bwd)
    return out


def sub(a: DiffArray, b: DiffArray) -> DiffArray:
    _check_same_shape(a, b, "sub")
    out = DiffArray(a.data - b.data, _wants_grad(a, b))
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            if a.requires_grad:
                a.ensure_grad()[...] += out.grad
            if b.requires_grad:
                b.ensure_grad()[...] -= out.grad
        _record(bwd)
    return out


def mul(a: DiffArray, b: DiffArray) -> DiffArray:
    _check_same_shape(a, b, "mul")
    out = DiffArray(a.data * b.data, _wants_grad(a, b))
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            if a.requires_grad:
                a.ensure_grad()[...] += out.grad * b.data
            if b.requires_grad:
                b.ensure_grad()[...] += out.grad * a.data
        _record(bwd)
    return out


def scale(a: DiffArray, c: float) -> DiffArray:
    c = float(c)
    out = DiffArray(a.data * c, _wants_grad(a))
    if out.requires_grad:
        def bwd():
            if out.grad is not None:
                a.ensure_grad()[...] += out.grad * c
        _record(bwd)
    return out


def add_const(a: DiffArray, c) -> DiffArray:
    """Add a constant scalar or ndarray; no gradient flows into ``c``."""
    out = DiffArray(a.data + c, _wants_grad(a))
    if out.requires_grad:
        def bwd():
            if out.grad is not None:
                a.ensure_grad()[...] += out.grad
        _record(bwd)
    return out


def mul_const(a: DiffArray, c) -> DiffArray:
    """Multiply by a constant scalar or same-shaped ndarray."""
    c = np.asarray(c, dtype=np.float64)
    out = DiffArray(a.data * c, _wants_grad(a))
    if out.requires_grad:
        def bwd():
            if out.grad is not None:
                a.ensure_grad()[...] += out.grad * c
        _record(bwd)
    return out


def batch_mul(a: DiffArray, s: DiffArray) -> DiffArray:
    """Multiply (B, C, L) by a per-item scalar (B, 1, 1)."""
    if a.data.ndim != 3 or s.data.shape != (a.data.shape[0], 1, 1):
        raise ShapeError(f"batch_mul: got {a.data.shape} and {s.data.shape}")
    out = DiffArray(a.data * s.data, _wants_grad(a, s))
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            if a.requires_grad:
                a.ensure_grad()[...] += out.grad * s.data
            if s.requires_grad:
                s.ensure_grad()[...] += (out.grad * a.data).sum(axis=(1, 2), keepdims=True)
        _record(bwd)
    return out


def recip(a: DiffArray) -> DiffArray:
    y = 1.0 / a.data
    out = DiffArray(y, _wants_grad(a))
    if out.requires_grad:
        def bwd():
            if out.grad is not None:
                a.ensure_grad()[...] += out.grad * (-y * y)
        _record(bwd)
    return out


def exp(a: DiffArray) -> DiffArray:
    y = np.exp(a.data)
    out = DiffArray(y, _wants_grad(a))
    if out.requires_grad:
        def bwd():
            if out.grad is not None:
                a.ensure_grad()[...] += out.grad * y
        _record(bwd)
    return out


def sqrt_safe(a: DiffArray) -> DiffArray:
    """Square root with subgradient 0 at exactly 0.

    Keeps the distance between identical inputs at an exact 0 with a
    zero gradient instead of NaN.
    """
    y = np.sqrt(a.data)
    out = DiffArray(y, _wants_grad(a))
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            g = np.zeros_like(y)
            nz = a.data > 0.0
            g[nz] = 0.5 / y[nz]
            a.ensure_grad()[...] += out.grad * g
        _record(bwd)
    return out


# ---------------------------------------------------------------------------
# reductions

def channel_sum(a: DiffArray) -> DiffArray:
    """(B, C, L) -> (B, 1, L), summing over channels."""
    if a.data.ndim != 3:
        raise ShapeError(f"channel_sum expects (B, C, L), got {a.data.shape}")
    out = DiffArray(a.data.sum(axis=1, keepdims=True), _wants_grad(a))
    if out.requires_grad:
        def bwd():
            if out.grad is not None:
                a.ensure_grad()[...] += out.grad
        _record(bwd)
    return out


def batch_sum(a: DiffArray) -> DiffArray:
    """(B, C, L) -> (B, 1, 1), summing within each batch item."""
    if a.data.ndim != 3:
        raise ShapeError(f"batch_sum expects (B, C, L), got {a.data.shape}")
    out = DiffArray(a.data.sum(axis=(1, 2), keepdims=True), _wants_grad(a))
    if out.requires_grad:
        def bwd():
            if out.grad is not None:
                a.ensure_grad()[...] += out.grad
        _record(bwd)
    return out


def sum_all(a: DiffArray) -> DiffArray:
    out = DiffArray(a.data.sum(), _wants_grad(a))
    if out.requires_grad:
        def bwd():
            if out.grad is not None:
                a.ensure_grad()[...] += out.grad
        _record(bwd)
    return out


def mean_reduce(a: DiffArray) -> DiffArray:
    n = a.data.size
    out = DiffArray(a.data.sum() / n, _wants_grad(a))
    if out.requires_grad:
        def bwd():
            if out.grad is not None:
                a.ensure_grad()[...] += out.grad / n
        _record(bwd)
    return out


# ---------------------------------------------------------------------------
# neural-network ops, all on (B, C, L)

def conv1d(x: DiffArray, w: DiffArray, b: DiffArray) -> DiffArray:
    """Same-padded 1-D convolution (cross-correlation), odd kernel width."""
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError(f"conv1d: got input {x.data.shape}, weights {w.data.shape}")
    co, ci, k = w.data.shape
    if x.data.shape[1] != ci:
        raise ShapeError(f"conv1d: input has {x.data.shape[1]} channels, weights expect {ci}")
    if k % 2 != 1:
        raise ShapeError(f"conv1d: kernel width must be odd, got {k}")
    if b.data.shape != (co,):
        raise ShapeError(f"conv1d: bias shape {b.data.shape}, expected ({co},)")
    pad = (k - 1) // 2
    if pad:
        xp = np.zeros((x.data.shape[0], ci, x.data.shape[2] + 2 * pad))
        xp[:, :, pad : pad + x.data.shape[2]] = x.data
    else:
        xp = x.data
    y = kernels.conv1d_valid(xp, w.data, b.data)
    out = DiffArray(y, _wants_grad(x, w, b))
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            dy = np.ascontiguousarray(out.grad)
            if x.requires_grad:
                dxp = kernels.conv1d_grad_input(dy, w.data, xp.shape[2])
                if pad:
                    x.ensure_grad()[...] += dxp[:, :, pad : pad + x.data.shape[2]]
                else:
                    x.ensure_grad()[...] += dxp
            if w.requires_grad or b.requires_grad:
                dw, db = kernels.conv1d_grad_weights(xp, dy, k)
                if w.requires_grad:
                    w.ensure_grad()[...] += dw
                if b.requires_grad:
                    b.ensure_grad()[...] += db
        _record(bwd)
    return out


def maxpool2(x: DiffArray) -> DiffArray:
    """Max pool, width 2, stride 2; ties take the earlier index."""
    if x.data.ndim != 3 or x.data.shape[2] % 2 != 0:
        raise ShapeError(f"maxpool2 expects (B, C, even L), got {x.data.shape}")
    y, arg = kernels.maxpool2_forward(x.data)
    out = DiffArray(y, _wants_grad(x))
    if out.requires_grad:
        def bwd():
            if out.grad is not None:
                x.ensure_grad()[...] += kernels.maxpool2_backward(
                    np.ascontiguousarray(out.grad), arg
                )
        _record(bwd)
    return out


def upsample2(x: DiffArray) -> DiffArray:
    """Nearest-neighbour upsampling by 2 along the last axis."""
    if x.data.ndim != 3:
        raise ShapeError(f"upsample2 expects (B, C, L), got {x.data.shape}")
    out = DiffArray(np.repeat(x.data, 2, axis=2), _wants_grad(x))
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            x.ensure_grad()[...] += g[:, :, 0::2] + g[:, :, 1::2]
        _record(bwd)
    return out


def avgpool1d(x: DiffArray, width: int) -> DiffArray:
    """Average pool with window == stride == width; L must divide evenly."""
    b, c, l = x.data.shape
    if l % width != 0:
        raise ShapeError(f"avgpool1d: length {l} not divisible by window {width}")
    y = x.data.reshape(b, c, l // width, width).mean(axis=3)
    out = DiffArray(y, _wants_grad(x))
    if out.requires_grad:
        def bwd():
            if out.grad is not None:
                g = np.repeat(out.grad / width, width, axis=2)
                x.ensure_grad()[...] += g
        _record(bwd)
    return out


def crop_length(x: DiffArray, left: int, length: int) -> DiffArray:
    """Take x[:, :, left:left+length]."""
    if x.data.ndim != 3 or left < 0 or left + length > x.data.shape[2]:
        raise ShapeError(
            f"crop_length: [{left}, {left + length}) out of bounds for {x.data.shape}"
        )
    out = DiffArray(x.data[:, :, left : left + length], _wants_grad(x))
    if out.requires_grad:
        def bwd():
            if out.grad is not None:
                x.ensure_grad()[:, :, left : left + length] += out.grad
        _record(bwd)
    return out


def concat_channels(xs) -> DiffArray:
    if len(xs) < 2:
        raise ShapeError("concat_channels needs at least two inputs")
    b, _, l = xs[0].data.shape
    for x in xs:
        if x.data.shape[0] != b or x.data.shape[2] != l:
            raise ShapeError(
                "concat_channels: batch/length mismatch "
                + str([x.data.shape for x in xs])
            )
    out = DiffArray(np.concatenate([x.data for x in xs], axis=1), _wants_grad(*xs))
    if out.requires_grad:
        offsets = np.cumsum([0] + [x.data.shape[1] for x in xs])
        def bwd():
            if out.grad is None:
                return
            for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
                if x.requires_grad:
                    x.ensure_grad()[...] += out.grad[:, lo:hi, :]
        _record(bwd)
    return out


def elu(x: DiffArray) -> DiffArray:
    pos = x.data > 0.0
    y = np.where(pos, x.data, np.expm1(x.data))
    out = DiffArray(y, _wants_grad(x))
    if out.requires_grad:
        def bwd():
            if out.grad is not None:
                x.ensure_grad()[...] += out.grad * np.where(pos, 1.0, y + 1.0)
        _record(bwd)
    return out


def log_softmax_np(z: np.ndarray) -> np.ndarray:
    """Log-softmax over the channel axis of (B, C, L), plain numpy.

    Shared by the autodiff op and by teacher-side target computation so
    identical logits give bit-identical log-probabilities.
    """
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    return z - m - np.log(e.sum(axis=1, keepdims=True))


def log_softmax(x: DiffArray, temperature: float = 1.0) -> DiffArray:
    """Temperature-scaled log-softmax over the channel axis."""
    if x.data.ndim != 3:
        raise ShapeError(f"log_softmax expects (B, C, L), got {x.data.shape}")
    t = float(temperature)
    if t <= 0.0:
        raise ValueError(f"temperature must be positive, got {t}")
    z = x.data / t if t != 1.0 else x.data
    lp = log_softmax_np(z)
    out = DiffArray(lp, _wants_grad(x))
    if out.requires_grad:
        p = np.exp(lp)
        def bwd():
            if out.grad is None:
                return
            g = out.grad - p * out.grad.sum(axis=1, keepdims=True)
            x.ensure_grad()[...] += g / t
        _record(bwd)
    return out


def batchnorm_train(x: DiffArray, gamma: DiffArray, beta: DiffArray, eps: float = 1e-5):
    """Batch norm over (B, L) per channel, training mode.

    Returns (out, batch_mean, batch_var) with the biased batch variance;
    the caller owns the running-stat update.
    """
    if x.data.ndim != 3:
        raise ShapeError(f"batchnorm expects (B, C, L), got {x.data.shape}")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"batchnorm: gamma {gamma.data.shape} / beta {beta.data.shape}, expected ({c},)"
        )
    n = x.data.shape[0] * x.data.shape[2]
    mean = x.data.mean(axis=(0, 2))
    var = x.data.var(axis=(0, 2))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[:, None]) * inv[:, None]
    y = xhat * gamma.data[:, None] + beta.data[:, None]
    out = DiffArray(y, _wants_grad(x, gamma, beta))
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            dy = out.grad
            if gamma.requires_grad:
                gamma.ensure_grad()[...] += (dy * xhat).sum(axis=(0, 2))
            if beta.requires_grad:
                beta.ensure_grad()[...] += dy.sum(axis=(0, 2))
            if x.requires_grad:
                gi = gamma.data[:, None] * inv[:, None]
                s1 = dy.sum(axis=(0, 2), keepdims=True) / n
                s2 = (dy * xhat).sum(axis=(0, 2), keepdims=True) / n
                x.ensure_grad()[...] += gi * (dy - s1 - xhat * s2)
        _record(bwd)
    return out, mean, var


def batchnorm_eval(
    x: DiffArray,
    gamma: DiffArray,
    beta: DiffArray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = 1e-5,
) -> DiffArray:
    """Batch norm using fixed running statistics (inference mode)."""
    if x.data.ndim != 3:
        raise ShapeError(f"batchnorm expects (B, C, L), got {x.data.shape}")
    inv = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean[:, None]) * inv[:, None]
    y = xhat * gamma.data[:, None] + beta.data[:, None]
    out = DiffArray(y, _wants_grad(x, gamma, beta))
    if out.requires_grad:
        def bwd():
            if out.grad is None:
                return
            dy = out.grad
            if gamma.requires_grad:
                gamma.ensure_grad()[...] += (dy * xhat).sum(axis=(0, 2))
            if beta.requires_grad:
                beta.ensure_grad()[...] += dy.sum(axis=(0, 2))
            if x.requires_grad:
                x.ensure_grad()[...] += dy * (gamma.data[:, None] * inv[:, None])
        _record(bwd)
    return out


# ---------------------------------------------------------------------------
# finite-difference gradient checking

def grad_check(fn, params, eps: float = 1e-5, max_entries: int = 64, rng=None) -> float:
    """Compare analytic gradients of ``fn()`` against central differences.

    ``fn`` builds and returns a scalar DiffArray from ``params`` (a list
    of DiffArray leaves); it is re-run under a fresh tape per evaluation.
    Checks up to ``max_entries`` randomly chosen entries per parameter
    and returns the worst relative error.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
        tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + eps
            with Tape():
                hi = fn().item()
            flat[i] = keep - eps
            with Tape():
                lo = fn().item()
            flat[i] = keep
            fd = (hi - lo) / (2.0 * eps)
            err = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), 1e-3)
            if err > worst:
                worst = err
    return worst
