"""Hot numeric kernels: 1-D convolution and max-pooling, forward and backward.

Two interchangeable backends compute bit-compatible results:

* ``numba`` -- @njit-compiled loops, the default whenever numba imports.
* ``numpy`` -- pure-numpy fallback built on strided views and BLAS matmul.

Select with the environment variable ``SLEEPKD_BACKEND=numpy`` (or
``numba``), or at runtime via :func:`set_backend`.  Within one backend and
a fixed thread count every kernel is deterministic: each output element is
produced by exactly one thread with a fixed inner summation order.

Convolutions here are "valid" on an already-padded input; the autodiff
layer owns the zero-padding that makes them "same".
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

try:
    import numba
    from numba import njit, prange

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but keep the fallback honest
    _HAS_NUMBA = False

_VALID_BACKENDS = ("numba", "numpy")


def _initial_backend() -> str:
    name = os.environ.get("SLEEPKD_BACKEND", "").strip().lower()
    if name:
        if name not in _VALID_BACKENDS:
            raise ConfigError(
                f"SLEEPKD_BACKEND={name!r} not supported; choose one of {_VALID_BACKENDS}"
            )
        if name == "numba" and not _HAS_NUMBA:
            raise ConfigError("SLEEPKD_BACKEND=numba but numba is not importable")
        return name
    return "numba" if _HAS_NUMBA else "numpy"


_BACKEND = _initial_backend()


def get_backend() -> str:
    return _BACKEND


def set_backend(name: str) -> None:
    if name not in _VALID_BACKENDS:
        raise ConfigError(f"unknown kernel backend {name!r}; choose one of {_VALID_BACKENDS}")
    if name == "numba" and not _HAS_NUMBA:
        raise ConfigError("numba backend requested but numba is not importable")
    global _BACKEND
    _BACKEND = name


def available_backends() -> tuple[str, ...]:
    return _VALID_BACKENDS if _HAS_NUMBA else ("numpy",)


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


# ---------------------------------------------------------------------------
# numpy backend: one BLAS matmul per kernel tap, no im2col copies
# ---------------------------------------------------------------------------

def _conv1d_valid_np(xp: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    b, ci, lp = xp.shape
    co, _, k = w.shape
    l = lp - k + 1
    y = np.empty((b, co, l))
    y[:] = bias[:, None]
    for t in range(k):
        y += np.matmul(w[:, :, t], xp[:, :, t : t + l])
    return y


def _conv1d_grad_input_np(dy: np.ndarray, w: np.ndarray, lp: int) -> np.ndarray:
    b, co, l = dy.shape
    _, ci, k = w.shape
    dxp = np.zeros((b, ci, lp))
    for t in range(k):
        dxp[:, :, t : t + l] += np.matmul(w[:, :, t].T, dy)
    return dxp


def _conv1d_grad_weights_np(xp: np.ndarray, dy: np.ndarray, k: int):
    b, ci, lp = xp.shape
    _, co, l = dy.shape
    dyt = dy.transpose(0, 2, 1)
    dw = np.empty((co, ci, k))
    for t in range(k):
        dw[:, :, t] = np.matmul(xp[:, :, t : t + l], dyt).sum(axis=0).T
    db = dy.sum(axis=(0, 2))
    return dw, db


def _maxpool2_forward_np(x: np.ndarray):
    b, c, l = x.shape
    pairs = x.reshape(b, c, l // 2, 2)
    # strict > keeps the tie-break at the earlier index
    arg = (pairs[..., 1] > pairs[..., 0]).astype(np.uint8)
    y = np.where(arg, pairs[..., 1], pairs[..., 0])
    return y, arg


def _maxpool2_backward_np(dy: np.ndarray, arg: np.ndarray) -> np.ndarray:
    b, c, lo = dy.shape
    dx = np.zeros((b, c, lo, 2))
    sel = arg.astype(bool)
    dx[..., 0] = np.where(sel, 0.0, dy)
    dx[..., 1] = np.where(sel, dy, 0.0)
    return dx.reshape(b, c, 2 * lo)


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if _HAS_NUMBA:

    _BLK = 2048  # output positions per cache block

    @njit(parallel=True, fastmath=True, cache=True)
    def _conv1d_valid_nb(xp, w, bias, y):
        b, ci, lp = xp.shape
        co, _, k = w.shape
        l = lp - k + 1
        for bo in prange(b * co):
            bi = bo // co
            o = bo % co
            acc = np.empty(_BLK)
            for l0 in range(0, l, _BLK):
                n = min(_BLK, l - l0)
                for j in range(n):
                    acc[j] = bias[o]
                if k == 5:
                    for i in range(ci):
                        xrow = xp[bi, i]
                        w0 = w[o, i, 0]
                        w1 = w[o, i, 1]
                        w2 = w[o, i, 2]
                        w3 = w[o, i, 3]
                        w4 = w[o, i, 4]
                        for j in range(n):
                            p = l0 + j
                            acc[j] += (
                                w0 * xrow[p]
                                + w1 * xrow[p + 1]
                                + w2 * xrow[p + 2]
                                + w3 * xrow[p + 3]
                                + w4 * xrow[p + 4]
                            )
                else:
                    for i in range(ci):
                        xrow = xp[bi, i]
                        for t in range(k):
                            wv = w[o, i, t]
                            for j in range(n):
                                acc[j] += wv * xrow[l0 + t + j]
                for j in range(n):
                    y[bi, o, l0 + j] = acc[j]

    @njit(parallel=True, fastmath=True, cache=True)
    def _conv1d_grad_input_nb(dy, w, dxp):
        b, co, l = dy.shape
        _, ci, k = w.shape
        lp = dxp.shape[2]
        for bi_i in prange(b * ci):
            bi = bi_i // ci
            i = bi_i % ci
            acc = np.zeros(lp)
            for o in range(co):
                dyrow = dy[bi, o]
                if k == 5 and l >= 8:
                    w0 = w[o, i, 0]
                    w1 = w[o, i, 1]
                    w2 = w[o, i, 2]
                    w3 = w[o, i, 3]
                    w4 = w[o, i, 4]
                    for p in range(4, l):
                        acc[p] += (
                            w0 * dyrow[p]
                            + w1 * dyrow[p - 1]
                            + w2 * dyrow[p - 2]
                            + w3 * dyrow[p - 3]
                            + w4 * dyrow[p - 4]
                        )
                    for p in range(4):
                        for t in range(p + 1):
                            acc[p] += w[o, i, t] * dyrow[p - t]
                    for p in range(l, lp):
                        for t in range(p - l + 1, k):
                            acc[p] += w[o, i, t] * dyrow[p - t]
                else:
                    for t in range(k):
                        wv = w[o, i, t]
                        for j in range(l):
                            acc[t + j] += wv * dyrow[j]
            for j in range(lp):
                dxp[bi, i, j] = acc[j]

    @njit(parallel=True, fastmath=True, cache=True)
    def _conv1d_grad_weights_nb(xp, dy, dw, db):
        b, ci, lp = xp.shape
        _, co, l = dy.shape
        k = dw.shape[2]
        for o in prange(co):
            for i in range(ci):
                for t in range(k):
                    acc = 0.0
                    for bi in range(b):
                        xrow = xp[bi, i]
                        dyrow = dy[bi, o]
                        for j in range(l):
                            acc += dyrow[j] * xrow[t + j]
                    dw[o, i, t] = acc
            acc_b = 0.0
            for bi in range(b):
                dyrow = dy[bi, o]
                for j in range(l):
                    acc_b += dyrow[j]
            db[o] = acc_b

    @njit(parallel=True, fastmath=True, cache=True)
    def _maxpool2_forward_nb(x, y, arg):
        b, c, l = x.shape
        lo = l // 2
        for bc in prange(b * c):
            bi = bc // c
            ch = bc % c
            xrow = x[bi, ch]
            for j in range(lo):
                a = xrow[2 * j]
                v = xrow[2 * j + 1]
                if v > a:
                    y[bi, ch, j] = v
                    arg[bi, ch, j] = 1
                else:
                    y[bi, ch, j] = a
                    arg[bi, ch, j] = 0

    @njit(parallel=True, fastmath=True, cache=True)
    def _maxpool2_backward_nb(dy, arg, dx):
        b, c, lo = dy.shape
        for bc in prange(b * c):
            bi = bc // c
            ch = bc % c
            for j in range(lo):
                dx[bi, ch, 2 * j + arg[bi, ch, j]] = dy[bi, ch, j]


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def conv1d_valid(xp: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of a padded input.

    xp: (B, Ci, Lp), w: (Co, Ci, k), bias: (Co,) -> (B, Co, Lp - k + 1).
    """
    xp, w, bias = _c(xp), _c(w), _c(bias)
    if _BACKEND == "numba":
        b, _, lp = xp.shape
        co, _, k = w.shape
        y = np.empty((b, co, lp - k + 1))
        _conv1d_valid_nb(xp, w, bias, y)
        return y
    return _conv1d_valid_np(xp, w, bias)


def conv1d_grad_input(dy: np.ndarray, w: np.ndarray, lp: int) -> np.ndarray:
    """Gradient w.r.t. the padded input, shape (B, Ci, lp)."""
    dy, w = _c(dy), _c(w)
    if _BACKEND == "numba":
        b = dy.shape[0]
        ci = w.shape[1]
        dxp = np.zeros((b, ci, lp))
        _conv1d_grad_input_nb(dy, w, dxp)
        return dxp
    return _conv1d_grad_input_np(dy, w, lp)


def conv1d_grad_weights(xp: np.ndarray, dy: np.ndarray, k: int):
    """Gradients w.r.t. kernel weights (Co, Ci, k) and bias (Co,)."""
    xp, dy = _c(xp), _c(dy)
    if _BACKEND == "numba":
        co = dy.shape[1]
        ci = xp.shape[1]
        dw = np.empty((co, ci, k))
        db = np.empty(co)
        _conv1d_grad_weights_nb(xp, dy, dw, db)
        return dw, db
    return _conv1d_grad_weights_np(xp, dy, k)


def maxpool2_forward(x: np.ndarray):
    """Factor-2 max pool; returns (values, argmax offsets in {0,1})."""
    x = _c(x)
    if _BACKEND == "numba":
        b, c, l = x.shape
        y = np.empty((b, c, l // 2))
        arg = np.empty((b, c, l // 2), dtype=np.uint8)
        _maxpool2_forward_nb(x, y, arg)
        return y, arg
    return _maxpool2_forward_np(x)


def maxpool2_backward(dy: np.ndarray, arg: np.ndarray) -> np.ndarray:
    """Route pooled gradients back to the argmax positions."""
    dy = _c(dy)
    if _BACKEND == "numba":
        b, c, lo = dy.shape
        dx = np.zeros((b, c, 2 * lo))
        _maxpool2_backward_nb(dy, np.ascontiguousarray(arg), dx)
        return dx
    return _maxpool2_backward_np(dy, arg)
