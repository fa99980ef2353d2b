"""Dense numeric kernel: text-CNN forward ops, their exact gradients, and a
finite-difference checker.

Everything is 64-bit floating point and purely functional. The hot loops are
numba-compiled with a fixed, sequential accumulation order, so results are
bit-identical to a straightforward Python triple loop over the same indices.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from numba import njit

__all__ = [
    "conv_valid",
    "relu",
    "max_pool_argmax",
    "affine",
    "sigmoid",
    "concat",
    "vjp",
    "finite_diff_check",
]

# Smallest/largest doubles strictly inside (0, 1); sigmoid output is clamped
# to this range so cross-entropy logs stay finite.
_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-d matrix, got shape {a.shape}")
    return a


def _as_vector(a, name: str) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {a.shape}")
    return a


# ---------------------------------------------------------------------------
# compiled kernels (sequential accumulation, no fastmath)
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _conv_valid_k(s, m, b):
    n, k = s.shape
    d = m.shape[0]
    out = np.empty(n - d + 1, np.float64)
    for t in range(n - d + 1):
        acc = b
        for i in range(d):
            for j in range(k):
                acc += m[i, j] * s[t + i, j]
        out[t] = acc
    return out


@njit(cache=True, nogil=True)
def _conv_valid_vjp_k(s, m, g):
    n, k = s.shape
    d = m.shape[0]
    ds = np.zeros((n, k), np.float64)
    dm = np.zeros((d, k), np.float64)
    db = 0.0
    for t in range(g.shape[0]):
        gt = g[t]
        db += gt
        for i in range(d):
            for j in range(k):
                ds[t + i, j] += gt * m[i, j]
                dm[i, j] += gt * s[t + i, j]
    return ds, dm, db


@njit(cache=True, nogil=True)
def _affine_k(w, x, b):
    out_dim, in_dim = w.shape
    y = np.empty(out_dim, np.float64)
    for o in range(out_dim):
        acc = b[o]
        for i in range(in_dim):
            acc += w[o, i] * x[i]
        y[o] = acc
    return y


@njit(cache=True, nogil=True)
def _affine_vjp_k(w, x, g):
    out_dim, in_dim = w.shape
    dw = np.empty((out_dim, in_dim), np.float64)
    dx = np.zeros(in_dim, np.float64)
    for o in range(out_dim):
        go = g[o]
        for i in range(in_dim):
            dw[o, i] = go * x[i]
            dx[i] += w[o, i] * go
    return dw, dx


# ---------------------------------------------------------------------------
# forward ops
# ---------------------------------------------------------------------------

def conv_valid(s, m, b: float) -> np.ndarray:
    """Valid 2-d convolution of one filter over a token matrix.

    Entry t is sum(m * s[t:t+d]) + b for t = 0..n-d, pre-activation.
    """
    s = _as_matrix(s, "s")
    m = _as_matrix(m, "m")
    n, k = s.shape
    d, km = m.shape
    if km != k:
        raise ValueError(f"filter width {km} != input width {k}")
    if d < 1:
        raise ValueError("filter height must be >= 1")
    if n < d:
        raise ValueError(f"input has {n} rows but filter height is {d}; pad the input")
    return _conv_valid_k(s, m, float(b))


def relu(v) -> np.ndarray:
    """Elementwise max(x, 0)."""
    v = _as_vector(v, "v")
    return np.maximum(v, 0.0)


def max_pool_argmax(h) -> tuple[float, int]:
    """Maximum entry and the index of its first occurrence."""
    h = _as_vector(h, "h")
    if h.size == 0:
        raise ValueError("max_pool_argmax on empty vector")
    idx = int(np.argmax(h))
    return float(h[idx]), idx


def affine(w, x, b) -> np.ndarray:
    """y = w @ x + b."""
    w = _as_matrix(w, "w")
    x = _as_vector(x, "x")
    b = _as_vector(b, "b")
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"w has {w.shape[1]} columns but x has length {x.shape[0]}")
    if w.shape[0] != b.shape[0]:
        raise ValueError(f"w has {w.shape[0]} rows but b has length {b.shape[0]}")
    return _affine_k(w, x, b)


def sigmoid(v) -> np.ndarray:
    """Numerically stable logistic function, output strictly inside (0, 1)."""
    v = _as_vector(v, "v")
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return np.clip(out, _SIG_LO, _SIG_HI)


def concat(parts: Sequence) -> np.ndarray:
    """Join vectors in order; empty sequence yields an empty vector."""
    vs = [_as_vector(p, "part") for p in parts]
    if not vs:
        return np.empty(0, np.float64)
    return np.concatenate(vs)


# ---------------------------------------------------------------------------
# vector-Jacobian products
# ---------------------------------------------------------------------------

def _vjp_conv_valid(inputs, g):
    s = _as_matrix(inputs[0], "s")
    m = _as_matrix(inputs[1], "m")
    g = _as_vector(g, "upstream")
    if g.shape[0] != s.shape[0] - m.shape[0] + 1:
        raise ValueError("upstream length does not match conv output length")
    ds, dm, db = _conv_valid_vjp_k(s, m, g)
    return ds, dm, db


def _vjp_relu(inputs, g):
    v = _as_vector(inputs[0], "v")
    g = _as_vector(g, "upstream")
    if g.shape != v.shape:
        raise ValueError("upstream shape does not match relu input")
    # derivative at exactly 0 is 0
    return (np.where(v > 0.0, g, 0.0),)


def _vjp_max_pool(inputs, g):
    h = _as_vector(inputs[0], "h")
    if h.size == 0:
        raise ValueError("max_pool_argmax on empty vector")
    g = float(np.asarray(g))
    dh = np.zeros_like(h)
    dh[int(np.argmax(h))] = g
    return (dh,)


def _vjp_affine(inputs, g):
    w = _as_matrix(inputs[0], "w")
    x = _as_vector(inputs[1], "x")
    g = _as_vector(g, "upstream")
    if g.shape[0] != w.shape[0]:
        raise ValueError("upstream length does not match affine output")
    dw, dx = _affine_vjp_k(w, x, g)
    return dw, dx, g.copy()


def _vjp_sigmoid(inputs, g):
    v = _as_vector(inputs[0], "v")
    g = _as_vector(g, "upstream")
    if g.shape != v.shape:
        raise ValueError("upstream shape does not match sigmoid input")
    y = sigmoid(v)
    return (g * y * (1.0 - y),)


def _vjp_concat(inputs, g):
    parts = [_as_vector(p, "part") for p in inputs[0]]
    g = _as_vector(g, "upstream")
    total = sum(p.shape[0] for p in parts)
    if g.shape[0] != total:
        raise ValueError("upstream length does not match concatenated length")
    grads = []
    off = 0
    for p in parts:
        grads.append(g[off:off + p.shape[0]].copy())
        off += p.shape[0]
    return (tuple(grads),)


_VJP_TABLE = {
    "conv_valid": _vjp_conv_valid,
    "relu": _vjp_relu,
    "max_pool_argmax": _vjp_max_pool,
    "affine": _vjp_affine,
    "sigmoid": _vjp_sigmoid,
    "concat": _vjp_concat,
}


def vjp(op, inputs: tuple, upstream):
    """Exact vector-Jacobian product of one forward op.

    ``op`` is the op name (or the op function itself), ``inputs`` the tuple of
    forward inputs, ``upstream`` the gradient with respect to the op's output.
    Returns one gradient per differentiable input, shapes matching the inputs.
    For max_pool_argmax the whole gradient routes to the stored argmax index;
    for relu the gradient is zero wherever the input was <= 0.
    """
    name = op if isinstance(op, str) else getattr(op, "__name__", None)
    if name not in _VJP_TABLE:
        raise ValueError(f"no vjp registered for op {op!r}")
    return _VJP_TABLE[name](inputs, upstream)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def finite_diff_check(fn: Callable, params: Sequence[np.ndarray], step: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    ``fn(params)`` must return ``(value, grads)`` where ``value`` is a scalar
    and ``grads`` has one array per parameter, same shapes. Returns the worst
    relative error |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
    over every parameter coordinate.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = [np.array(p, dtype=np.float64) for p in params]
    value, grads = fn(params)
    if not math.isfinite(float(value)):
        raise ValueError(f"function value is not finite: {value}")
    if len(grads) != len(params):
        raise ValueError("fn returned a gradient count different from the parameter count")
    worst = 0.0
    for pi, p in enumerate(params):
        grad = np.asarray(grads[pi], dtype=np.float64)
        if grad.shape != p.shape:
            raise ValueError(f"gradient {pi} has shape {grad.shape}, expected {p.shape}")
        flat = p.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + step
            up, _ = fn(params)
            flat[i] = orig - step
            down, _ = fn(params)
            flat[i] = orig
            if not (math.isfinite(float(up)) and math.isfinite(float(down))):
                raise ValueError("perturbed function value is not finite")
            numeric = (float(up) - float(down)) / (2.0 * step)
            analytic = float(gflat[i])
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
