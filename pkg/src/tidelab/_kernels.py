"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin.  ``TIDELAB_NUMBA=0`` in the environment
forces the numpy path; otherwise numba is used if it imports.  Both paths are
exposed as ``<name>_numpy`` / ``<name>_numba`` so tests and the benchmark can
call them side by side, and ``<name>`` is bound to the selected one.
"""
from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("TIDELAB_NUMBA", "1").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off")


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# layer norm


def layer_norm_fwd_numpy(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gain + bias, xhat, inv[:, 0]


def layer_norm_bwd_numpy(g, xhat, inv, gain):
    d = xhat.shape[1]
    gg = (g * xhat).sum(axis=0)
    gb = g.sum(axis=0)
    gx_hat = g * gain
    gx = (inv[:, None] / d) * (
        d * gx_hat
        - gx_hat.sum(axis=1, keepdims=True)
        - xhat * (gx_hat * xhat).sum(axis=1, keepdims=True)
    )
    return gx, gg, gb


def _layer_norm_fwd_loop(x, gain, bias, eps):
    n, d = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    inv = np.empty(n)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        s = 1.0 / np.sqrt(var + eps)
        inv[i] = s
        for j in range(d):
            z = (x[i, j] - mu) * s
            xhat[i, j] = z
            y[i, j] = z * gain[j] + bias[j]
    return y, xhat, inv


def _layer_norm_bwd_loop(g, xhat, inv, gain):
    n, d = g.shape
    gx = np.empty_like(g)
    gg = np.zeros(d)
    gb = np.zeros(d)
    for i in range(n):
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            gh = g[i, j] * gain[j]
            s1 += gh
            s2 += gh * xhat[i, j]
            gg[j] += g[i, j] * xhat[i, j]
            gb[j] += g[i, j]
        k = inv[i] / d
        for j in range(d):
            gx[i, j] = k * (d * g[i, j] * gain[j] - s1 - xhat[i, j] * s2)
    return gx, gg, gb


layer_norm_fwd_numba = _njit(_layer_norm_fwd_loop)
layer_norm_bwd_numba = _njit(_layer_norm_bwd_loop)


# --------------------------------------------------------------------------
# window gather: rows of values[series, anchor - before : anchor + after]


def gather_windows_numpy(values, series, anchors, before, after):
    offs = np.arange(-before, after)
    return values[series[:, None], anchors[:, None] + offs[None, :]]


def _gather_windows_loop(values, series, anchors, before, after):
    b = series.shape[0]
    w = before + after
    out = np.empty((b, w))
    for i in range(b):
        s = series[i]
        start = anchors[i] - before
        for j in range(w):
            out[i, j] = values[s, start + j]
    return out


gather_windows_numba = _njit(_gather_windows_loop)


# --------------------------------------------------------------------------
# LDS roll-out:  h[t+1] = A h[t] + drive[t],  y[t] = C h[t] + feed[t]
# drive folds B x_t + seasonal input + transition noise; feed folds D x_t + obs noise.


def lds_rollout_numpy(A, C, drive, feed):
    T = drive.shape[0]
    d = A.shape[0]
    h = np.zeros((T + 1, d))
    for t in range(T):
        h[t + 1] = A @ h[t] + drive[t]
    y = h[:T] @ C.T + feed
    return h, y


def _lds_rollout_loop(A, C, drive, feed):
    T = drive.shape[0]
    d = A.shape[0]
    m = C.shape[0]
    h = np.zeros((T + 1, d))
    y = np.empty((T, m))
    for t in range(T):
        for i in range(d):
            acc = drive[t, i]
            for j in range(d):
                acc += A[i, j] * h[t, j]
            h[t + 1, i] = acc
        for r in range(m):
            acc = feed[t, r]
            for j in range(d):
                acc += C[r, j] * h[t, j]
            y[t, r] = acc
    return h, y


lds_rollout_numba = _njit(_lds_rollout_loop)


# --------------------------------------------------------------------------
# lagged sum  out[t] = sum_{i=1}^{min(t, k)} K[i-1] @ x[t-i]   (0-based t)


def lagged_sum_numpy(K, x):
    T = x.shape[0]
    k = K.shape[0]
    out = np.zeros((T, K.shape[1]))
    for i in range(1, min(k, T - 1) + 1):
        out[i:] += x[: T - i] @ K[i - 1].T
    return out


def _lagged_sum_loop(K, x):
    T, n = x.shape
    k, m, _ = K.shape
    out = np.zeros((T, m))
    for t in range(T):
        top = min(t, k)
        for i in range(1, top + 1):
            for r in range(m):
                acc = 0.0
                for c in range(n):
                    acc += K[i - 1, r, c] * x[t - i, c]
                out[t, r] += acc
    return out


lagged_sum_numba = _njit(_lagged_sum_loop)


if USE_NUMBA:
    layer_norm_fwd = layer_norm_fwd_numba
    layer_norm_bwd = layer_norm_bwd_numba
    gather_windows = gather_windows_numba
    lds_rollout = lds_rollout_numba
else:
    layer_norm_fwd = layer_norm_fwd_numpy
    layer_norm_bwd = layer_norm_bwd_numpy
    gather_windows = gather_windows_numpy
    lds_rollout = lds_rollout_numpy
# per-lag matmuls go through BLAS and beat the scalar loop, so numpy serves both backends
lagged_sum = lagged_sum_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
