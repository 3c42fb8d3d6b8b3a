"""Row-wise kernels for the memory-bound ops (compiled with numba).

Each kernel works on a 2-D ``rows x width`` view and fills caller-provided
output arrays, so one pass over memory replaces several numpy temporaries.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def layer_norm_forward(x, w, b, eps, out, xhat, rstd):
    n, d = x.shape
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += x[i, j]
        mu = s / d
        v = 0.0
        for j in range(d):
            c = x[i, j] - mu
            v += c * c
        r = 1.0 / np.sqrt(v / d + eps)
        rstd[i] = r
        for j in range(d):
            h = (x[i, j] - mu) * r
            xhat[i, j] = h
            out[i, j] = h * w[j] + b[j]


@numba.njit(cache=True)
def layer_norm_backward(g, xhat, rstd, w, gx, gw, gb):
    n, d = g.shape
    for j in range(d):
        gw[j] = 0.0
        gb[j] = 0.0
    for i in range(n):
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            gh = g[i, j] * w[j]
            s1 += gh
            s2 += gh * xhat[i, j]
            gw[j] += g[i, j] * xhat[i, j]
            gb[j] += g[i, j]
        s1 /= d
        s2 /= d
        r = rstd[i]
        for j in range(d):
            gx[i, j] = r * (g[i, j] * w[j] - s1 - xhat[i, j] * s2)


@numba.njit(cache=True)
def softmax_forward(x, out):
    n, d = x.shape
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            e = np.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(d):
            out[i, j] *= inv


@numba.njit(cache=True)
def softmax_backward(g, y, gx):
    n, d = g.shape
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += g[i, j] * y[i, j]
        for j in range(d):
            gx[i, j] = y[i, j] * (g[i, j] - s)


@numba.njit(cache=True)
def gelu_forward(x, out, slope):
    """Tanh-form GELU of a flat array; ``slope`` receives the derivative."""
    c = np.sqrt(2.0 / np.pi)
    for i in range(x.size):
        v = x[i]
        u = c * (v + 0.044715 * v * v * v)
        t = np.tanh(u)
        out[i] = 0.5 * v * (1.0 + t)
        slope[i] = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * v * v)
