"""Numba-jitted hot kernels (default backend).

Every reduction runs in a fixed index order that depends only on the
slots actually involved, never on array shape, so per-slot results are
bit-identical whether a marker pair is encoded alone or packed among
hundreds of others. That exactness is what the packing-equivalence
checks lean on; keep the loops boring.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

NAME = "numba"

_JIT = dict(cache=True, nogil=True, fastmath=False)

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit(**_JIT)
def matmul(a, b):
    m, kk = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for k in range(kk):
            aik = a[i, k]
            for j in range(n):
                out[i, j] += aik * b[k, j]
    return out


@njit(**_JIT)
def matmul_nt(a, b):
    m, kk = a.shape
    n = b.shape[0]
    out = np.empty((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for k in range(kk):
                acc += a[i, k] * b[j, k]
            out[i, j] = acc
    return out


@njit(**_JIT)
def matmul_tn(a, b):
    kk, m = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    for k in range(kk):
        for i in range(m):
            aki = a[k, i]
            for j in range(n):
                out[i, j] += aki * b[k, j]
    return out


@njit(**_JIT)
def gelu(x):
    out = np.empty_like(x)
    flat_x = x.ravel()
    flat_o = out.ravel()
    for i in range(flat_x.size):
        v = flat_x[i]
        flat_o[i] = 0.5 * v * (1.0 + math.erf(v * _INV_SQRT2))
    return out


@njit(**_JIT)
def gelu_backward(x, dy):
    out = np.empty_like(x)
    flat_x = x.ravel()
    flat_d = dy.ravel()
    flat_o = out.ravel()
    for i in range(flat_x.size):
        v = flat_x[i]
        cdf = 0.5 * (1.0 + math.erf(v * _INV_SQRT2))
        pdf = math.exp(-0.5 * v * v) * _INV_SQRT_2PI
        flat_o[i] = flat_d[i] * (cdf + v * pdf)
    return out


@njit(**_JIT)
def layernorm_forward(x, gamma, beta, eps):
    m, h = x.shape
    y = np.empty_like(x)
    mean = np.empty(m, dtype=np.float64)
    rstd = np.empty(m, dtype=np.float64)
    for i in range(m):
        s = 0.0
        for j in range(h):
            s += x[i, j]
        mu = s / h
        var = 0.0
        for j in range(h):
            d = x[i, j] - mu
            var += d * d
        var /= h
        r = 1.0 / math.sqrt(var + eps)
        mean[i] = mu
        rstd[i] = r
        for j in range(h):
            y[i, j] = (x[i, j] - mu) * r * gamma[j] + beta[j]
    return y, mean, rstd


@njit(**_JIT)
def layernorm_backward(dy, x, gamma, mean, rstd):
    m, h = x.shape
    dx = np.empty_like(x)
    dgamma = np.zeros(h, dtype=np.float64)
    dbeta = np.zeros(h, dtype=np.float64)
    for i in range(m):
        mu = mean[i]
        r = rstd[i]
        s1 = 0.0
        s2 = 0.0
        for j in range(h):
            xhat = (x[i, j] - mu) * r
            g = dy[i, j] * gamma[j]
            s1 += g
            s2 += g * xhat
            dgamma[j] += dy[i, j] * xhat
            dbeta[j] += dy[i, j]
        s1 /= h
        s2 /= h
        for j in range(h):
            xhat = (x[i, j] - mu) * r
            dx[i, j] = r * (dy[i, j] * gamma[j] - s1 - xhat * s2)
    return dx, dgamma, dbeta


@njit(**_JIT)
def masked_attention_forward(q, k, v, visibility, num_heads):
    slots, width = q.shape
    dim = width // num_heads
    scale = 1.0 / math.sqrt(dim)
    ctx = np.zeros((slots, width), dtype=np.float64)
    probs = np.zeros((num_heads, slots, slots), dtype=np.float64)
    for h in range(num_heads):
        off = h * dim
        for i in range(slots):
            hi = -np.inf
            for j in range(slots):
                if visibility[i, j]:
                    s = 0.0
                    for t in range(dim):
                        s += q[i, off + t] * k[j, off + t]
                    s *= scale
                    probs[h, i, j] = s
                    if s > hi:
                        hi = s
            if hi == -np.inf:
                continue
            z = 0.0
            for j in range(slots):
                if visibility[i, j]:
                    e = math.exp(probs[h, i, j] - hi)
                    probs[h, i, j] = e
                    z += e
            for j in range(slots):
                if visibility[i, j]:
                    p = probs[h, i, j] / z
                    probs[h, i, j] = p
                    for t in range(dim):
                        ctx[i, off + t] += p * v[j, off + t]
    return ctx, probs


@njit(**_JIT)
def masked_attention_backward(dctx, probs, q, k, v, visibility, num_heads):
    slots, width = q.shape
    dim = width // num_heads
    scale = 1.0 / math.sqrt(dim)
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    dprob_row = np.empty(slots, dtype=np.float64)
    for h in range(num_heads):
        off = h * dim
        for i in range(slots):
            acc = 0.0
            for j in range(slots):
                if visibility[i, j]:
                    dp = 0.0
                    for t in range(dim):
                        dp += dctx[i, off + t] * v[j, off + t]
                    dprob_row[j] = dp
                    acc += probs[h, i, j] * dp
            for j in range(slots):
                if visibility[i, j]:
                    p = probs[h, i, j]
                    ds = p * (dprob_row[j] - acc)
                    for t in range(dim):
                        dq[i, off + t] += ds * k[j, off + t] * scale
                        dk[j, off + t] += ds * q[i, off + t] * scale
                        dv[j, off + t] += p * dctx[i, off + t]
    return dq, dk, dv
