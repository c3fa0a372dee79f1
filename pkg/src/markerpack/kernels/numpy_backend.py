"""Pure-numpy reference implementations of the hot kernels.

Same signatures as the numba backend; selected via MARKERPACK_BACKEND=numpy.
Vectorized BLAS calls may reassociate sums, so results agree with the jit
backend to float64 rounding rather than bit-for-bit.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf

NAME = "numpy"

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b


def matmul_nt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b.T for row-major operands."""
    return a @ b.T


def matmul_tn(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a.T @ b for row-major operands."""
    return a.T @ b


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return dy * (cdf + x * pdf)


def layernorm_forward(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = x.mean(axis=1)
    var = ((x - mean[:, None]) ** 2).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    return xhat * gamma + beta, mean, rstd


def layernorm_backward(
    dy: np.ndarray,
    x: np.ndarray,
    gamma: np.ndarray,
    mean: np.ndarray,
    rstd: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = rstd[:, None] * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    return dx, dgamma, dbeta


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    slots, width = x.shape
    return x.reshape(slots, num_heads, width // num_heads).transpose(1, 0, 2)


def masked_attention_forward(
    q: np.ndarray, k: np.ndarray, v: np.ndarray, visibility: np.ndarray, num_heads: int
) -> tuple[np.ndarray, np.ndarray]:
    """Multi-head attention where invisible keys are excluded from the
    softmax support entirely (their probability is exactly zero)."""
    slots, width = q.shape
    dim = width // num_heads
    scale = 1.0 / np.sqrt(dim)
    q3, k3, v3 = _split_heads(q, num_heads), _split_heads(k, num_heads), _split_heads(v, num_heads)
    scores = (q3 @ k3.transpose(0, 2, 1)) * scale
    scores = np.where(visibility[None, :, :], scores, -np.inf)
    rowmax = scores.max(axis=2, keepdims=True)
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    probs = np.exp(scores - rowmax)
    denom = probs.sum(axis=2, keepdims=True)
    probs = probs / np.where(denom > 0.0, denom, 1.0)
    ctx = (probs @ v3).transpose(1, 0, 2).reshape(slots, width)
    return ctx, probs


def masked_attention_backward(
    dctx: np.ndarray,
    probs: np.ndarray,
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    visibility: np.ndarray,
    num_heads: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    slots, width = q.shape
    dim = width // num_heads
    scale = 1.0 / np.sqrt(dim)
    q3, k3, v3 = _split_heads(q, num_heads), _split_heads(k, num_heads), _split_heads(v, num_heads)
    d3 = _split_heads(dctx, num_heads)
    dv3 = probs.transpose(0, 2, 1) @ d3
    dprobs = d3 @ v3.transpose(0, 2, 1)
    # probs is zero off-support, so dscores vanishes there automatically
    dscores = probs * (dprobs - (probs * dprobs).sum(axis=2, keepdims=True))
    dq3 = (dscores @ k3) * scale
    dk3 = (dscores.transpose(0, 2, 1) @ q3) * scale
    merge = lambda h: h.transpose(1, 0, 2).reshape(slots, width)
    return merge(dq3), merge(dk3), merge(dv3)
