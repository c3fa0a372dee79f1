"""Backend dispatch for the numeric hot kernels.

The environment flag ``MARKERPACK_BACKEND`` selects the implementation:
``numba`` (jitted loops, the default when numba imports) or ``numpy``
(vectorized fallback). Both expose the same functions; see
``benchmarks/backend_bench.py`` for a head-to-head comparison.
"""
from __future__ import annotations

import importlib
import os

from ..errors import ConfigError

ENV_FLAG = "MARKERPACK_BACKEND"

_KERNEL_NAMES = (
    "matmul",
    "matmul_nt",
    "matmul_tn",
    "gelu",
    "gelu_backward",
    "layernorm_forward",
    "layernorm_backward",
    "masked_attention_forward",
    "masked_attention_backward",
)


def get_backend(name: str):
    """Import a kernel backend module by name ('numba' or 'numpy')."""
    if name not in ("numba", "numpy"):
        raise ConfigError(f"unknown kernel backend {name!r}; use 'numba' or 'numpy'")
    return importlib.import_module(f".{name}_backend", __package__)


def _select():
    requested = os.environ.get(ENV_FLAG, "").strip().lower()
    if requested in ("", "auto"):
        try:
            return get_backend("numba")
        except ImportError:
            return get_backend("numpy")
    return get_backend(requested)


_impl = _select()
BACKEND = _impl.NAME

matmul = _impl.matmul
matmul_nt = _impl.matmul_nt
matmul_tn = _impl.matmul_tn
gelu = _impl.gelu
gelu_backward = _impl.gelu_backward
layernorm_forward = _impl.layernorm_forward
layernorm_backward = _impl.layernorm_backward
masked_attention_forward = _impl.masked_attention_forward
masked_attention_backward = _impl.masked_attention_backward


def warmup() -> None:
    """Trigger jit compilation on tiny inputs so timings stay honest."""
    import numpy as np

    x = np.ones((2, 4), dtype=np.float64)
    w = np.ones((4, 4), dtype=np.float64)
    vis = np.ones((2, 2), dtype=bool)
    matmul(x, w)
    matmul_nt(x, x)
    matmul_tn(x, x)
    g = gelu(x)
    gelu_backward(x, g)
    y, mean, rstd = layernorm_forward(x, np.ones(4), np.zeros(4), 1e-5)
    layernorm_backward(y, x, np.ones(4), mean, rstd)
    ctx, probs = masked_attention_forward(x, x, x, vis, 2)
    masked_attention_backward(ctx, probs, x, x, x, vis, 2)
