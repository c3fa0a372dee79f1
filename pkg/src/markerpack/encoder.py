"""Deterministic float64 transformer encoder over encoding layouts.

Slot embeddings are token embedding plus position embedding (so marker
slots inherit their span's boundary positions), attention keys outside a
slot's visibility row are excluded from the softmax support entirely,
and the residual stack uses pre-layer normalization with no dropout.
Everything is 64-bit and seeded: the packing-equivalence and gradient
oracles depend on it.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from . import kernels as K
from .errors import ConfigError, DataError, LayoutError, NumericError
from .layout import EncodingLayout, validate_layout

LN_EPS = 1e-5
CHECKPOINT_VERSION = 1

_LAYER_TENSORS = (
    ("ln1_g", "H"), ("ln1_b", "H"),
    ("Wq", "HH"), ("bq", "H"),
    ("Wk", "HH"), ("bk", "H"),
    ("Wv", "HH"), ("bv", "H"),
    ("Wo", "HH"), ("bo", "H"),
    ("ln2_g", "H"), ("ln2_b", "H"),
    ("Wf1", "HF"), ("bf1", "F"),
    ("Wf2", "FH"), ("bf2", "H"),
)


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden_dim: int
    num_layers: int
    num_heads: int
    ffn_dim: int
    max_position: int
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("vocab_size", "hidden_dim", "num_heads", "ffn_dim", "max_position"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.num_layers < 0:
            raise ConfigError("num_layers must be >= 0")
        if self.hidden_dim % self.num_heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by "
                f"num_heads {self.num_heads}"
            )


@dataclass
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


@dataclass
class SlotOutputs:
    """Final-layer hidden vector per slot, aligned with the layout."""

    hidden: np.ndarray


class TaskHead(Protocol):
    """Classification head driving training; see heads.NerTaskHead/ReTaskHead."""

    def tensors(self) -> dict[str, np.ndarray]: ...

    def loss_and_slot_grads(
        self, hidden: np.ndarray, layout: EncodingLayout, item
    ) -> tuple[float, int, np.ndarray, dict[str, np.ndarray]]: ...


def tensor_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Checkpoint tensor inventory, in declared (file) order."""
    H, F = config.hidden_dim, config.ffn_dim
    dims = {"H": (H,), "HH": (H, H), "HF": (H, F), "F": (F,), "FH": (F, H)}
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (config.vocab_size, H),
        "pos_emb": (config.max_position + 1, H),
    }
    for li in range(config.num_layers):
        for name, kind in _LAYER_TENSORS:
            shapes[f"layer{li}.{name}"] = dims[kind]
    return shapes


def init_params(config: EncoderConfig) -> EncoderParams:
    """Seeded initialization: N(0, 0.02) weights, zero biases, unit gains."""
    rng = np.random.default_rng(config.seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(config).items():
        base = name.rsplit(".", 1)[-1]
        if base.startswith("b"):
            tensors[name] = np.zeros(shape, dtype=np.float64)
        elif base in ("ln1_g", "ln2_g"):
            tensors[name] = np.ones(shape, dtype=np.float64)
        elif base in ("ln1_b", "ln2_b"):
            tensors[name] = np.zeros(shape, dtype=np.float64)
        else:
            tensors[name] = rng.normal(0.0, 0.02, size=shape)
    return EncoderParams(config, tensors)


def prompt_init_markers(
    params: EncoderParams, marker_to_word: Mapping[int, int]
) -> EncoderParams:
    """Copy existing word embedding rows onto marker token rows."""
    vocab = params.config.vocab_size
    for marker, word in marker_to_word.items():
        if not (0 <= marker < vocab and 0 <= word < vocab):
            raise ConfigError(
                f"marker/word id pair ({marker}, {word}) outside vocabulary "
                f"of size {vocab}"
            )
    out = params.copy()
    for marker, word in marker_to_word.items():
        out.tensors["tok_emb"][marker] = params.tensors["tok_emb"][word]
    return out


def _check_layout(params: EncoderParams, layout: EncodingLayout) -> None:
    violations = validate_layout(layout)
    if violations:
        raise LayoutError(
            "layout rejected:\n" + "\n".join(violations[:20])
            + ("" if len(violations) <= 20 else f"\n... {len(violations) - 20} more")
        )
    if layout.num_slots and int(layout.slot_position_ids.max()) > params.config.max_position:
        raise ConfigError(
            f"position id {int(layout.slot_position_ids.max())} exceeds "
            f"max_position {params.config.max_position}"
        )
    if layout.num_slots and int(layout.slot_token_ids.max()) >= params.config.vocab_size:
        raise ConfigError(
            f"token id {int(layout.slot_token_ids.max())} exceeds vocabulary "
            f"of size {params.config.vocab_size}"
        )


def _forward(
    params: EncoderParams, layout: EncodingLayout, keep_cache: bool
) -> tuple[np.ndarray, list[tuple]]:
    t = params.tensors
    cfg = params.config
    vis = layout.visibility
    nh = cfg.num_heads
    x = t["tok_emb"][layout.slot_token_ids] + t["pos_emb"][layout.slot_position_ids]
    caches: list[tuple] = []
    for li in range(cfg.num_layers):
        p = f"layer{li}."
        h1, mu1, rstd1 = K.layernorm_forward(x, t[p + "ln1_g"], t[p + "ln1_b"], LN_EPS)
        q = K.matmul(h1, t[p + "Wq"]) + t[p + "bq"]
        k = K.matmul(h1, t[p + "Wk"]) + t[p + "bk"]
        v = K.matmul(h1, t[p + "Wv"]) + t[p + "bv"]
        ctx, probs = K.masked_attention_forward(q, k, v, vis, nh)
        xa = x + (K.matmul(ctx, t[p + "Wo"]) + t[p + "bo"])
        h2, mu2, rstd2 = K.layernorm_forward(xa, t[p + "ln2_g"], t[p + "ln2_b"], LN_EPS)
        f1 = K.matmul(h2, t[p + "Wf1"]) + t[p + "bf1"]
        a1 = K.gelu(f1)
        x_out = xa + (K.matmul(a1, t[p + "Wf2"]) + t[p + "bf2"])
        if not np.all(np.isfinite(x_out)):
            raise NumericError(f"non-finite activations after layer {li}")
        if keep_cache:
            caches.append((x, h1, mu1, rstd1, q, k, v, probs, ctx, xa, h2, mu2, rstd2, f1, a1))
        x = x_out
    return x, caches


def encode(params: EncoderParams, layout: EncodingLayout, validate: bool = True) -> SlotOutputs:
    """Contextual slot vectors for a layout; rejects invalid layouts."""
    if validate:
        _check_layout(params, layout)
    hidden, _ = _forward(params, layout, keep_cache=False)
    return SlotOutputs(hidden=hidden)


def zero_grads(params: EncoderParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.tensors.items()}


def _backward_into(
    grads: dict[str, np.ndarray],
    params: EncoderParams,
    layout: EncodingLayout,
    caches: list[tuple],
    d_out: np.ndarray,
) -> None:
    t = params.tensors
    cfg = params.config
    vis = layout.visibility
    nh = cfg.num_heads
    dx = d_out
    for li in range(cfg.num_layers - 1, -1, -1):
        p = f"layer{li}."
        x, h1, mu1, rstd1, q, k, v, probs, ctx, xa, h2, mu2, rstd2, f1, a1 = caches[li]
        # feed-forward branch
        df2 = dx
        grads[p + "Wf2"] += K.matmul_tn(a1, df2)
        grads[p + "bf2"] += df2.sum(axis=0)
        df1 = K.gelu_backward(f1, K.matmul_nt(df2, t[p + "Wf2"]))
        grads[p + "Wf1"] += K.matmul_tn(h2, df1)
        grads[p + "bf1"] += df1.sum(axis=0)
        dh2 = K.matmul_nt(df1, t[p + "Wf1"])
        dxa, dg2, db2 = K.layernorm_backward(dh2, xa, t[p + "ln2_g"], mu2, rstd2)
        grads[p + "ln2_g"] += dg2
        grads[p + "ln2_b"] += db2
        dxa = dxa + dx
        # attention branch
        dattn = dxa
        grads[p + "Wo"] += K.matmul_tn(ctx, dattn)
        grads[p + "bo"] += dattn.sum(axis=0)
        dctx = K.matmul_nt(dattn, t[p + "Wo"])
        dq, dk, dv = K.masked_attention_backward(dctx, probs, q, k, v, vis, nh)
        grads[p + "Wq"] += K.matmul_tn(h1, dq)
        grads[p + "bq"] += dq.sum(axis=0)
        grads[p + "Wk"] += K.matmul_tn(h1, dk)
        grads[p + "bk"] += dk.sum(axis=0)
        grads[p + "Wv"] += K.matmul_tn(h1, dv)
        grads[p + "bv"] += dv.sum(axis=0)
        dh1 = (
            K.matmul_nt(dq, t[p + "Wq"])
            + K.matmul_nt(dk, t[p + "Wk"])
            + K.matmul_nt(dv, t[p + "Wv"])
        )
        dx_ln, dg1, db1 = K.layernorm_backward(dh1, x, t[p + "ln1_g"], mu1, rstd1)
        grads[p + "ln1_g"] += dg1
        grads[p + "ln1_b"] += db1
        dx = dx_ln + dxa
    np.add.at(grads["tok_emb"], layout.slot_token_ids, dx)
    np.add.at(grads["pos_emb"], layout.slot_position_ids, dx)


def loss_and_grad(
    params: EncoderParams, batch: Sequence, head: TaskHead
) -> tuple[float, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Mean per-instance loss and analytic gradients for encoder and head.

    Each batch item carries a ``layout`` and its supervision; the head
    turns slot outputs into summed instance losses and slot gradients.
    """
    total_loss = 0.0
    total_n = 0
    pending: list[tuple[EncodingLayout, list[tuple], np.ndarray]] = []
    head_grads: dict[str, np.ndarray] = {}
    for item in batch:
        hidden, caches = _forward(params, item.layout, keep_cache=True)
        loss_sum, n, d_hidden, hg = head.loss_and_slot_grads(hidden, item.layout, item)
        total_loss += loss_sum
        total_n += n
        pending.append((item.layout, caches, d_hidden))
        for name, g in hg.items():
            if name in head_grads:
                head_grads[name] += g
            else:
                head_grads[name] = g.copy()
    if total_n == 0:
        raise DataError("batch contains no supervised instances")
    scale = 1.0 / total_n
    enc_grads = zero_grads(params)
    for layout, caches, d_hidden in pending:
        _backward_into(enc_grads, params, layout, caches, d_hidden * scale)
    for name in head_grads:
        head_grads[name] *= scale
    return total_loss * scale, enc_grads, head_grads


def _loss_only(params: EncoderParams, batch: Sequence, head: TaskHead) -> float:
    total_loss = 0.0
    total_n = 0
    for item in batch:
        hidden, _ = _forward(params, item.layout, keep_cache=False)
        loss_sum, n, _, _ = head.loss_and_slot_grads(hidden, item.layout, item)
        total_loss += loss_sum
        total_n += n
    return total_loss / total_n


def finite_diff_check(
    params: EncoderParams,
    batch: Sequence,
    head: TaskHead,
    epsilon: float = 1e-5,
    sample: int = 200,
    seed: int = 0,
    zero_floor: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples coordinates uniformly across encoder and head tensors.
    Coordinates where both gradients sit below ``zero_floor`` count as
    exact (the 0/0 convention, widened to cover round-off noise).
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    _, enc_grads, head_grads = loss_and_grad(params, batch, head)
    stores = [("enc", params.tensors, enc_grads), ("head", head.tensors(), head_grads)]
    universe: list[tuple[int, str, int]] = []
    for si, (_, tensors, _) in enumerate(stores):
        for name in sorted(tensors):
            universe.append((si, name, tensors[name].size))
    total = sum(size for _, _, size in universe)
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(sample, total), replace=False)

    worst = 0.0
    for flat in sorted(int(p) for p in picks):
        for si, name, size in universe:
            if flat < size:
                break
            flat -= size
        tensors = stores[si][1]
        grads = stores[si][2]
        arr = tensors[name]
        orig = arr.flat[flat]
        arr.flat[flat] = orig + epsilon
        lp = _loss_only(params, batch, head)
        arr.flat[flat] = orig - epsilon
        lm = _loss_only(params, batch, head)
        arr.flat[flat] = orig
        numeric = (lp - lm) / (2.0 * epsilon)
        analytic = grads[name].flat[flat]
        denom = max(abs(analytic), abs(numeric))
        if denom == 0.0 or denom < zero_floor:
            continue
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def save_params(params: EncoderParams, path) -> None:
    """Checkpoint: npz archive with a JSON header and float64 tensors."""
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
        "tensor_order": list(tensor_shapes(params.config)),
    }
    np.savez(path, __meta__=np.array(json.dumps(meta)), **params.tensors)


def load_params(path) -> EncoderParams:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"][()]))
        if meta["format_version"] != CHECKPOINT_VERSION:
            raise ConfigError(
                f"checkpoint format {meta['format_version']} unsupported"
            )
        config = EncoderConfig(**meta["config"])
        tensors = {name: data[name].astype(np.float64) for name in meta["tensor_order"]}
    for name, shape in tensor_shapes(config).items():
        if tensors[name].shape != shape:
            raise ConfigError(f"checkpoint tensor {name} has shape {tensors[name].shape}, expected {shape}")
    return EncoderParams(config, tensors)
