"""Span and pair features, classification heads, and training losses.

A span's feature is the concatenated outputs of its two floating
markers; optionally the boundary text-token outputs (T-Concat) are
concatenated as well. A pair's feature concatenates the two in-stream
subject marker outputs with the object's floating marker outputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels as K
from .errors import ConfigError, DataError
from .layout import EncodingLayout
from .spanspace import DirectedLabelSpace, Span

MARKER_ONLY = "marker_only"
MARKER_PLUS_TCONCAT = "marker_plus_tconcat"
TCONCAT_ONLY = "tconcat_only"
NER_MODES = (MARKER_ONLY, MARKER_PLUS_TCONCAT, TCONCAT_ONLY)

NONE_LABEL = "NONE"


@dataclass
class SpanRepr:
    """Marker feature (2·hidden) and optional boundary-token feature."""

    psi: Optional[np.ndarray]
    tconcat: Optional[np.ndarray] = None


@dataclass
class PairRepr:
    """[subject start marker; subject end marker; object start; object end]."""

    vec: np.ndarray


@dataclass
class Mlp:
    """Two-layer classifier with a smooth nonlinearity between."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[1]


def init_mlp(rng: np.random.Generator, in_dim: int, hidden_dim: int, out_dim: int) -> Mlp:
    return Mlp(
        W1=rng.normal(0.0, 0.02, size=(in_dim, hidden_dim)),
        b1=np.zeros(hidden_dim, dtype=np.float64),
        W2=rng.normal(0.0, 0.02, size=(hidden_dim, out_dim)),
        b2=np.zeros(out_dim, dtype=np.float64),
    )


def mlp_forward(x: np.ndarray, mlp: Mlp) -> tuple[np.ndarray, tuple]:
    if x.shape[1] != mlp.in_dim:
        raise ConfigError(
            f"classifier expects {mlp.in_dim} input features, got {x.shape[1]}"
        )
    f1 = K.matmul(x, mlp.W1) + mlp.b1
    a1 = K.gelu(f1)
    logits = K.matmul(a1, mlp.W2) + mlp.b2
    return logits, (x, f1, a1)


def mlp_backward(
    dlogits: np.ndarray, cache: tuple, mlp: Mlp
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    x, f1, a1 = cache
    grads = {
        "W2": K.matmul_tn(a1, dlogits),
        "b2": dlogits.sum(axis=0),
    }
    df1 = K.gelu_backward(f1, K.matmul_nt(dlogits, mlp.W2))
    grads["W1"] = K.matmul_tn(x, df1)
    grads["b1"] = df1.sum(axis=0)
    dx = K.matmul_nt(df1, mlp.W1)
    return dx, grads


@dataclass
class HeadParams:
    """Classifier bundle: NER head, its fast boundary-feature twin used as
    the first stage of two-stage prediction, and the relation plus
    auxiliary object-type heads."""

    ner: Optional[Mlp] = None
    stage1: Optional[Mlp] = None
    re: Optional[Mlp] = None
    aux: Optional[Mlp] = None
    ner_mode: str = MARKER_PLUS_TCONCAT

    def tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name in ("ner", "stage1", "re", "aux"):
            mlp = getattr(self, name)
            if mlp is not None:
                for p in ("W1", "b1", "W2", "b2"):
                    out[f"{name}.{p}"] = getattr(mlp, p)
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], ner_mode: str) -> "HeadParams":
        head = cls(ner_mode=ner_mode)
        for name in ("ner", "stage1", "re", "aux"):
            if f"{name}.W1" in tensors:
                setattr(
                    head,
                    name,
                    Mlp(*(tensors[f"{name}.{p}"] for p in ("W1", "b1", "W2", "b2"))),
                )
        return head


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed cross-entropy over rows plus the gradient w.r.t. logits."""
    n, c = logits.shape
    if np.any(targets < 0) or np.any(targets >= c):
        raise DataError(f"label id outside 0..{c - 1}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.sum(logz - shifted[np.arange(n), targets]))
    dlogits = softmax(logits)
    dlogits[np.arange(n), targets] -= 1.0
    return loss, dlogits


def span_repr(
    outputs,
    layout: EncodingLayout,
    span: Span,
    want_tconcat: bool = True,
) -> SpanRepr:
    """Feature of one span from its marker slots (and boundary text slots)."""
    hidden = outputs.hidden
    s_slot, e_slot = layout.marker_slots(span)
    psi = np.concatenate([hidden[s_slot], hidden[e_slot]])
    tconcat = None
    if want_tconcat:
        tconcat = np.concatenate(
            [hidden[layout.text_slot(span.start)], hidden[layout.text_slot(span.end)]]
        )
    return SpanRepr(psi=psi, tconcat=tconcat)


def _ner_features(repr: SpanRepr, mode: str) -> np.ndarray:
    if mode == MARKER_ONLY:
        if repr.psi is None:
            raise ConfigError("marker_only mode needs the marker feature")
        return repr.psi
    if mode == TCONCAT_ONLY:
        if repr.tconcat is None:
            raise ConfigError("tconcat_only mode needs the boundary-token feature")
        return repr.tconcat
    if mode == MARKER_PLUS_TCONCAT:
        if repr.psi is None or repr.tconcat is None:
            raise ConfigError("marker_plus_tconcat mode needs both features")
        return np.concatenate([repr.psi, repr.tconcat])
    raise ConfigError(f"unknown NER mode {mode!r}")


def ner_logits(repr: SpanRepr, head: HeadParams, mode: Optional[str] = None) -> np.ndarray:
    """Entity-type logits (NONE first) for one span representation."""
    mode = mode or head.ner_mode
    if head.ner is None:
        raise ConfigError("head bundle has no NER classifier")
    feats = _ner_features(repr, mode)
    logits, _ = mlp_forward(feats[None, :], head.ner)
    return logits[0]


def pair_repr(outputs, layout: EncodingLayout, object_span: Span) -> PairRepr:
    """Feature of one (subject, object) pair in a pair layout."""
    hidden = outputs.hidden
    subj_start, subj_end = layout.solid_slots()  # raises on span layouts
    obj_start, obj_end = layout.marker_slots(object_span)
    return PairRepr(
        vec=np.concatenate(
            [hidden[subj_start], hidden[subj_end], hidden[obj_start], hidden[obj_end]]
        )
    )


def re_logits(repr: PairRepr, head: HeadParams) -> tuple[np.ndarray, np.ndarray]:
    """(relation logits over the directed label space, object-type logits)."""
    if head.re is None or head.aux is None:
        raise ConfigError("head bundle has no relation/auxiliary classifiers")
    rel, _ = mlp_forward(repr.vec[None, :], head.re)
    aux, _ = mlp_forward(repr.vec[None, :], head.aux)
    return rel[0], aux[0]


def combine_bidirectional(
    forward: np.ndarray, inverse: np.ndarray, space: DirectedLabelSpace
) -> tuple[np.ndarray, int]:
    """Fuse subject->object and object->subject logits for one direction.

    score(label) = P_forward(label) + P_inverse(inverse_of(label)), which
    makes symmetric-label scores exactly direction-invariant. Returns the
    score vector and the predicted index (ties resolve to NO_RELATION,
    then the lowest label id).
    """
    if len(forward) != len(space) or len(inverse) != len(space):
        raise ConfigError(
            f"logit vectors of sizes {len(forward)}/{len(inverse)} do not "
            f"match label space of size {len(space)}"
        )
    pf = softmax(forward)
    pi = softmax(inverse)
    scores = pf + pi[np.array(space.inverse)]
    return scores, int(np.argmax(scores))


def training_loss(
    logits: np.ndarray,
    gold: np.ndarray,
    aux_logits: Optional[np.ndarray] = None,
    aux_gold: Optional[np.ndarray] = None,
    aux_weight: float = 1.0,
) -> float:
    """Mean cross-entropy, plus the weighted object-type term when given."""
    if aux_weight < 0:
        raise ConfigError("aux_weight must be >= 0")
    loss, _ = cross_entropy(np.atleast_2d(logits), np.atleast_1d(gold))
    total = loss / len(np.atleast_1d(gold))
    if aux_logits is not None and aux_weight > 0:
        if aux_gold is None:
            raise ConfigError("aux_logits given without aux_gold")
        aux_loss, _ = cross_entropy(np.atleast_2d(aux_logits), np.atleast_1d(aux_gold))
        total += aux_weight * aux_loss / len(np.atleast_1d(aux_gold))
    return total


# ---------------------------------------------------------------------------
# Training adapters: turn slot outputs into losses and slot gradients
# ---------------------------------------------------------------------------


@dataclass
class NerItem:
    layout: EncodingLayout
    spans: tuple[Span, ...]
    labels: np.ndarray


@dataclass
class ReItem:
    layout: EncodingLayout
    objects: tuple[Span, ...]
    rel_labels: np.ndarray
    obj_types: np.ndarray


class NerTaskHead:
    """Span classification over packed layouts, optionally training the
    boundary-feature stage-1 twin on the same spans."""

    def __init__(self, head: HeadParams, train_stage1: bool = False):
        if head.ner is None:
            raise ConfigError("NER training needs a ner classifier")
        if train_stage1 and head.stage1 is None:
            raise ConfigError("stage-1 training requested without a stage1 classifier")
        self.head = head
        self.train_stage1 = train_stage1

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name, arr in self.head.tensors().items():
            if name.startswith("ner.") or (self.train_stage1 and name.startswith("stage1.")):
                out[name] = arr
        return out

    def loss_and_slot_grads(self, hidden: np.ndarray, layout: EncodingLayout, item: NerItem):
        n = len(item.spans)
        if n == 0:
            return 0.0, 0, np.zeros_like(hidden), {}
        hdim = hidden.shape[1]
        s_slots = np.empty(n, dtype=np.int64)
        e_slots = np.empty(n, dtype=np.int64)
        a_slots = np.empty(n, dtype=np.int64)
        b_slots = np.empty(n, dtype=np.int64)
        for i, sp in enumerate(item.spans):
            s_slots[i], e_slots[i] = layout.marker_slots(sp)
            a_slots[i] = layout.text_slot(sp.start)
            b_slots[i] = layout.text_slot(sp.end)
        psi = np.concatenate([hidden[s_slots], hidden[e_slots]], axis=1)
        tcc = np.concatenate([hidden[a_slots], hidden[b_slots]], axis=1)

        mode = self.head.ner_mode
        if mode == MARKER_ONLY:
            feats = psi
        elif mode == TCONCAT_ONLY:
            feats = tcc
        else:
            feats = np.concatenate([psi, tcc], axis=1)

        d_hidden = np.zeros_like(hidden)
        grads: dict[str, np.ndarray] = {}

        logits, cache = mlp_forward(feats, self.head.ner)
        loss, dlogits = cross_entropy(logits, item.labels)
        dfeat, g = mlp_backward(dlogits, cache, self.head.ner)
        for k, v in g.items():
            grads[f"ner.{k}"] = v
        if mode == MARKER_ONLY:
            dpsi, dtcc = dfeat, None
        elif mode == TCONCAT_ONLY:
            dpsi, dtcc = None, dfeat
        else:
            dpsi, dtcc = dfeat[:, : 2 * hdim], dfeat[:, 2 * hdim :]
        if dpsi is not None:
            np.add.at(d_hidden, s_slots, dpsi[:, :hdim])
            np.add.at(d_hidden, e_slots, dpsi[:, hdim:])
        if dtcc is not None:
            np.add.at(d_hidden, a_slots, dtcc[:, :hdim])
            np.add.at(d_hidden, b_slots, dtcc[:, hdim:])

        if self.train_stage1:
            s_logits, s_cache = mlp_forward(tcc, self.head.stage1)
            s_loss, s_dlogits = cross_entropy(s_logits, item.labels)
            loss += s_loss
            s_dfeat, s_g = mlp_backward(s_dlogits, s_cache, self.head.stage1)
            for k, v in s_g.items():
                grads[f"stage1.{k}"] = v
            np.add.at(d_hidden, a_slots, s_dfeat[:, :hdim])
            np.add.at(d_hidden, b_slots, s_dfeat[:, hdim:])

        return loss, n, d_hidden, grads


class ReTaskHead:
    """Directed relation classification plus the object-type auxiliary loss."""

    def __init__(self, head: HeadParams, aux_weight: float = 1.0):
        if head.re is None or head.aux is None:
            raise ConfigError("relation training needs re and aux classifiers")
        if aux_weight < 0:
            raise ConfigError("aux_weight must be >= 0")
        self.head = head
        self.aux_weight = aux_weight

    def tensors(self) -> dict[str, np.ndarray]:
        return {
            name: arr
            for name, arr in self.head.tensors().items()
            if name.startswith(("re.", "aux."))
        }

    def loss_and_slot_grads(self, hidden: np.ndarray, layout: EncodingLayout, item: ReItem):
        n = len(item.objects)
        if n == 0:
            return 0.0, 0, np.zeros_like(hidden), {}
        hdim = hidden.shape[1]
        subj_start, subj_end = layout.solid_slots()
        s_slots = np.empty(n, dtype=np.int64)
        e_slots = np.empty(n, dtype=np.int64)
        for i, ob in enumerate(item.objects):
            s_slots[i], e_slots[i] = layout.marker_slots(ob)
        feats = np.concatenate(
            [
                np.repeat(hidden[subj_start][None, :], n, axis=0),
                np.repeat(hidden[subj_end][None, :], n, axis=0),
                hidden[s_slots],
                hidden[e_slots],
            ],
            axis=1,
        )

        rel_logits_, rel_cache = mlp_forward(feats, self.head.re)
        loss, drel = cross_entropy(rel_logits_, item.rel_labels)
        dfeat, g_re = mlp_backward(drel, rel_cache, self.head.re)
        grads = {f"re.{k}": v for k, v in g_re.items()}

        if self.aux_weight > 0:
            aux_logits_, aux_cache = mlp_forward(feats, self.head.aux)
            aux_loss, daux = cross_entropy(aux_logits_, item.obj_types)
            loss += self.aux_weight * aux_loss
            daux_feat, g_aux = mlp_backward(self.aux_weight * daux, aux_cache, self.head.aux)
            for k, v in g_aux.items():
                grads[f"aux.{k}"] = v
            dfeat = dfeat + daux_feat
        else:
            for k in ("W1", "b1", "W2", "b2"):
                grads[f"aux.{k}"] = np.zeros_like(getattr(self.head.aux, k))

        d_hidden = np.zeros_like(hidden)
        d_hidden[subj_start] += dfeat[:, :hdim].sum(axis=0)
        d_hidden[subj_end] += dfeat[:, hdim : 2 * hdim].sum(axis=0)
        np.add.at(d_hidden, s_slots, dfeat[:, 2 * hdim : 3 * hdim])
        np.add.at(d_hidden, e_slots, dfeat[:, 3 * hdim :])
        return loss, n, d_hidden, grads
