"""End-to-end training and prediction for span and span-pair classification.

Training iterates sentences -> context windows -> candidate spans ->
packed groups -> layouts -> loss, under seeded Adam with linear warmup
and decay. Prediction reuses the same layout construction; since marker
slots cannot see each other across pairs, predictions are exactly
invariant to the packing group size and strategy.
"""
from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import (
    ContextWindow,
    Corpus,
    Document,
    EntityMention,
    LabelSchema,
    RelationMention,
    expand_context,
)
from .encoder import (
    EncoderConfig,
    EncoderParams,
    encode,
    init_params,
    loss_and_grad,
    prompt_init_markers,
)
from .errors import ConfigError, DataError
from .heads import (
    MARKER_ONLY,
    MARKER_PLUS_TCONCAT,
    NER_MODES,
    TCONCAT_ONLY,
    HeadParams,
    NerItem,
    NerTaskHead,
    ReItem,
    ReTaskHead,
    combine_bidirectional,
    init_mlp,
    mlp_forward,
    softmax,
)
from .layout import (
    EncodingLayout,
    MarkerVocab,
    TokenVocab,
    build_pair_layout,
    build_span_layout,
)
from .optim import AdamState, linear_schedule
from .spanspace import (
    DirectedLabelSpace,
    Span,
    build_directed_label_space,
    candidate_pairs,
    enumerate_spans,
    neighborhood_pack,
    random_pack,
)

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
NEIGHBORHOOD = "neighborhood"
RANDOM = "random"
PACKING_STRATEGIES = (NEIGHBORHOOD, RANDOM)


@dataclass
class TrainConfig:
    """Knobs for both tasks; all fields are CLI flags and config-file keys."""

    learning_rate: float = 1e-3
    warmup_fraction: float = 0.1
    epochs: int = 30
    batch_size: int = 8
    group_size: int = 256
    max_span_length: int = 8
    context_window: int = 512
    packing: str = NEIGHBORHOOD
    aux_weight: float = 1.0
    seed: int = 0
    hidden_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 128
    head_hidden_dim: int = 128
    ner_mode: str = MARKER_PLUS_TCONCAT
    train_stage1: bool = True
    prompt_start_word: Optional[str] = None
    prompt_end_word: Optional[str] = None

    def __post_init__(self) -> None:
        if self.packing not in PACKING_STRATEGIES:
            raise ConfigError(f"unknown packing strategy {self.packing!r}")
        if self.ner_mode not in NER_MODES:
            raise ConfigError(f"unknown NER mode {self.ner_mode!r}")
        for name in (
            "learning_rate", "epochs", "batch_size", "group_size",
            "max_span_length", "context_window", "hidden_dim", "num_layers",
            "num_heads", "ffn_dim", "head_hidden_dim",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ConfigError("warmup_fraction must be in [0, 1]")
        if self.aux_weight < 0:
            raise ConfigError("aux_weight must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class PredictStats:
    sentences: int = 0
    layouts: int = 0
    slots: int = 0

    def add_layout(self, layout: EncodingLayout) -> None:
        self.layouts += 1
        self.slots += layout.num_slots

    def merge(self, other: "PredictStats") -> None:
        self.sentences += other.sentences
        self.layouts += other.layouts
        self.slots += other.slots

    @property
    def mean_slots(self) -> float:
        return self.slots / self.layouts if self.layouts else 0.0


@dataclass
class NerModel:
    train_config: TrainConfig
    schema: LabelSchema
    token_vocab: TokenVocab
    marker_vocab: MarkerVocab
    encoder: EncoderParams
    heads: HeadParams

    @property
    def entity_labels(self) -> tuple[str, ...]:
        return ("NONE",) + self.schema.entity_types


@dataclass
class ReModel:
    train_config: TrainConfig
    schema: LabelSchema
    token_vocab: TokenVocab
    marker_vocab: MarkerVocab
    encoder: EncoderParams
    heads: HeadParams
    label_space: DirectedLabelSpace
    dominance_ratio: Optional[float] = None


@dataclass
class NerPrediction:
    entities: dict[str, list[EntityMention]]
    scores: dict[tuple, float]
    stats: PredictStats


@dataclass
class RePrediction:
    relations: dict[str, list[RelationMention]]
    scores: dict[tuple, float]
    aux_votes: dict[tuple, list[str]]
    stats: PredictStats


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _encoder_config(config: TrainConfig, token_vocab: TokenVocab) -> EncoderConfig:
    return EncoderConfig(
        vocab_size=token_vocab.size + 6,
        hidden_dim=config.hidden_dim,
        num_layers=config.num_layers,
        num_heads=config.num_heads,
        ffn_dim=config.ffn_dim,
        max_position=config.context_window + 2,
        seed=config.seed,
    )


def _init_encoder(
    config: TrainConfig, token_vocab: TokenVocab, marker_vocab: MarkerVocab
) -> EncoderParams:
    params = init_params(_encoder_config(config, token_vocab))
    if config.prompt_start_word or config.prompt_end_word:
        mapping: dict[int, int] = {}
        for word, markers in (
            (config.prompt_start_word, (marker_vocab.span_start_id,
                                        marker_vocab.subj_start_id,
                                        marker_vocab.obj_start_id)),
            (config.prompt_end_word, (marker_vocab.span_end_id,
                                      marker_vocab.subj_end_id,
                                      marker_vocab.obj_end_id)),
        ):
            if word is None:
                continue
            wid = token_vocab.id_of(word)
            if wid == 0:
                raise ConfigError(f"prompt word {word!r} not in the corpus vocabulary")
            for m in markers:
                mapping[m] = wid
        params = prompt_init_markers(params, mapping)
    return params


def _check_entity_labels(corpus: Corpus, schema: LabelSchema) -> None:
    known = set(schema.entity_types)
    seen = {m.label for doc in corpus for m in doc.entities}
    extra = seen - known
    if extra:
        raise DataError(f"corpus entity types not in schema: {sorted(extra)}")


@dataclass
class _NerSentence:
    window: ContextWindow
    spans: tuple[Span, ...]
    label_of: dict[Span, int]


def _ner_sentences(corpus: Corpus, schema: LabelSchema, config: TrainConfig) -> list[_NerSentence]:
    type_id = {t: i + 1 for i, t in enumerate(schema.entity_types)}
    out: list[_NerSentence] = []
    for doc in corpus:
        for si in range(1, doc.num_sentences + 1):
            window = expand_context(doc, si, config.context_window)
            offset = window.focus_range[0] - 1
            n_sent = window.focus_range[1] - window.focus_range[0] + 1
            spans = tuple(
                sp.shifted(offset) for sp in enumerate_spans(n_sent, config.max_span_length)
            )
            gold: dict[Span, int] = {}
            for m in doc.entities_in_sentence(si):
                wspan = window.span_to_window(m.span)
                gold[wspan] = type_id[m.label]
            label_of = {sp: gold.get(sp, 0) for sp in spans}
            out.append(_NerSentence(window, spans, label_of))
    return out


def _pack(
    spans: Sequence[Span], group_size: int, strategy: str, seed: int
):
    if strategy == NEIGHBORHOOD:
        return neighborhood_pack(spans, group_size)
    return random_pack(spans, group_size, seed)


def train_ner(corpus: Corpus, schema: LabelSchema, config: TrainConfig) -> NerModel:
    """Train the span classifier (and its stage-1 twin) on gold entities."""
    if not corpus or not any(doc.entities for doc in corpus):
        raise DataError("training corpus has no entity annotations")
    _check_entity_labels(corpus, schema)
    token_vocab = TokenVocab.build(corpus)
    marker_vocab = MarkerVocab.with_offset(token_vocab.first_free_id)
    params = _init_encoder(config, token_vocab, marker_vocab)

    rng = np.random.default_rng(_derive_seed(config.seed, 1))
    hdim = config.hidden_dim
    n_labels = 1 + len(schema.entity_types)
    in_dim = 4 * hdim if config.ner_mode == MARKER_PLUS_TCONCAT else 2 * hdim
    heads = HeadParams(
        ner=init_mlp(rng, in_dim, config.head_hidden_dim, n_labels),
        stage1=init_mlp(rng, 2 * hdim, config.head_hidden_dim, n_labels)
        if config.train_stage1
        else None,
        ner_mode=config.ner_mode,
    )
    task = NerTaskHead(heads, train_stage1=config.train_stage1)

    sentences = [s for s in _ner_sentences(corpus, schema, config) if s.spans]
    if not sentences:
        raise DataError("no candidate spans to train on")
    layouts_per_epoch = sum(
        -(-len(s.spans) // config.group_size) for s in sentences
    )
    steps_per_epoch = -(-layouts_per_epoch // config.batch_size)
    total_steps = config.epochs * steps_per_epoch

    shuffle_rng = np.random.default_rng(_derive_seed(config.seed, 2))
    adam_enc, adam_head = AdamState(), AdamState()
    step = 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(sentences))
        items: list[NerItem] = []
        for ti in order:
            s = sentences[ti]
            groups = _pack(
                s.spans, config.group_size, config.packing,
                _derive_seed(config.seed, 3, epoch, int(ti)),
            )
            for g in groups:
                layout = build_span_layout(s.window, g, marker_vocab, token_vocab)
                labels = np.array([s.label_of[sp] for sp in g.spans], dtype=np.int64)
                items.append(NerItem(layout, g.spans, labels))
        epoch_loss = 0.0
        n_batches = 0
        for i in range(0, len(items), config.batch_size):
            loss, egrads, hgrads = loss_and_grad(
                params, items[i : i + config.batch_size], task
            )
            lr = linear_schedule(step, total_steps, config.warmup_fraction, config.learning_rate)
            adam_enc.update(params.tensors, egrads, lr)
            adam_head.update(task.tensors(), hgrads, lr)
            step += 1
            epoch_loss += loss
            n_batches += 1
        logger.info("ner epoch %d/%d: loss %.4f", epoch + 1, config.epochs,
                    epoch_loss / max(n_batches, 1))
    return NerModel(config, schema, token_vocab, marker_vocab, params, heads)


def _batch_span_features(
    hidden: np.ndarray, layout: EncodingLayout, spans: Sequence[Span], mode: str
) -> np.ndarray:
    a_slots = np.array([layout.text_slot(sp.start) for sp in spans], dtype=np.int64)
    b_slots = np.array([layout.text_slot(sp.end) for sp in spans], dtype=np.int64)
    tcc = np.concatenate([hidden[a_slots], hidden[b_slots]], axis=1)
    if mode == TCONCAT_ONLY:
        return tcc
    pairs = [layout.marker_slots(sp) for sp in spans]
    s_slots = np.array([p[0] for p in pairs], dtype=np.int64)
    e_slots = np.array([p[1] for p in pairs], dtype=np.int64)
    psi = np.concatenate([hidden[s_slots], hidden[e_slots]], axis=1)
    if mode == MARKER_ONLY:
        return psi
    return np.concatenate([psi, tcc], axis=1)


def _predict_ner_sentence(
    model: NerModel,
    doc: Document,
    si: int,
    group_size: int,
    strategy: str,
    stage1_top_m: Optional[int],
    pack_seed: int,
    stats: PredictStats,
) -> list[tuple[EntityMention, float]]:
    config = model.train_config
    window = expand_context(doc, si, config.context_window)
    offset = window.focus_range[0] - 1
    n_sent = window.focus_range[1] - window.focus_range[0] + 1
    spans = [
        sp.shifted(offset)
        for sp in enumerate_spans(n_sent, config.max_span_length)
    ]
    stats.sentences += 1
    if not spans:
        return []

    if stage1_top_m is not None:
        text_layout = build_span_layout(window, (), model.marker_vocab, model.token_vocab)
        hidden = encode(model.encoder, text_layout, validate=False).hidden
        stats.add_layout(text_layout)
        feats = _batch_span_features(hidden, text_layout, spans, TCONCAT_ONLY)
        logits, _ = mlp_forward(feats, model.heads.stage1)
        p_entity = 1.0 - softmax(logits)[:, 0]
        ranked = sorted(
            zip(spans, p_entity), key=lambda t: (-t[1], t[0].start, t[0].end)
        )
        spans = [sp for sp, _ in ranked[:stage1_top_m]]

    candidates: list[tuple[Span, str, float]] = []
    for group in _pack(spans, group_size, strategy, pack_seed):
        layout = build_span_layout(window, group, model.marker_vocab, model.token_vocab)
        hidden = encode(model.encoder, layout, validate=False).hidden
        stats.add_layout(layout)
        feats = _batch_span_features(hidden, layout, group.spans, model.heads.ner_mode)
        logits, _ = mlp_forward(feats, model.heads.ner)
        probs = softmax(logits)
        preds = np.argmax(probs, axis=1)
        for i, sp in enumerate(group.spans):
            if preds[i] != 0:
                candidates.append(
                    (sp, model.schema.entity_types[preds[i] - 1], float(probs[i, preds[i]]))
                )

    if not model.schema.nested:
        kept: list[tuple[Span, str, float]] = []
        for sp, label, score in sorted(
            candidates, key=lambda c: (-c[2], c[0].start, c[0].end, c[1])
        ):
            if not any(sp.overlaps(k) for k, _, _ in kept):
                kept.append((sp, label, score))
        candidates = kept

    results = [
        (EntityMention(window.span_to_document(sp), label), score)
        for sp, label, score in candidates
    ]
    results.sort(key=lambda r: (r[0].span.start, r[0].span.end, r[0].label))
    return results


def predict_ner(
    model: NerModel,
    corpus: Corpus,
    group_size: Optional[int] = None,
    packing: str = NEIGHBORHOOD,
    stage1_top_m: Optional[int] = None,
    pack_seed: int = 0,
    workers: int = 1,
) -> NerPrediction:
    """Predict entity mentions; exactly invariant to packing choices.

    ``stage1_top_m`` switches on two-stage prediction: the fast
    boundary-feature head proposes the top-M spans per sentence and only
    those get marker re-scoring.
    """
    if packing not in PACKING_STRATEGIES:
        raise ConfigError(f"unknown packing strategy {packing!r}")
    if stage1_top_m is not None and model.heads.stage1 is None:
        raise ConfigError(
            "two-stage prediction requested but the model has no stage-1 classifier"
        )
    K = group_size or model.train_config.group_size
    jobs = [
        (doc, si)
        for doc in corpus
        for si in range(1, doc.num_sentences + 1)
    ]

    def run(job_idx: int) -> tuple[str, list[tuple[EntityMention, float]], PredictStats]:
        doc, si = jobs[job_idx]
        local = PredictStats()
        res = _predict_ner_sentence(
            model, doc, si, K, packing, stage1_top_m,
            _derive_seed(pack_seed, job_idx), local,
        )
        return doc.doc_id, res, local

    stats = PredictStats()
    entities: dict[str, list[EntityMention]] = {doc.doc_id: [] for doc in corpus}
    scores: dict[tuple, float] = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(run, range(len(jobs))))
    else:
        outputs = [run(i) for i in range(len(jobs))]
    for doc_id, res, local in outputs:
        stats.merge(local)
        for mention, score in res:
            entities[doc_id].append(mention)
            scores[(doc_id, mention.span.start, mention.span.end, mention.label)] = score
    return NerPrediction(entities, scores, stats)


# ---------------------------------------------------------------------------
# Relation extraction
# ---------------------------------------------------------------------------


def _directed_gold(
    relations: Iterable[RelationMention],
    window: ContextWindow,
    space: DirectedLabelSpace,
) -> dict[tuple[Span, Span], int]:
    """Directed supervision: forward labels plus generated inverses.

    Symmetric labels supervise both directions identically; asymmetric
    ones put the inverse label on the reversed pair.
    """
    gold: dict[tuple[Span, Span], int] = {}
    for r in relations:
        s = window.span_to_window(r.subject)
        o = window.span_to_window(r.object)
        idx = space.index(r.label)
        gold[(s, o)] = idx
        gold[(o, s)] = space.inverse_index(idx)
    return gold


def train_re(corpus: Corpus, schema: LabelSchema, config: TrainConfig) -> ReModel:
    """Train the relation classifier on gold entities and relations."""
    if not corpus or not any(doc.relations for doc in corpus):
        raise DataError("training corpus has no relation annotations")
    _check_entity_labels(corpus, schema)
    space = build_directed_label_space(schema.relation_types, schema.symmetric_relations)
    token_vocab = TokenVocab.build(corpus)
    marker_vocab = MarkerVocab.with_offset(token_vocab.first_free_id)
    params = _init_encoder(config, token_vocab, marker_vocab)

    rng = np.random.default_rng(_derive_seed(config.seed, 1))
    hdim = config.hidden_dim
    type_id = {t: i for i, t in enumerate(schema.entity_types)}
    heads = HeadParams(
        re=init_mlp(rng, 4 * hdim, config.head_hidden_dim, len(space)),
        aux=init_mlp(rng, 4 * hdim, config.head_hidden_dim, len(schema.entity_types)),
    )
    task = ReTaskHead(heads, aux_weight=config.aux_weight)

    items: list[ReItem] = []
    for doc in corpus:
        for si in range(1, doc.num_sentences + 1):
            mentions = doc.entities_in_sentence(si)
            if len({m.span for m in mentions}) < 2:
                continue
            window = expand_context(doc, si, config.context_window)
            wtype = {window.span_to_window(m.span): type_id[m.label] for m in mentions}
            gold = _directed_gold(doc.relations_in_sentence(si), window, space)
            for subject, objects in candidate_pairs(list(wtype)):
                if not objects:
                    continue
                layout = build_pair_layout(
                    window, subject, objects, marker_vocab, token_vocab
                )
                items.append(
                    ReItem(
                        layout,
                        objects,
                        rel_labels=np.array(
                            [gold.get((subject, o), 0) for o in objects], dtype=np.int64
                        ),
                        obj_types=np.array([wtype[o] for o in objects], dtype=np.int64),
                    )
                )
    if not items:
        raise DataError("no relation training instances (need >= 2 entities per sentence)")

    steps_per_epoch = -(-len(items) // config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    shuffle_rng = np.random.default_rng(_derive_seed(config.seed, 2))
    adam_enc, adam_head = AdamState(), AdamState()
    step = 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(items))
        epoch_loss = 0.0
        n_batches = 0
        for i in range(0, len(order), config.batch_size):
            batch = [items[j] for j in order[i : i + config.batch_size]]
            loss, egrads, hgrads = loss_and_grad(params, batch, task)
            lr = linear_schedule(step, total_steps, config.warmup_fraction, config.learning_rate)
            adam_enc.update(params.tensors, egrads, lr)
            adam_head.update(task.tensors(), hgrads, lr)
            step += 1
            epoch_loss += loss
            n_batches += 1
        logger.info("re epoch %d/%d: loss %.4f", epoch + 1, config.epochs,
                    epoch_loss / max(n_batches, 1))

    try:
        ratio = relation_type_statistic(corpus)
    except DataError:
        ratio = None
    return ReModel(
        config, schema, token_vocab, marker_vocab, params, heads, space, ratio
    )


def _predict_re_sentence(
    model: ReModel,
    doc: Document,
    si: int,
    mentions: Sequence[EntityMention],
    stats: PredictStats,
) -> tuple[list[tuple[RelationMention, float]], dict[tuple, list[str]]]:
    space = model.label_space
    window = expand_context(doc, si, model.train_config.context_window)
    spans = sorted({window.span_to_window(m.span) for m in mentions})
    stats.sentences += 1
    if len(spans) < 2:
        return [], {}

    rel_logits: dict[tuple[Span, Span], np.ndarray] = {}
    aux_pred: dict[tuple[Span, Span], str] = {}
    for subject, objects in candidate_pairs(spans):
        layout = build_pair_layout(
            window, subject, objects, model.marker_vocab, model.token_vocab
        )
        hidden = encode(model.encoder, layout, validate=False).hidden
        stats.add_layout(layout)
        hdim = hidden.shape[1]
        subj_s, subj_e = layout.solid_slots()
        pairs = [layout.marker_slots(o) for o in objects]
        feats = np.concatenate(
            [
                np.repeat(hidden[subj_s][None, :], len(objects), axis=0),
                np.repeat(hidden[subj_e][None, :], len(objects), axis=0),
                hidden[[p[0] for p in pairs]],
                hidden[[p[1] for p in pairs]],
            ],
            axis=1,
        )
        logits, _ = mlp_forward(feats, model.heads.re)
        aux_logits, _ = mlp_forward(feats, model.heads.aux)
        aux_idx = np.argmax(aux_logits, axis=1)
        for i, o in enumerate(objects):
            rel_logits[(subject, o)] = logits[i]
            aux_pred[(subject, o)] = model.schema.entity_types[aux_idx[i]]

    best: dict[tuple[Span, Span, str], float] = {}
    votes: dict[tuple, list[str]] = {}
    for (s, o), fwd in sorted(rel_logits.items()):
        scores, pred = combine_bidirectional(fwd, rel_logits[(o, s)], space)
        if pred == 0:
            continue
        label = space.labels[pred]
        if space.is_inverse_label(label):
            label = space.inverse_of(label)
            subj, obj = o, s
        else:
            subj, obj = s, o
        if space.is_symmetric(label) and (obj, subj) < (subj, obj):
            subj, obj = obj, subj
        key = (subj, obj, label)
        score = float(scores[pred]) / 2.0
        if key not in best or score > best[key]:
            best[key] = score
        for member, other in ((obj, subj), (subj, obj)):
            dspan = window.span_to_document(member)
            votes.setdefault(
                (doc.doc_id, dspan.start, dspan.end), []
            ).append(aux_pred[(other, member)])

    out = []
    for (subj, obj, label), score in sorted(best.items()):
        out.append(
            (
                RelationMention(
                    window.span_to_document(subj), window.span_to_document(obj), label
                ),
                score,
            )
        )
    return out, votes


def predict_re(
    model: ReModel,
    corpus: Corpus,
    entities: dict[str, list[EntityMention]],
    workers: int = 1,
) -> RePrediction:
    """Predict directed relations among the given entity mentions.

    Inverse labels are never emitted: an object->subject winner surfaces
    as the forward label with the endpoints swapped; symmetric winners
    are canonicalized to span order.
    """
    jobs: list[tuple[Document, int, list[EntityMention]]] = []
    for doc in corpus:
        by_sentence: dict[int, list[EntityMention]] = {}
        for m in entities.get(doc.doc_id, []):
            by_sentence.setdefault(doc.sentence_index_of(m.span), []).append(m)
        for si in sorted(by_sentence):
            jobs.append((doc, si, by_sentence[si]))

    def run(idx: int):
        doc, si, mentions = jobs[idx]
        local = PredictStats()
        rels, votes = _predict_re_sentence(model, doc, si, mentions, local)
        return doc.doc_id, rels, votes, local

    stats = PredictStats()
    relations: dict[str, list[RelationMention]] = {doc.doc_id: [] for doc in corpus}
    scores: dict[tuple, float] = {}
    aux_votes: dict[tuple, list[str]] = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(run, range(len(jobs))))
    else:
        outputs = [run(i) for i in range(len(jobs))]
    for doc_id, rels, votes, local in outputs:
        stats.merge(local)
        for mention, score in rels:
            relations[doc_id].append(mention)
            key = (
                doc_id,
                mention.subject.start, mention.subject.end,
                mention.object.start, mention.object.end,
                mention.label,
            )
            scores[key] = score
        for k, v in votes.items():
            aux_votes.setdefault(k, []).extend(v)
    return RePrediction(relations, scores, aux_votes, stats)


def relation_type_statistic(corpus: Corpus) -> float:
    """Share of relations covered by each label's dominant type pair."""
    counts: dict[str, Counter] = {}
    total = 0
    for doc in corpus:
        type_of = {}
        for m in doc.entities:
            type_of.setdefault(m.span, m.label)
        for r in doc.relations:
            counts.setdefault(r.label, Counter())[
                (type_of[r.subject], type_of[r.object])
            ] += 1
            total += 1
    if total == 0:
        raise DataError("corpus has no relations; the statistic is undefined")
    return sum(max(c.values()) for c in counts.values()) / total


def refine_entity_types(
    entities: dict[str, list[EntityMention]],
    aux_votes: dict[tuple, list[str]],
    dominance_ratio: float,
    enable_threshold: float = 0.4,
) -> dict[str, list[EntityMention]]:
    """Majority-vote type refinement from the relation model's aux head.

    Active only when the corpus dominance ratio reaches the threshold;
    entities in no predicted relation, and tied votes, keep their type.
    """
    if dominance_ratio < enable_threshold:
        return {doc_id: list(ms) for doc_id, ms in entities.items()}
    out: dict[str, list[EntityMention]] = {}
    for doc_id, ms in entities.items():
        refined = []
        for m in ms:
            votes = aux_votes.get((doc_id, m.span.start, m.span.end), [])
            if votes:
                ranked = Counter(votes).most_common()
                if len(ranked) == 1 or ranked[0][1] > ranked[1][1]:
                    m = EntityMention(m.span, ranked[0][0])
            refined.append(m)
        out[doc_id] = refined
    return out


# ---------------------------------------------------------------------------
# Prediction output and model persistence
# ---------------------------------------------------------------------------


def write_predictions(
    path,
    corpus: Corpus,
    ner_pred: NerPrediction,
    re_pred: Optional[RePrediction] = None,
) -> None:
    """JSONL mirroring the corpus schema plus per-mention scores."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            sentences = [
                list(doc.sentence_tokens(i)) for i in range(1, doc.num_sentences + 1)
            ]
            ner: list[list] = [[] for _ in sentences]
            ner_scores: list[list] = [[] for _ in sentences]
            for m in sorted(
                ner_pred.entities.get(doc.doc_id, []),
                key=lambda m: (m.span.start, m.span.end, m.label),
            ):
                k = doc.sentence_index_of(m.span) - 1
                ner[k].append([m.span.start, m.span.end, m.label])
                ner_scores[k].append(
                    round(ner_pred.scores[(doc.doc_id, m.span.start, m.span.end, m.label)], 9)
                )
            relations: list[list] = [[] for _ in sentences]
            relation_scores: list[list] = [[] for _ in sentences]
            if re_pred is not None:
                for r in sorted(
                    re_pred.relations.get(doc.doc_id, []),
                    key=lambda r: (
                        r.subject.start, r.subject.end,
                        r.object.start, r.object.end, r.label,
                    ),
                ):
                    k = doc.sentence_index_of(r.subject) - 1
                    relations[k].append(
                        [r.subject.start, r.subject.end, r.object.start, r.object.end, r.label]
                    )
                    relation_scores[k].append(
                        round(
                            re_pred.scores[(
                                doc.doc_id,
                                r.subject.start, r.subject.end,
                                r.object.start, r.object.end, r.label,
                            )],
                            9,
                        )
                    )
            fh.write(
                json.dumps(
                    {
                        "doc_id": doc.doc_id,
                        "sentences": sentences,
                        "ner": ner,
                        "ner_scores": ner_scores,
                        "relations": relations,
                        "relation_scores": relation_scores,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def save_model(model, path) -> None:
    """Single npz: JSON header plus encoder and head tensors (float64)."""
    if isinstance(model, NerModel):
        kind = "ner"
        extra = {}
    elif isinstance(model, ReModel):
        kind = "re"
        extra = {"dominance_ratio": model.dominance_ratio}
    else:
        raise ConfigError(f"cannot save object of type {type(model).__name__}")
    meta = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": kind,
        "train_config": model.train_config.to_dict(),
        "schema": model.schema.to_dict(),
        "tokens": list(model.token_vocab.tokens),
        "marker_ids": list(model.marker_vocab.all_ids()),
        "encoder_config": asdict(model.encoder.config),
        "ner_mode": model.heads.ner_mode,
        **extra,
    }
    tensors = {f"enc.{k}": v for k, v in model.encoder.tensors.items()}
    tensors.update({f"head.{k}": v for k, v in model.heads.tensors().items()})
    np.savez(path, __meta__=np.array(json.dumps(meta)), **tensors)


def load_model(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"][()]))
        if meta["format_version"] != MODEL_FORMAT_VERSION:
            raise ConfigError(f"model format {meta['format_version']} unsupported")
        enc_tensors = {}
        head_tensors = {}
        for name in data.files:
            if name.startswith("enc."):
                enc_tensors[name[4:]] = data[name].astype(np.float64)
            elif name.startswith("head."):
                head_tensors[name[5:]] = data[name].astype(np.float64)
    config = TrainConfig.from_dict(meta["train_config"])
    schema = LabelSchema.from_dict(meta["schema"])
    token_vocab = TokenVocab(tuple(meta["tokens"]))
    marker_vocab = MarkerVocab(*meta["marker_ids"])
    encoder = EncoderParams(EncoderConfig(**meta["encoder_config"]), enc_tensors)
    heads = HeadParams.from_tensors(head_tensors, meta["ner_mode"])
    if meta["kind"] == "ner":
        return NerModel(config, schema, token_vocab, marker_vocab, encoder, heads)
    space = build_directed_label_space(schema.relation_types, schema.symmetric_relations)
    return ReModel(
        config, schema, token_vocab, marker_vocab, encoder, heads,
        space, meta.get("dominance_ratio"),
    )
