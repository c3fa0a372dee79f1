"""Deterministic synthetic corpora for training demos and learnability tests.

Entity mentions follow fixed surface patterns, so the correct labeling
is a pure function of the tokens:

* PER: an honorific ("mr"/"ms") followed by a surname,
* ORG: a company name followed by a company suffix,
* GPE: a single city token.

Relations are a pure function of entity types and textual order: a PER
before an ORG works_for it, an ORG before a GPE is based_in it, and any
two PERs are soc_with each other (symmetric, stored span-ordered).
"""
from __future__ import annotations

import numpy as np

from .corpus import Corpus, Document, EntityMention, LabelSchema, RelationMention
from .spanspace import Span

HONORIFICS = ("mr", "ms")
SURNAMES = ("adams", "baker", "chen", "davis", "evans")
ORG_NAMES = ("acme", "globex", "initech", "umbrella")
ORG_SUFFIXES = ("corp", "labs", "inc")
CITIES = ("paris", "tokyo", "oslo", "cairo", "quito")
FILLERS = (
    "the", "a", "deal", "meets", "with", "visits", "from", "report",
    "today", "signs", "and", "plans", "moves", "talks", "quietly", "new",
)

WORKS_FOR = "works_for"
BASED_IN = "based_in"
SOC_WITH = "soc_with"


def schema(with_relations: bool = True) -> LabelSchema:
    return LabelSchema(
        entity_types=("GPE", "ORG", "PER"),
        relation_types=(BASED_IN, SOC_WITH, WORKS_FOR) if with_relations else (),
        symmetric_relations=frozenset({SOC_WITH}) if with_relations else frozenset(),
        nested=False,
    )


def _entity_tokens(kind: str, rng: np.random.Generator) -> list[str]:
    if kind == "PER":
        return [rng.choice(HONORIFICS), rng.choice(SURNAMES)]
    if kind == "ORG":
        return [rng.choice(ORG_NAMES), rng.choice(ORG_SUFFIXES)]
    return [rng.choice(CITIES)]


def _relations_of(entities: list[EntityMention]) -> list[RelationMention]:
    rels: list[RelationMention] = []
    for i, a in enumerate(entities):
        for b in entities[i + 1 :]:  # a precedes b in text
            if a.label == "PER" and b.label == "ORG":
                rels.append(RelationMention(a.span, b.span, WORKS_FOR))
            elif a.label == "ORG" and b.label == "GPE":
                rels.append(RelationMention(a.span, b.span, BASED_IN))
            elif a.label == "PER" and b.label == "PER":
                rels.append(RelationMention(a.span, b.span, SOC_WITH))
    return rels


def _make_sentence(
    rng: np.random.Generator,
    min_len: int,
    max_len: int,
    offset: int,
    min_entities: int,
    max_entities: int,
) -> tuple[list[str], list[EntityMention], list[RelationMention]]:
    n_entities = int(rng.integers(min_entities, max_entities + 1))
    kinds = [str(rng.choice(("PER", "ORG", "GPE"))) for _ in range(n_entities)]
    tokens: list[str] = []
    entities: list[EntityMention] = []

    def pad(k: int) -> None:
        tokens.extend(str(rng.choice(FILLERS)) for _ in range(k))

    pad(int(rng.integers(1, 4)))
    for kind in kinds:
        ent = [str(t) for t in _entity_tokens(kind, rng)]
        start = offset + len(tokens) + 1
        tokens.extend(ent)
        entities.append(EntityMention(Span(start, start + len(ent) - 1), kind))
        pad(int(rng.integers(1, 4)))
    while len(tokens) < min_len:
        pad(1)
    while len(tokens) > max_len and tokens[-1] in FILLERS:
        tokens.pop()
    return tokens, entities, _relations_of(entities)


def make_corpus(
    n_docs: int,
    sentences_per_doc: int = 3,
    seed: int = 0,
    with_relations: bool = True,
    min_sentence_len: int = 12,
    max_sentence_len: int = 20,
    min_entities: int = 1,
    max_entities: int = 3,
) -> Corpus:
    """Seeded corpus of documents following the synthetic patterns."""
    rng = np.random.default_rng(seed)
    docs: Corpus = []
    for d in range(n_docs):
        tokens: list[str] = []
        bounds: list[tuple[int, int]] = []
        entities: list[EntityMention] = []
        relations: list[RelationMention] = []
        for _ in range(sentences_per_doc):
            sent, ents, rels = _make_sentence(
                rng, min_sentence_len, max_sentence_len, len(tokens),
                min_entities, max_entities,
            )
            bounds.append((len(tokens) + 1, len(tokens) + len(sent)))
            tokens.extend(sent)
            entities.extend(ents)
            relations.extend(rels)
        docs.append(
            Document(
                doc_id=f"synth{d}",
                tokens=tuple(tokens),
                sentence_bounds=tuple(bounds),
                entities=tuple(entities),
                relations=tuple(relations) if with_relations else (),
            )
        )
    return docs
