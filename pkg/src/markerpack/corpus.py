"""Document data model, BIO / JSONL readers, and context windowing.

Documents hold whole-document token sequences with 1-based sentence
bounds; entity and relation mentions use document-level token indices.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import ConfigError, DataValidationError, InputError
from .spanspace import Span

logger = logging.getLogger(__name__)

DOCSTART = "-DOCSTART-"


@dataclass(frozen=True)
class EntityMention:
    span: Span
    label: str


@dataclass(frozen=True)
class RelationMention:
    subject: Span
    object: Span
    label: str

    def __post_init__(self) -> None:
        if self.subject == self.object:
            raise DataValidationError(
                f"relation {self.label!r} has identical subject and object "
                f"({self.subject.start}, {self.subject.end})"
            )


@dataclass(frozen=True)
class LabelSchema:
    """Entity and relation type inventory.

    ``nested`` controls prediction-time overlap resolution: flat schemas
    decode non-overlapping mentions, nested ones keep overlaps.
    """

    entity_types: tuple[str, ...]
    relation_types: tuple[str, ...] = ()
    symmetric_relations: frozenset[str] = frozenset()
    nested: bool = False

    def __post_init__(self) -> None:
        if len(set(self.entity_types)) != len(self.entity_types):
            raise DataValidationError("duplicate entity types")
        if len(set(self.relation_types)) != len(self.relation_types):
            raise DataValidationError("duplicate relation types")
        extra = self.symmetric_relations - set(self.relation_types)
        if extra:
            raise DataValidationError(
                f"symmetric labels not in relation types: {sorted(extra)}"
            )

    def to_dict(self) -> dict:
        return {
            "entity_types": list(self.entity_types),
            "relation_types": list(self.relation_types),
            "symmetric_relations": sorted(self.symmetric_relations),
            "nested": self.nested,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSchema":
        return cls(
            entity_types=tuple(d["entity_types"]),
            relation_types=tuple(d.get("relation_types", ())),
            symmetric_relations=frozenset(d.get("symmetric_relations", ())),
            nested=bool(d.get("nested", False)),
        )


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: tuple[str, ...]
    sentence_bounds: tuple[tuple[int, int], ...]
    entities: tuple[EntityMention, ...] = ()
    relations: tuple[RelationMention, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(
            self, "sentence_bounds", tuple(tuple(b) for b in self.sentence_bounds)
        )
        object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "relations", tuple(self.relations))
        self._validate()

    def _validate(self) -> None:
        n = len(self.tokens)
        expected_start = 1
        for s, e in self.sentence_bounds:
            if s != expected_start or e < s:
                raise DataValidationError(
                    f"doc {self.doc_id}: sentence bounds do not partition "
                    f"1..{n} (got ({s}, {e}), expected start {expected_start})"
                )
            expected_start = e + 1
        if expected_start != n + 1:
            raise DataValidationError(
                f"doc {self.doc_id}: sentence bounds cover 1..{expected_start - 1}, "
                f"document has {n} tokens"
            )
        for m in self.entities:
            self.sentence_index_of(m.span)  # raises if not inside one sentence
        spans = {m.span for m in self.entities}
        for r in self.relations:
            for side in (r.subject, r.object):
                if side not in spans:
                    raise DataValidationError(
                        f"doc {self.doc_id}: relation {r.label!r} endpoint "
                        f"({side.start}, {side.end}) is not an entity mention"
                    )

    @property
    def num_sentences(self) -> int:
        return len(self.sentence_bounds)

    def sentence_index_of(self, span: Span) -> int:
        """1-based index of the sentence containing the span."""
        for i, (s, e) in enumerate(self.sentence_bounds, start=1):
            if s <= span.start and span.end <= e:
                return i
            if span.start <= e < span.end:
                break
        raise DataValidationError(
            f"doc {self.doc_id}: span ({span.start}, {span.end}) "
            f"does not lie within one sentence"
        )

    def sentence_tokens(self, sent_idx: int) -> tuple[str, ...]:
        s, e = self.sentence_bounds[sent_idx - 1]
        return self.tokens[s - 1 : e]

    def entities_in_sentence(self, sent_idx: int) -> list[EntityMention]:
        s, e = self.sentence_bounds[sent_idx - 1]
        return [m for m in self.entities if s <= m.span.start and m.span.end <= e]

    def relations_in_sentence(self, sent_idx: int) -> list[RelationMention]:
        s, e = self.sentence_bounds[sent_idx - 1]
        return [
            r
            for r in self.relations
            if s <= r.subject.start and r.subject.end <= e
            and s <= r.object.start and r.object.end <= e
        ]

    def cross_sentence_relations(self) -> list[RelationMention]:
        return [
            r
            for r in self.relations
            if self.sentence_index_of(r.subject) != self.sentence_index_of(r.object)
        ]


Corpus = list[Document]


@dataclass(frozen=True)
class ContextWindow:
    """A focus sentence plus balanced left/right document context.

    ``focus_range`` and all window positions are 1-based window
    coordinates; ``origin_offset[i - 1]`` is the document position of
    window token ``i``.
    """

    doc_id: str
    window_tokens: tuple[str, ...]
    focus_range: tuple[int, int]
    origin_offset: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.window_tokens)

    def to_document(self, window_pos: int) -> int:
        return self.origin_offset[window_pos - 1]

    def to_window(self, doc_pos: int) -> int:
        first = self.origin_offset[0]
        wpos = doc_pos - first + 1
        if not 1 <= wpos <= len(self.window_tokens):
            raise DataValidationError(
                f"document position {doc_pos} outside window of {self.doc_id}"
            )
        return wpos

    def span_to_window(self, span: Span) -> Span:
        return Span(self.to_window(span.start), self.to_window(span.end))

    def span_to_document(self, span: Span) -> Span:
        return Span(self.to_document(span.start), self.to_document(span.end))


def expand_context(doc: Document, sent_idx: int, max_window: int) -> ContextWindow:
    """Window of up to ``max_window`` tokens centered on a sentence.

    Left and right context are balanced; when perfect centering is
    impossible the window takes one extra left token. Never crosses
    document boundaries; a short document becomes one whole window.
    """
    if not 1 <= sent_idx <= doc.num_sentences:
        raise ConfigError(f"sentence index {sent_idx} out of range")
    fs, fe = doc.sentence_bounds[sent_idx - 1]
    flen = fe - fs + 1
    if max_window < flen:
        raise ConfigError(
            f"context window {max_window} smaller than focus sentence ({flen} tokens)"
        )
    n = len(doc.tokens)
    wlen = min(max_window, n)
    extra = wlen - flen
    left_avail, right_avail = fs - 1, n - fe
    left = min((extra + 1) // 2, left_avail)
    right = min(extra - left, right_avail)
    left = extra - right  # redistribute when one side ran short
    ws, we = fs - left, fe + right
    return ContextWindow(
        doc_id=doc.doc_id,
        window_tokens=doc.tokens[ws - 1 : we],
        focus_range=(left + 1, left + flen),
        origin_offset=tuple(range(ws, we + 1)),
    )


# ---------------------------------------------------------------------------
# BIO (IOB2) column format
# ---------------------------------------------------------------------------


def _decode_iob2(
    tags: Sequence[str], line_numbers: Sequence[int], offset: int
) -> list[EntityMention]:
    """Strict IOB2 decode; raises on I-X without a matching open run."""
    mentions: list[EntityMention] = []
    start: Optional[int] = None
    label: Optional[str] = None

    def close(upto: int) -> None:
        nonlocal start, label
        if start is not None:
            mentions.append(EntityMention(Span(offset + start, offset + upto), label))
        start, label = None, None

    for i, tag in enumerate(tags, start=1):
        if tag == "O":
            close(i - 1)
        elif tag.startswith("B-") and len(tag) > 2:
            close(i - 1)
            start, label = i, tag[2:]
        elif tag.startswith("I-") and len(tag) > 2:
            if start is None or label != tag[2:]:
                raise DataValidationError(
                    f"line {line_numbers[i - 1]}: tag {tag!r} continues no open "
                    f"entity of the same type (IOB2 required)"
                )
        else:
            raise DataValidationError(
                f"line {line_numbers[i - 1]}: malformed tag {tag!r}"
            )
    close(len(tags))
    return mentions


def read_bio(path, diagnostics: Optional[list[str]] = None) -> Corpus:
    """Read an IOB2 column file: token in column 1, tag in the last column.

    Blank lines separate sentences; ``-DOCSTART-`` lines delimit
    documents. Sentences with malformed tag sequences are dropped with a
    diagnostic naming the offending line.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().split("\n")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc

    docs: Corpus = []
    doc_sentences: list[tuple[list[str], list[EntityMention]]] = []
    cur_tokens: list[str] = []
    cur_tags: list[str] = []
    cur_lines: list[int] = []

    def note(msg: str) -> None:
        logger.warning(msg)
        if diagnostics is not None:
            diagnostics.append(msg)

    def flush_sentence() -> None:
        nonlocal cur_tokens, cur_tags, cur_lines
        if cur_tokens:
            offset = sum(len(t) for t, _ in doc_sentences)
            try:
                ents = _decode_iob2(cur_tags, cur_lines, offset)
                doc_sentences.append((cur_tokens, ents))
            except DataValidationError as exc:
                note(f"{path}: sentence rejected: {exc}")
        cur_tokens, cur_tags, cur_lines = [], [], []

    def flush_document() -> None:
        flush_sentence()
        if doc_sentences:
            tokens: list[str] = []
            bounds: list[tuple[int, int]] = []
            entities: list[EntityMention] = []
            for toks, ents in doc_sentences:
                bounds.append((len(tokens) + 1, len(tokens) + len(toks)))
                tokens.extend(toks)
                entities.extend(ents)
            docs.append(
                Document(
                    doc_id=f"doc{len(docs)}",
                    tokens=tuple(tokens),
                    sentence_bounds=tuple(bounds),
                    entities=tuple(entities),
                )
            )
        doc_sentences.clear()

    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip()
        if not line.strip():
            flush_sentence()
            continue
        cols = line.split()
        if cols[0] == DOCSTART:
            flush_document()
            continue
        if len(cols) < 2:
            note(f"{path}: sentence rejected: line {lineno}: no tag column")
            cur_tokens.append(cols[0])
            cur_tags.append("<missing>")  # forces sentence rejection
            cur_lines.append(lineno)
            continue
        cur_tokens.append(cols[0])
        cur_tags.append(cols[-1])
        cur_lines.append(lineno)
    flush_document()
    return docs


def write_bio(corpus: Corpus, path) -> None:
    """Write a flat corpus back to IOB2 columns (inverse of read_bio)."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            fh.write(f"{DOCSTART} O\n\n")
            for i in range(1, doc.num_sentences + 1):
                s, e = doc.sentence_bounds[i - 1]
                tags = ["O"] * (e - s + 1)
                for m in doc.entities_in_sentence(i):
                    a, b = m.span.start - s, m.span.end - s
                    if any(t != "O" for t in tags[a : b + 1]):
                        raise DataValidationError(
                            f"doc {doc.doc_id}: overlapping entities are not "
                            f"representable in BIO"
                        )
                    tags[a] = f"B-{m.label}"
                    for j in range(a + 1, b + 1):
                        tags[j] = f"I-{m.label}"
                for tok, tag in zip(doc.sentence_tokens(i), tags):
                    fh.write(f"{tok} {tag}\n")
                fh.write("\n")


# ---------------------------------------------------------------------------
# JSONL format: one document object per line
# ---------------------------------------------------------------------------


def _document_from_json(obj: dict, default_id: str) -> Document:
    sentences = obj["sentences"]
    tokens: list[str] = []
    bounds: list[tuple[int, int]] = []
    for sent in sentences:
        bounds.append((len(tokens) + 1, len(tokens) + len(sent)))
        tokens.extend(str(t) for t in sent)

    entities: list[EntityMention] = []
    ner = obj.get("ner", [[] for _ in sentences])
    if len(ner) != len(sentences):
        raise DataValidationError("'ner' length differs from 'sentences'")
    for k, sent_ents in enumerate(ner):
        s, e = bounds[k]
        for item in sent_ents:
            start, end, label = int(item[0]), int(item[1]), str(item[2])
            span = Span(start, end)
            if not (s <= start and end <= e):
                raise DataValidationError(
                    f"entity span ({start}, {end}, {label!r}) outside its "
                    f"sentence (tokens {s}..{e})"
                )
            entities.append(EntityMention(span, label))

    relations: list[RelationMention] = []
    rel = obj.get("relations", [[] for _ in sentences])
    if len(rel) != len(sentences):
        raise DataValidationError("'relations' length differs from 'sentences'")
    for sent_rels in rel:
        for item in sent_rels:
            ss, se, os_, oe, label = item
            relations.append(
                RelationMention(
                    Span(int(ss), int(se)), Span(int(os_), int(oe)), str(label)
                )
            )

    return Document(
        doc_id=str(obj.get("doc_id", default_id)),
        tokens=tuple(tokens),
        sentence_bounds=tuple(bounds),
        entities=tuple(entities),
        relations=tuple(relations),
    )


def read_jsonl(
    path,
    diagnostics: Optional[list[str]] = None,
    strict: bool = False,
) -> Corpus:
    """Read one document per JSON line.

    Parse failures are input errors. Documents violating corpus
    invariants are rejected with a diagnostic naming the violation (or
    raised when ``strict``).
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw_lines = fh.readlines()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc

    docs: Corpus = []
    for lineno, line in enumerate(raw_lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
        try:
            doc = _document_from_json(obj, default_id=f"doc{lineno - 1}")
        except (DataValidationError, KeyError, IndexError, TypeError, ValueError) as exc:
            msg = f"{path}: line {lineno}: document rejected: {exc}"
            if strict:
                raise DataValidationError(msg) from exc
            logger.warning(msg)
            if diagnostics is not None:
                diagnostics.append(msg)
            continue
        for r in doc.cross_sentence_relations():
            msg = (
                f"{path}: line {lineno}: relation {r.label!r} crosses sentence "
                f"boundaries (kept; not a prediction candidate)"
            )
            logger.warning(msg)
            if diagnostics is not None:
                diagnostics.append(msg)
        docs.append(doc)
    return docs


def document_to_json(doc: Document) -> dict:
    sentences = [list(doc.sentence_tokens(i)) for i in range(1, doc.num_sentences + 1)]
    ner: list[list] = [[] for _ in sentences]
    for m in doc.entities:
        k = doc.sentence_index_of(m.span) - 1
        ner[k].append([m.span.start, m.span.end, m.label])
    relations: list[list] = [[] for _ in sentences]
    for r in doc.relations:
        k = doc.sentence_index_of(r.subject) - 1
        relations[k].append(
            [r.subject.start, r.subject.end, r.object.start, r.object.end, r.label]
        )
    return {
        "doc_id": doc.doc_id,
        "sentences": sentences,
        "ner": ner,
        "relations": relations,
    }


def write_jsonl(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            fh.write(json.dumps(document_to_json(doc), ensure_ascii=False) + "\n")


def infer_schema(
    corpus: Corpus,
    symmetric: Iterable[str] = (),
    nested: bool = False,
) -> LabelSchema:
    """Schema from the types observed in a corpus, in sorted order."""
    etypes = sorted({m.label for doc in corpus for m in doc.entities})
    rtypes = sorted({r.label for doc in corpus for r in doc.relations})
    return LabelSchema(
        entity_types=tuple(etypes),
        relation_types=tuple(rtypes),
        symmetric_relations=frozenset(symmetric),
        nested=nested,
    )
