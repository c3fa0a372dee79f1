"""Candidate spans, packing strategies, and the directed relation label space.

Token indices are 1-based and inclusive on both ends throughout the
package; a span ``(a, b)`` covers tokens ``a..b``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataValidationError

NO_RELATION = "NO_RELATION"
INVERSE_SUFFIX = "_INV"


@dataclass(frozen=True, order=True)
class Span:
    """Inclusive 1-based token interval."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 1 or self.end < self.start:
            raise DataValidationError(f"invalid span ({self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def overlaps(self, other: "Span") -> bool:
        return max(self.start, other.start) <= min(self.end, other.end)

    def shifted(self, offset: int) -> "Span":
        return Span(self.start + offset, self.end + offset)


@dataclass(frozen=True)
class SpanGroup:
    """One packing group: at most K spans, sorted by (start, end)."""

    spans: tuple[Span, ...]
    group_index: int


def enumerate_spans(n: int, max_length: int) -> list[Span]:
    """All spans of a length-``n`` sentence up to ``max_length`` tokens.

    Sorted by (start, end); empty for ``n == 0``.
    """
    if n < 0:
        raise ConfigError(f"sentence length must be >= 0, got {n}")
    if max_length < 1:
        raise ConfigError(f"max span length must be >= 1, got {max_length}")
    return [
        Span(a, b)
        for a in range(1, n + 1)
        for b in range(a, min(n, a + max_length - 1) + 1)
    ]


def _chunk(spans: Sequence[Span], group_size: int) -> list[SpanGroup]:
    return [
        SpanGroup(tuple(spans[i : i + group_size]), i // group_size)
        for i in range(0, len(spans), group_size)
    ]


def neighborhood_pack(spans: Iterable[Span], group_size: int) -> list[SpanGroup]:
    """Sort spans by (start, end) and chunk in order into groups of <= K.

    Adjacent spans (same or nearby start token) land in the same group;
    only the last group may be short.
    """
    if group_size < 1:
        raise ConfigError(f"group size must be >= 1, got {group_size}")
    return _chunk(sorted(spans), group_size)


def random_pack(spans: Iterable[Span], group_size: int, seed: int) -> list[SpanGroup]:
    """Seeded uniform shuffle of spans, chunked into groups of <= K.

    Within each group spans are re-sorted by (start, end) so that layout
    construction is order-canonical regardless of strategy.
    """
    if group_size < 1:
        raise ConfigError(f"group size must be >= 1, got {group_size}")
    items = list(spans)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(items))
    shuffled = [items[i] for i in order]
    return [
        SpanGroup(tuple(sorted(g.spans)), g.group_index)
        for g in _chunk(shuffled, group_size)
    ]


@dataclass(frozen=True)
class DirectedLabelSpace:
    """Relation labels closed under inversion.

    ``labels[0]`` is always NO_RELATION. Every asymmetric relation type has
    a materialized inverse label; symmetric types are their own inverse.
    """

    labels: tuple[str, ...]
    inverse: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigError(f"unknown relation label {label!r}") from None

    def inverse_of(self, label: str) -> str:
        return self.labels[self.inverse[self.index(label)]]

    def inverse_index(self, idx: int) -> int:
        return self.inverse[idx]

    def is_symmetric(self, label: str) -> bool:
        i = self.index(label)
        return self.inverse[i] == i and i != 0

    def is_inverse_label(self, label: str) -> bool:
        """True for materialized inverse labels (never emitted directly)."""
        i = self.index(label)
        return self.inverse[i] < i


def build_directed_label_space(
    relation_types: Sequence[str], symmetric: Iterable[str] = ()
) -> DirectedLabelSpace:
    """Label space with NO_RELATION, forward labels, and inverses.

    Each asymmetric type ``R`` gets a distinct ``R_INV`` label directly
    after it; symmetric types map to themselves.
    """
    symmetric = set(symmetric)
    unknown = symmetric - set(relation_types)
    if unknown:
        raise ConfigError(f"symmetric labels not in relation types: {sorted(unknown)}")
    if len(set(relation_types)) != len(relation_types):
        raise ConfigError("duplicate relation types")

    labels: list[str] = [NO_RELATION]
    inverse: list[int] = [0]
    for rel in relation_types:
        idx = len(labels)
        labels.append(rel)
        if rel in symmetric:
            inverse.append(idx)
        else:
            labels.append(rel + INVERSE_SUFFIX)
            inverse.append(idx + 1)
            inverse.append(idx)
    if len(set(labels)) != len(labels):
        raise ConfigError("relation type names collide with generated inverse labels")
    return DirectedLabelSpace(tuple(labels), tuple(inverse))


def candidate_pairs(entities: Iterable) -> list[tuple[Span, tuple[Span, ...]]]:
    """Directed relation candidates among entity spans of one window.

    Accepts spans or anything with a ``.span`` attribute. For each span as
    subject, objects are all other spans, both in (start, end) order. A
    single entity yields an empty object list (skipped downstream).
    """
    spans = sorted({getattr(e, "span", e) for e in entities})
    return [(s, tuple(o for o in spans if o != s)) for s in spans]
