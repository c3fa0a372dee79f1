"""Micro-averaged span F1 and directed relation evaluation.

Entity items are ``(doc_id, start, end, type)`` tuples; relation items
are ``(doc_id, s_start, s_end, o_start, o_end, label)`` tuples. All
scoring is exact set matching; duplicates collapse before counting.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .errors import ConfigError

BOUNDARIES = "boundaries"
STRICT = "strict"

EntityKey = tuple  # (doc_id, start, end, type)
RelationKey = tuple  # (doc_id, s_start, s_end, o_start, o_end, label)


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    true_positive: int
    predicted: int
    gold: int

    @classmethod
    def from_counts(cls, tp: int, predicted: int, gold: int) -> "EvalReport":
        p = tp / predicted if predicted else 0.0
        r = tp / gold if gold else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f1, tp, predicted, gold)

    def lines(self, name: str) -> list[str]:
        """Machine-readable key=value lines."""
        return [
            f"{name}.precision={self.precision:.6f}",
            f"{name}.recall={self.recall:.6f}",
            f"{name}.f1={self.f1:.6f}",
            f"{name}.true_positive={self.true_positive}",
            f"{name}.predicted={self.predicted}",
            f"{name}.gold={self.gold}",
        ]

    def pretty(self, name: str) -> str:
        return (
            f"{name}: P={self.precision:.4f} R={self.recall:.4f} "
            f"F1={self.f1:.4f} (tp={self.true_positive} "
            f"pred={self.predicted} gold={self.gold})"
        )


def ner_f1(gold: Iterable[EntityKey], pred: Iterable[EntityKey]) -> EvalReport:
    """Exact-match micro F1 over (doc, span, type) tuples."""
    gold_set = set(gold)
    pred_set = set(pred)
    return EvalReport.from_counts(
        len(gold_set & pred_set), len(pred_set), len(gold_set)
    )


def expand_symmetric(
    relations: Iterable[RelationKey], symmetric_labels: Iterable[str]
) -> set[RelationKey]:
    """Each symmetric instance becomes two directed instances."""
    symmetric = set(symmetric_labels)
    out: set[RelationKey] = set()
    for doc_id, ss, se, os_, oe, label in relations:
        out.add((doc_id, ss, se, os_, oe, label))
        if label in symmetric:
            out.add((doc_id, os_, oe, ss, se, label))
    return out


def rel_f1(
    gold: Iterable[RelationKey],
    pred: Iterable[RelationKey],
    entity_types_gold: Optional[Mapping[tuple, str]] = None,
    entity_types_pred: Optional[Mapping[tuple, str]] = None,
    mode: str = BOUNDARIES,
) -> EvalReport:
    """Directed relation F1; inputs must already be symmetric-expanded.

    ``boundaries`` matches on spans plus label; ``strict`` additionally
    requires the predicted entity type of both endpoints to equal the
    gold type. Type maps are keyed by (doc_id, start, end).
    """
    gold_set = set(gold)
    pred_set = set(pred)
    if mode == BOUNDARIES:
        tp = len(gold_set & pred_set)
    elif mode == STRICT:
        if entity_types_gold is None or entity_types_pred is None:
            raise ConfigError("strict mode needs gold and predicted entity types")
        tp = 0
        for item in pred_set & gold_set:
            doc_id, ss, se, os_, oe, _ = item
            subj, obj = (doc_id, ss, se), (doc_id, os_, oe)
            if (
                subj in entity_types_pred
                and obj in entity_types_pred
                and entity_types_pred[subj] == entity_types_gold.get(subj)
                and entity_types_pred[obj] == entity_types_gold.get(obj)
            ):
                tp += 1
    else:
        raise ConfigError(f"unknown relation evaluation mode {mode!r}")
    return EvalReport.from_counts(tp, len(pred_set), len(gold_set))
