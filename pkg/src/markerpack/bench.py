"""Inference throughput benchmark across packing group sizes.

Timings are the median of repeated runs after one warm-up pass; the
non-timing columns (layout statistics, F1) are deterministic and
identical across repetitions because prediction never mutates the model.
"""
from __future__ import annotations

import io
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .corpus import Corpus
from .errors import ConfigError
from .metrics import ner_f1
from .pipeline import NEIGHBORHOOD, NerModel, NerPrediction, predict_ner

CSV_HEADER = "strategy,K,sent_per_sec,mean_slots,layouts_per_sentence,f1"


@dataclass(frozen=True)
class BenchRecord:
    strategy: str
    group_size: int
    sent_per_sec: float
    mean_slots: float
    layouts_per_sentence: float
    f1: Optional[float]

    def csv_row(self) -> str:
        f1 = "" if self.f1 is None else f"{self.f1:.6f}"
        return (
            f"{self.strategy},{self.group_size},{self.sent_per_sec:.3f},"
            f"{self.mean_slots:.2f},{self.layouts_per_sentence:.3f},{f1}"
        )


def _gold_entity_keys(corpus: Corpus) -> set[tuple]:
    return {
        (doc.doc_id, m.span.start, m.span.end, m.label)
        for doc in corpus
        for m in doc.entities
    }


def _pred_entity_keys(pred: NerPrediction) -> set[tuple]:
    return {
        (doc_id, m.span.start, m.span.end, m.label)
        for doc_id, ms in pred.entities.items()
        for m in ms
    }


def sweep_group_size(
    model: NerModel,
    corpus: Corpus,
    group_sizes: Sequence[int],
    strategy: str = NEIGHBORHOOD,
    repeats: int = 3,
    stage1_top_m: Optional[int] = None,
    workers: int = 1,
) -> list[BenchRecord]:
    """Measure prediction throughput per group size; score F1 when the
    corpus carries gold entities."""
    if not group_sizes:
        raise ConfigError("need at least one group size")
    if any(k < 1 for k in group_sizes):
        raise ConfigError("group sizes must be positive")
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    kernels.warmup()
    gold = _gold_entity_keys(corpus)
    records: list[BenchRecord] = []
    for k in group_sizes:
        kwargs = dict(
            group_size=k, packing=strategy, stage1_top_m=stage1_top_m, workers=workers
        )
        pred = predict_ner(model, corpus, **kwargs)  # warm-up, also the oracle run
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            predict_ner(model, corpus, **kwargs)
            times.append(time.perf_counter() - t0)
        elapsed = float(np.median(times))
        stats = pred.stats
        f1 = ner_f1(gold, _pred_entity_keys(pred)).f1 if gold else None
        records.append(
            BenchRecord(
                strategy=strategy,
                group_size=k,
                sent_per_sec=stats.sentences / elapsed if elapsed > 0 else float("inf"),
                mean_slots=stats.mean_slots,
                layouts_per_sentence=stats.layouts / stats.sentences
                if stats.sentences
                else 0.0,
                f1=f1,
            )
        )
    return records


def records_to_csv(records: Sequence[BenchRecord]) -> str:
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    for rec in records:
        out.write(rec.csv_row() + "\n")
    return out.getvalue()
