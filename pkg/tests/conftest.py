"""Shared fixtures: synthetic corpora and session-scoped trained models.

Training runs once per session; the learnability, invariance, and
two-stage acceptance checks all reuse the same models.
"""
import time

import pytest

from markerpack import synth
from markerpack.pipeline import TrainConfig, train_ner, train_re

NER_SEED_TRAIN = 11
NER_SEED_TEST = 99
RE_SEED_TRAIN = 12
RE_SEED_TEST = 98


def desk_config(**overrides):
    base = dict(
        learning_rate=3e-3,
        warmup_fraction=0.1,
        epochs=30,
        batch_size=8,
        group_size=16,
        max_span_length=8,
        context_window=44,
        seed=42,
        hidden_dim=32,
        num_layers=2,
        num_heads=2,
        ffn_dim=64,
        head_hidden_dim=64,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def ner_train_corpus():
    return synth.make_corpus(60, 3, seed=NER_SEED_TRAIN)


@pytest.fixture(scope="session")
def ner_test_corpus():
    return synth.make_corpus(25, 3, seed=NER_SEED_TEST)


@pytest.fixture(scope="session")
def re_train_corpus():
    return synth.make_corpus(300, 3, seed=RE_SEED_TRAIN, min_entities=2)


@pytest.fixture(scope="session")
def re_test_corpus():
    return synth.make_corpus(25, 3, seed=RE_SEED_TEST, min_entities=2)


@pytest.fixture(scope="session")
def train_times():
    return {}


@pytest.fixture(scope="session")
def ner_model(ner_train_corpus, train_times):
    t0 = time.perf_counter()
    # 2e-3 is the stable setting for the span task across seeds; the
    # relation task converges faster and keeps the 3e-3 default
    model = train_ner(ner_train_corpus, synth.schema(), desk_config(learning_rate=2e-3))
    train_times["ner"] = time.perf_counter() - t0
    return model


@pytest.fixture(scope="session")
def re_model(re_train_corpus, train_times):
    t0 = time.perf_counter()
    model = train_re(re_train_corpus, synth.schema(), desk_config())
    train_times["re"] = time.perf_counter() - t0
    return model
