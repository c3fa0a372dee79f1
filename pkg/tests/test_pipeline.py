import numpy as np
import pytest

from markerpack import synth
from markerpack.corpus import ContextWindow, expand_context
from markerpack.errors import ConfigError, DataError
from markerpack.heads import re_logits, pair_repr
from markerpack.encoder import encode
from markerpack.layout import build_pair_layout
from markerpack.metrics import expand_symmetric, ner_f1, rel_f1
from markerpack.pipeline import (
    TrainConfig,
    _directed_gold,
    load_model,
    predict_ner,
    predict_re,
    refine_entity_types,
    relation_type_statistic,
    save_model,
    train_ner,
    train_re,
)
from markerpack.spanspace import Span, build_directed_label_space
from markerpack.corpus import Document, EntityMention, RelationMention

from conftest import desk_config


def entity_keys(entities_by_doc):
    return {
        (doc_id, m.span.start, m.span.end, m.label)
        for doc_id, ms in entities_by_doc.items()
        for m in ms
    }


def gold_entity_keys(corpus):
    return {
        (d.doc_id, m.span.start, m.span.end, m.label)
        for d in corpus
        for m in d.entities
    }


class TestTrainConfig:
    def test_bad_strategy(self):
        with pytest.raises(ConfigError):
            TrainConfig(packing="zigzag")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"group_sizes": 4})

    def test_round_trip(self):
        cfg = desk_config()
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg


class TestTrainErrors:
    def test_empty_corpus(self):
        with pytest.raises(DataError):
            train_ner([], synth.schema(), desk_config())
        with pytest.raises(DataError):
            train_re([], synth.schema(), desk_config())

    def test_relationless_corpus_rejected_for_re(self):
        corpus = synth.make_corpus(3, 2, seed=0, with_relations=False)
        with pytest.raises(DataError):
            train_re(corpus, synth.schema(), desk_config())


class TestDeterminism:
    def test_same_seed_same_model(self):
        corpus = synth.make_corpus(6, 2, seed=5)
        cfg = desk_config(epochs=2)
        a = train_ner(corpus, synth.schema(), cfg)
        b = train_ner(corpus, synth.schema(), cfg)
        for k, v in a.encoder.tensors.items():
            assert np.array_equal(v, b.encoder.tensors[k]), k
        for k, v in a.heads.tensors().items():
            assert np.array_equal(v, b.heads.tensors()[k]), k

    def test_same_seed_same_predictions(self, ner_model, ner_test_corpus):
        a = predict_ner(ner_model, ner_test_corpus)
        b = predict_ner(ner_model, ner_test_corpus)
        assert entity_keys(a.entities) == entity_keys(b.entities)
        assert a.scores == b.scores


class TestNerLearnability:
    def test_span_f1_at_least_095(self, ner_model, ner_test_corpus):
        pred = predict_ner(ner_model, ner_test_corpus)
        rep = ner_f1(gold_entity_keys(ner_test_corpus), entity_keys(pred.entities))
        assert rep.f1 >= 0.95

    def test_no_span_longer_than_limit_is_scored(self, ner_model, ner_test_corpus):
        pred = predict_ner(ner_model, ner_test_corpus)
        limit = ner_model.train_config.max_span_length
        for ms in pred.entities.values():
            for m in ms:
                assert m.span.length <= limit


class TestPackingInvariance:
    def test_predictions_exact_across_group_sizes(self, ner_model, ner_test_corpus):
        base = predict_ner(ner_model, ner_test_corpus, group_size=16)
        for k in (128, 512):
            other = predict_ner(ner_model, ner_test_corpus, group_size=k)
            assert entity_keys(other.entities) == entity_keys(base.entities)
            assert other.scores == base.scores

    def test_predictions_exact_across_strategies(self, ner_model, ner_test_corpus):
        a = predict_ner(ner_model, ner_test_corpus, packing="neighborhood")
        b = predict_ner(ner_model, ner_test_corpus, packing="random", pack_seed=77)
        assert entity_keys(a.entities) == entity_keys(b.entities)
        assert a.scores == b.scores

    def test_workers_do_not_change_predictions(self, ner_model, ner_test_corpus):
        a = predict_ner(ner_model, ner_test_corpus)
        b = predict_ner(ner_model, ner_test_corpus, workers=4)
        assert a.scores == b.scores


class TestTwoStage:
    def test_filter_passing_everything_matches_one_stage(self, ner_model, ner_test_corpus):
        one = predict_ner(ner_model, ner_test_corpus)
        two = predict_ner(ner_model, ner_test_corpus, stage1_top_m=10_000)
        assert entity_keys(one.entities) == entity_keys(two.entities)
        assert one.scores == two.scores

    def test_two_stage_without_stage1_head_rejected(self, ner_model, ner_test_corpus):
        import dataclasses

        broken = dataclasses.replace(ner_model, heads=dataclasses.replace(ner_model.heads))
        broken.heads.stage1 = None
        with pytest.raises(ConfigError):
            predict_ner(broken, ner_test_corpus, stage1_top_m=8)

    def test_two_stage_encodes_fewer_layouts(self, ner_model, ner_test_corpus):
        one = predict_ner(ner_model, ner_test_corpus)
        two = predict_ner(ner_model, ner_test_corpus, stage1_top_m=16)
        assert two.stats.layouts < one.stats.layouts


class TestRePipeline:
    def test_rel_plus_at_least_090(self, re_model, re_test_corpus):
        gold_entities = {d.doc_id: list(d.entities) for d in re_test_corpus}
        pred = predict_re(re_model, re_test_corpus, gold_entities)
        sym = re_model.schema.symmetric_relations
        gold = expand_symmetric(
            {
                (d.doc_id, r.subject.start, r.subject.end,
                 r.object.start, r.object.end, r.label)
                for d in re_test_corpus
                for r in d.relations
            },
            sym,
        )
        got = expand_symmetric(
            {
                (doc_id, r.subject.start, r.subject.end,
                 r.object.start, r.object.end, r.label)
                for doc_id, rs in pred.relations.items()
                for r in rs
            },
            sym,
        )
        types = {
            (d.doc_id, m.span.start, m.span.end): m.label
            for d in re_test_corpus
            for m in d.entities
        }
        rep = rel_f1(gold, got, types, types, mode="strict")
        assert rep.f1 >= 0.90

    def test_zero_entities_zero_relations(self, re_model, re_test_corpus):
        pred = predict_re(re_model, re_test_corpus, {})
        assert all(not rs for rs in pred.relations.values())

    def test_three_entities_three_layouts_six_pairs(self, re_model):
        doc = Document(
            "t0",
            tuple(f"w{i}" for i in range(1, 10)),
            ((1, 9),),
            entities=(
                EntityMention(Span(1, 1), "PER"),
                EntityMention(Span(3, 3), "ORG"),
                EntityMention(Span(5, 5), "GPE"),
            ),
        )
        pred = predict_re(re_model, [doc], {"t0": list(doc.entities)})
        assert pred.stats.layouts == 3

    def test_no_inverse_labels_emitted(self, re_model, re_test_corpus):
        gold_entities = {d.doc_id: list(d.entities) for d in re_test_corpus}
        pred = predict_re(re_model, re_test_corpus, gold_entities)
        for rs in pred.relations.values():
            for r in rs:
                assert not r.label.endswith("_INV")
                assert r.label in re_model.schema.relation_types

    def test_endpoints_are_input_entities(self, re_model, re_test_corpus):
        gold_entities = {d.doc_id: list(d.entities) for d in re_test_corpus}
        pred = predict_re(re_model, re_test_corpus, gold_entities)
        for doc_id, rs in pred.relations.items():
            spans = {m.span for m in gold_entities.get(doc_id, [])}
            for r in rs:
                assert r.subject in spans and r.object in spans


class TestDirectedSupervision:
    def test_asymmetric_generates_inverse(self):
        space = build_directed_label_space(["PHYS"], set())
        win = ContextWindow("d", tuple("abcde"), (1, 5), (1, 2, 3, 4, 5))
        gold = _directed_gold(
            [RelationMention(Span(1, 1), Span(3, 3), "PHYS")], win, space
        )
        assert gold[(Span(1, 1), Span(3, 3))] == space.index("PHYS")
        assert gold[(Span(3, 3), Span(1, 1))] == space.index("PHYS_INV")

    def test_symmetric_supervises_both_directions_identically(self):
        space = build_directed_label_space(["PER-SOC"], {"PER-SOC"})
        win = ContextWindow("d", tuple("abcde"), (1, 5), (1, 2, 3, 4, 5))
        gold = _directed_gold(
            [RelationMention(Span(1, 1), Span(3, 3), "PER-SOC")], win, space
        )
        assert gold[(Span(1, 1), Span(3, 3))] == space.index("PER-SOC")
        assert gold[(Span(3, 3), Span(1, 1))] == space.index("PER-SOC")


class TestObjectPackingInvariance:
    def test_pair_logits_invariant_to_object_packing(self, re_model, re_test_corpus):
        doc = re_test_corpus[0]
        mentions = doc.entities_in_sentence(1)
        spans = sorted({m.span for m in mentions})
        if len(spans) < 2:
            pytest.skip("first sentence has fewer than two entities")
        win = expand_context(doc, 1, re_model.train_config.context_window)
        wspans = sorted(win.span_to_window(s) for s in spans)
        subject, objects = wspans[0], wspans[1:]
        full = build_pair_layout(win, subject, objects, re_model.marker_vocab, re_model.token_vocab)
        out_full = encode(re_model.encoder, full)
        for ob in objects:
            alone = build_pair_layout(win, subject, [ob], re_model.marker_vocab, re_model.token_vocab)
            out_alone = encode(re_model.encoder, alone)
            a, _ = re_logits(pair_repr(out_full, full, ob), re_model.heads)
            b, _ = re_logits(pair_repr(out_alone, alone, ob), re_model.heads)
            assert np.max(np.abs(a - b)) <= 1e-9


class TestRelationTypeStatistic:
    def doc_with(self, pairs, doc_id="d"):
        # pairs: list of (subj_type, obj_type, label); one sentence, spaced spans
        entities = []
        relations = []
        tokens = []
        pos = 1
        for st_, ot, label in pairs:
            tokens += ["x", "y", "z"]
            s, o = Span(pos, pos), Span(pos + 1, pos + 1)
            entities += [EntityMention(s, st_), EntityMention(o, ot)]
            relations.append(RelationMention(s, o, label))
            pos += 3
        return Document(
            doc_id, tuple(tokens), ((1, len(tokens)),), tuple(entities), tuple(relations)
        )

    def test_single_pair_is_one(self):
        doc = self.doc_with([("PER", "GPE", "PHYS"), ("PER", "GPE", "PHYS")])
        assert relation_type_statistic([doc]) == 1.0

    def test_even_split_is_half(self):
        doc = self.doc_with(
            [
                ("PER", "GPE", "A"), ("ORG", "GPE", "A"),
                ("PER", "PER", "B"), ("ORG", "ORG", "B"),
            ]
        )
        assert relation_type_statistic([doc]) == 0.5

    def test_no_relations_is_error(self):
        corpus = synth.make_corpus(2, 2, seed=0, with_relations=False)
        with pytest.raises(DataError):
            relation_type_statistic(corpus)

    def test_synthetic_ratio_stored_on_model(self, re_model, re_train_corpus):
        assert re_model.dominance_ratio == pytest.approx(
            relation_type_statistic(re_train_corpus)
        )


class TestRefinement:
    votes = {("d", 1, 1): ["PER", "PER"], ("d", 5, 5): ["ORG"]}

    def entities(self):
        return {
            "d": [
                EntityMention(Span(1, 1), "ORG"),
                EntityMention(Span(3, 3), "GPE"),
            ]
        }

    def test_below_threshold_passthrough(self):
        out = refine_entity_types(self.entities(), self.votes, 0.2, 0.4)
        assert out == self.entities()

    def test_entity_in_no_relation_unchanged(self):
        out = refine_entity_types(self.entities(), self.votes, 0.9, 0.4)
        assert out["d"][1].label == "GPE"

    def test_majority_vote_replaces_type(self):
        out = refine_entity_types(self.entities(), self.votes, 0.9, 0.4)
        assert out["d"][0].label == "PER"

    def test_tie_keeps_ner_type(self):
        votes = {("d", 1, 1): ["PER", "ORG"]}
        out = refine_entity_types(self.entities(), votes, 0.9, 0.4)
        assert out["d"][0].label == "ORG"


class TestModelPersistence:
    def test_ner_round_trip(self, ner_model, ner_test_corpus, tmp_path):
        path = tmp_path / "ner.npz"
        save_model(ner_model, path)
        back = load_model(path)
        a = predict_ner(ner_model, ner_test_corpus)
        b = predict_ner(back, ner_test_corpus)
        assert a.scores == b.scores

    def test_re_round_trip(self, re_model, re_test_corpus, tmp_path):
        path = tmp_path / "re.npz"
        save_model(re_model, path)
        back = load_model(path)
        assert back.dominance_ratio == re_model.dominance_ratio
        gold_entities = {d.doc_id: list(d.entities) for d in re_test_corpus}
        a = predict_re(re_model, re_test_corpus, gold_entities)
        b = predict_re(back, re_test_corpus, gold_entities)
        assert a.scores == b.scores
