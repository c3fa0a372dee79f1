"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they
complete. The learnability criteria reuse the session-scoped trained
models from conftest.
"""
import time

import numpy as np

from markerpack.corpus import ContextWindow
from markerpack.encoder import EncoderConfig, encode, finite_diff_check, init_params
from markerpack.heads import (
    HeadParams,
    NerItem,
    NerTaskHead,
    combine_bidirectional,
    init_mlp,
)
from markerpack.layout import (
    MarkerVocab,
    SlotRole,
    TokenVocab,
    build_pair_layout,
    build_span_layout,
    validate_layout,
)
from markerpack.metrics import expand_symmetric, ner_f1, rel_f1
from markerpack.pipeline import _directed_gold, predict_ner, predict_re, write_predictions
from markerpack.spanspace import (
    Span,
    build_directed_label_space,
    enumerate_spans,
    neighborhood_pack,
)


def report(num: int, ok: bool, desc: str, detail: str = "") -> None:
    line = f"[ACCEPTANCE {num:02d}] {'PASS' if ok else 'FAIL'}: {desc}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


VOCAB50 = TokenVocab(tuple(f"w{i}" for i in range(50)))
MV = MarkerVocab.with_offset(VOCAB50.first_free_id)


def toy_encoder(seed=0, max_position=32):
    cfg = EncoderConfig(
        vocab_size=VOCAB50.size + 6, hidden_dim=32, num_layers=2, num_heads=2,
        ffn_dim=64, max_position=max_position, seed=seed,
    )
    return init_params(cfg)


def random_window(rng, max_len=24):
    n = int(rng.integers(1, max_len + 1))
    toks = tuple(f"w{int(rng.integers(0, 50))}" for _ in range(n))
    return ContextWindow("d", toks, (1, n), tuple(range(1, n + 1)))


def random_span(rng, n):
    a = int(rng.integers(1, n + 1))
    b = int(rng.integers(a, n + 1))
    return Span(a, b)


def test_criterion_1_packed_vs_independent_equivalence():
    rng = np.random.default_rng(1001)
    params = toy_encoder(seed=7)
    t0 = time.perf_counter()
    worst_span = 0.0
    worst_pair = 0.0
    for _ in range(100):
        win = random_window(rng)
        n = len(win)
        spans = enumerate_spans(n, n)  # every candidate span of the sentence
        alone_out = {}
        for sp in spans:
            lay = build_span_layout(win, [sp], MV, VOCAB50)
            out = encode(params, lay, validate=False).hidden
            s, e = lay.marker_slots(sp)
            alone_out[sp] = (out[s], out[e])
        for k in (4, 16, 64):
            for group in neighborhood_pack(spans, k):
                lay = build_span_layout(win, group, MV, VOCAB50)
                out = encode(params, lay, validate=False).hidden
                for sp in group.spans:
                    s, e = lay.marker_slots(sp)
                    ref_s, ref_e = alone_out[sp]
                    worst_span = max(
                        worst_span,
                        float(np.max(np.abs(out[s] - ref_s))),
                        float(np.max(np.abs(out[e] - ref_e))),
                    )
    for _ in range(100):
        win = random_window(rng)
        n = len(win)
        subject = random_span(rng, n)
        objects = sorted({random_span(rng, n) for _ in range(int(rng.integers(1, 6)))})
        packed = build_pair_layout(win, subject, objects, MV, VOCAB50)
        out = encode(params, packed, validate=False).hidden
        for ob in objects:
            alone = build_pair_layout(win, subject, [ob], MV, VOCAB50)
            ref = encode(params, alone, validate=False).hidden
            ps, pe = packed.marker_slots(ob)
            as_, ae = alone.marker_slots(ob)
            worst_pair = max(
                worst_pair,
                float(np.max(np.abs(out[ps] - ref[as_]))),
                float(np.max(np.abs(out[pe] - ref[ae]))),
            )
    elapsed = time.perf_counter() - t0
    ok = worst_span <= 1e-9 and worst_pair <= 1e-9 and elapsed < 120
    report(
        1, ok, "packed-vs-independent marker outputs match within 1e-9",
        f"span diff {worst_span:.2e}, pair diff {worst_pair:.2e}, {elapsed:.1f}s",
    )


def test_criterion_2_text_invisibility():
    rng = np.random.default_rng(1002)
    params = toy_encoder(seed=8)
    worst = 0.0
    for case in range(100):
        win = random_window(rng)
        n = len(win)
        spans = sorted({random_span(rng, n) for _ in range(int(rng.integers(1, 7)))})
        if case % 2 == 0:
            base = build_span_layout(win, [], MV, VOCAB50)
            with_markers = build_span_layout(win, spans, MV, VOCAB50)
            fewer = build_span_layout(win, spans[: len(spans) // 2], MV, VOCAB50)
            permuted = build_span_layout(win, spans[::-1], MV, VOCAB50)
            stream = slice(0, n)
        else:
            subject = random_span(rng, n)
            base = build_pair_layout(win, subject, [], MV, VOCAB50)
            with_markers = build_pair_layout(win, subject, spans, MV, VOCAB50)
            fewer = build_pair_layout(win, subject, spans[: len(spans) // 2], MV, VOCAB50)
            permuted = build_pair_layout(win, subject, spans[::-1], MV, VOCAB50)
            stream = slice(0, n + 2)
        ref = encode(params, base, validate=False).hidden[stream]
        for lay in (with_markers, fewer, permuted):
            got = encode(params, lay, validate=False).hidden[stream]
            worst = max(worst, float(np.max(np.abs(got - ref))))
    report(2, worst <= 1e-12, "text/solid outputs unchanged by marker pairs",
           f"max diff {worst:.2e} over 100 cases")


def independent_rule_mask(roles, partner):
    n = len(roles)
    out = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            if roles[i] in (SlotRole.TEXT, SlotRole.SOLID):
                out[i, j] = roles[j] in (SlotRole.TEXT, SlotRole.SOLID)
            else:
                out[i, j] = (
                    roles[j] in (SlotRole.TEXT, SlotRole.SOLID)
                    or j == i
                    or partner.get(i) == j
                )
    return out


def test_criterion_3_visibility_position_property_suite():
    rng = np.random.default_rng(1003)
    checked = 0
    agree = True
    for case in range(1000):
        win = random_window(rng, max_len=12)
        n = len(win)
        spans = sorted({random_span(rng, n) for _ in range(int(rng.integers(0, 6)))})
        if case % 2 == 0:
            lay = build_span_layout(win, spans, MV, VOCAB50)
        else:
            lay = build_pair_layout(win, random_span(rng, n), spans, MV, VOCAB50)
        if validate_layout(lay):
            agree = False
            break
        oracle = independent_rule_mask(lay.slot_roles, lay.partner)
        if not np.array_equal(lay.visibility, oracle):
            agree = False
            break
        checked += 1
    report(3, agree and checked == 1000,
           "1000 randomized layouts validate; independent mask oracle agrees bit-for-bit",
           f"{checked} layouts")


def test_criterion_4_gradient_check():
    rng = np.random.default_rng(1004)
    params = toy_encoder(seed=9)
    head = HeadParams(ner=init_mlp(rng, 128, 32, 4), stage1=init_mlp(rng, 64, 32, 4))
    task = NerTaskHead(head, train_stage1=True)
    items = []
    for _ in range(2):
        win = random_window(rng, max_len=10)
        n = len(win)
        spans = tuple(sorted({random_span(rng, n) for _ in range(4)}))
        labels = np.array([int(rng.integers(0, 4)) for _ in spans])
        items.append(NerItem(build_span_layout(win, spans, MV, VOCAB50), spans, labels))
    err = finite_diff_check(params, items, task, epsilon=1e-5, sample=200, seed=11)
    report(4, err < 1e-4, "central-difference gradient check below 1e-4",
           f"max rel err {err:.2e} over 200 coordinates")


def _prediction_bytes(model, corpus, path, **kwargs):
    pred = predict_ner(model, corpus, **kwargs)
    write_predictions(path, corpus, pred)
    return path.read_bytes(), pred


def test_criterion_5_prediction_invariance_to_packing(ner_model, ner_test_corpus, tmp_path):
    variants = {
        "K16": dict(group_size=16),
        "K128": dict(group_size=128),
        "K512": dict(group_size=512),
        "random": dict(group_size=16, packing="random", pack_seed=321),
    }
    blobs = {}
    for name, kwargs in variants.items():
        blobs[name], _ = _prediction_bytes(
            ner_model, ner_test_corpus, tmp_path / f"{name}.jsonl", **kwargs
        )
    identical = len(set(blobs.values())) == 1
    report(5, identical,
           "prediction files byte-identical for K in {16,128,512} and both packings")


def test_criterion_6_synthetic_learnability(
    ner_model, ner_test_corpus, re_model, re_test_corpus, train_times
):
    ner_pred = predict_ner(ner_model, ner_test_corpus)
    gold_ents = {
        (d.doc_id, m.span.start, m.span.end, m.label)
        for d in ner_test_corpus for m in d.entities
    }
    pred_ents = {
        (doc_id, m.span.start, m.span.end, m.label)
        for doc_id, ms in ner_pred.entities.items() for m in ms
    }
    span_f1 = ner_f1(gold_ents, pred_ents).f1

    gold_entities = {d.doc_id: list(d.entities) for d in re_test_corpus}
    re_pred = predict_re(re_model, re_test_corpus, gold_entities)
    sym = re_model.schema.symmetric_relations
    gold_rel = expand_symmetric(
        {
            (d.doc_id, r.subject.start, r.subject.end, r.object.start, r.object.end, r.label)
            for d in re_test_corpus for r in d.relations
        }, sym,
    )
    pred_rel = expand_symmetric(
        {
            (doc_id, r.subject.start, r.subject.end, r.object.start, r.object.end, r.label)
            for doc_id, rs in re_pred.relations.items() for r in rs
        }, sym,
    )
    types = {
        (d.doc_id, m.span.start, m.span.end): m.label
        for d in re_test_corpus for m in d.entities
    }
    rel_plus = rel_f1(gold_rel, pred_rel, types, types, mode="strict").f1
    within_budget = all(t < 600 for t in train_times.values())
    ok = span_f1 >= 0.95 and rel_plus >= 0.90 and within_budget
    report(6, ok, "synthetic NER F1 >= 0.95 and RE Rel+ >= 0.90 within 30 epochs",
           f"F1 {span_f1:.4f}, Rel+ {rel_plus:.4f}, "
           f"train {train_times.get('ner', 0):.0f}s/{train_times.get('re', 0):.0f}s")


def brute_force_counts(gold, pred):
    gold, pred = set(gold), set(pred)
    tp = sum(1 for p in pred if p in gold)
    prec = tp / len(pred) if pred else 0.0
    rec = tp / len(gold) if gold else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1


def test_criterion_7_metrics_oracle():
    rng = np.random.default_rng(1007)
    labels = ["A", "B", "SYM"]
    mismatches = 0
    for case in range(1000):
        def ent_set():
            return {
                ("d" + str(int(rng.integers(0, 2))), int(a), int(a + rng.integers(0, 2)), l)
                for a, l in zip(
                    rng.integers(1, 6, size=int(rng.integers(0, 7))),
                    rng.choice(["PER", "ORG"], size=7),
                )
            }

        def rel_set():
            out = set()
            for _ in range(int(rng.integers(0, 6))):
                s = int(rng.integers(1, 5))
                o = int(rng.integers(1, 5))
                if s == o:
                    continue
                out.add(("d0", s, s, o, o, labels[int(rng.integers(0, 3))]))
            return out

        if case % 2 == 0:
            g, p = ent_set(), ent_set()
            rep = ner_f1(g, p)
            want = brute_force_counts(g, p)
        else:
            g = expand_symmetric(rel_set(), {"SYM"})
            p = expand_symmetric(rel_set(), {"SYM"})
            rep = rel_f1(g, p, mode="boundaries")
            want = brute_force_counts(g, p)
        if not (
            abs(rep.precision - want[0]) < 1e-12
            and abs(rep.recall - want[1]) < 1e-12
            and abs(rep.f1 - want[2]) < 1e-12
        ):
            mismatches += 1
    # a symmetric gold instance is two directed instances
    doubled = expand_symmetric({("d", 1, 1, 3, 3, "SYM")}, {"SYM"})
    ok = mismatches == 0 and len(doubled) == 2
    report(7, ok, "ner_f1/rel_f1 agree with brute-force set intersection on 1000 cases",
           f"{mismatches} mismatches; symmetric instance expands to {len(doubled)}")


def test_criterion_8_packing_arithmetic():
    spans = enumerate_spans(100, 8)
    brute = [
        Span(a, b)
        for a in range(1, 101)
        for b in range(a, min(100, a + 7) + 1)
    ]
    sizes = [len(g.spans) for g in neighborhood_pack(spans, 256)]
    ok = len(spans) == 772 and spans == brute and sizes == [256, 256, 256, 4]
    report(8, ok, "n=100, L=8, K=256 yields 772 spans in groups [256,256,256,4]",
           f"count {len(spans)}, groups {sizes}")


def test_criterion_9_bidirectional_symmetry():
    space = build_directed_label_space(["PHYS", "ORG-AFF", "PER-SOC"], {"PER-SOC"})
    rng = np.random.default_rng(1009)
    consistent = True
    for _ in range(1000):
        f = rng.normal(size=len(space))
        g = rng.normal(size=len(space))
        s_fwd, pred_fwd = combine_bidirectional(f, g, space)
        s_rev, pred_rev = combine_bidirectional(g, f, space)
        # the score vector permutes by label inversion, so the decisions
        # for the two directions name the same relation
        if pred_rev != space.inverse_index(pred_fwd):
            consistent = False
            break
        for k in range(len(space)):
            if s_fwd[k] != s_rev[space.inverse_index(k)]:
                consistent = False
                break
        if not consistent:
            break
    # symmetric gold supervision is identical in both directions
    from markerpack.corpus import RelationMention

    win = ContextWindow("d", tuple("abcdef"), (1, 6), tuple(range(1, 7)))
    gold = _directed_gold(
        [RelationMention(Span(1, 1), Span(3, 3), "PER-SOC"),
         RelationMention(Span(4, 4), Span(6, 6), "PHYS")],
        win, space,
    )
    sym_ok = gold[(Span(1, 1), Span(3, 3))] == gold[(Span(3, 3), Span(1, 1))] == space.index("PER-SOC")
    asym_ok = (
        gold[(Span(4, 4), Span(6, 6))] == space.index("PHYS")
        and gold[(Span(6, 6), Span(4, 4))] == space.index("PHYS_INV")
    )
    report(9, consistent and sym_ok and asym_ok,
           "bidirectional decisions direction-invariant on 1000 random logit pairs; "
           "symmetric supervision identical in both directions")


def test_criterion_10_two_stage_shape(ner_model, ner_test_corpus):
    def timed(**kwargs):
        pred = predict_ner(ner_model, ner_test_corpus, **kwargs)
        times = []
        for _ in range(3):
            t0 = time.perf_counter()
            predict_ner(ner_model, ner_test_corpus, **kwargs)
            times.append(time.perf_counter() - t0)
        return pred, float(np.median(times))

    gold = {
        (d.doc_id, m.span.start, m.span.end, m.label)
        for d in ner_test_corpus for m in d.entities
    }

    def f1_of(pred):
        keys = {
            (doc_id, m.span.start, m.span.end, m.label)
            for doc_id, ms in pred.entities.items() for m in ms
        }
        return ner_f1(gold, keys).f1

    one, t_one = timed(group_size=16)
    ok = True
    details = [f"one-stage F1 {f1_of(one):.4f}, {one.stats.layouts} layouts"]
    for m in (16, 32):
        two, t_two = timed(group_size=16, stage1_top_m=m)
        gap = abs(f1_of(two) - f1_of(one))
        speedup = t_one / t_two
        details.append(
            f"M={m}: F1 gap {gap:.4f}, {two.stats.layouts} layouts, {speedup:.2f}x"
        )
        ok = ok and gap <= 0.005 and two.stats.layouts < one.stats.layouts and speedup >= 1.5
    report(10, ok, "two-stage matches one-stage F1 within 0.5 points, "
           "fewer layouts, >=1.5x throughput", "; ".join(details))
