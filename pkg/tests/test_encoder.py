import numpy as np
import pytest

from markerpack.corpus import ContextWindow
from markerpack.encoder import (
    EncoderConfig,
    encode,
    finite_diff_check,
    init_params,
    load_params,
    loss_and_grad,
    prompt_init_markers,
    save_params,
)
from markerpack.errors import ConfigError, LayoutError
from markerpack.heads import HeadParams, NerItem, NerTaskHead, init_mlp
from markerpack.layout import MarkerVocab, TokenVocab, build_pair_layout, build_span_layout
from markerpack.spanspace import Span


def window(n):
    return ContextWindow(
        "d", tuple(f"w{i}" for i in range(1, n + 1)), (1, n), tuple(range(1, n + 1))
    )


TV = TokenVocab(tuple(f"w{i}" for i in range(1, 26)))
MV = MarkerVocab.with_offset(TV.first_free_id)


def config(**kw):
    base = dict(
        vocab_size=TV.size + 6, hidden_dim=32, num_layers=2, num_heads=2,
        ffn_dim=48, max_position=30, seed=5,
    )
    base.update(kw)
    return EncoderConfig(**base)


def checksum(params):
    return {k: hash(v.tobytes()) for k, v in params.tensors.items()}


class TestInit:
    def test_deterministic(self):
        assert checksum(init_params(config())) == checksum(init_params(config()))

    def test_different_seed_differs(self):
        assert checksum(init_params(config())) != checksum(init_params(config(seed=6)))

    def test_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            config(hidden_dim=33)

    def test_all_finite(self):
        params = init_params(config())
        assert all(np.all(np.isfinite(v)) for v in params.tensors.values())


class TestPromptInit:
    def test_copies_rows(self):
        params = init_params(config())
        out = prompt_init_markers(params, {MV.span_start_id: TV.id_of("w3")})
        assert np.array_equal(
            out.tensors["tok_emb"][MV.span_start_id], params.tensors["tok_emb"][TV.id_of("w3")]
        )
        # everything else untouched
        others = {k: v for k, v in out.tensors.items() if k != "tok_emb"}
        for k, v in others.items():
            assert np.array_equal(v, params.tensors[k])

    def test_empty_map_identity(self):
        params = init_params(config())
        assert checksum(prompt_init_markers(params, {})) == checksum(params)

    def test_self_map_identity(self):
        params = init_params(config())
        out = prompt_init_markers(params, {5: 5})
        assert checksum(out) == checksum(params)

    def test_out_of_range(self):
        params = init_params(config())
        with pytest.raises(ConfigError):
            prompt_init_markers(params, {10_000: 1})


class TestEncode:
    def test_zero_layer_outputs_embeddings(self):
        params = init_params(config(num_layers=0))
        lay = build_span_layout(window(4), [Span(1, 2)], MV, TV)
        out = encode(params, lay)
        expected = (
            params.tensors["tok_emb"][lay.slot_token_ids]
            + params.tensors["pos_emb"][lay.slot_position_ids]
        )
        assert np.array_equal(out.hidden, expected)

    def test_deterministic(self):
        params = init_params(config())
        lay = build_span_layout(window(6), [Span(2, 3)], MV, TV)
        a = encode(params, lay).hidden
        b = encode(params, lay).hidden
        assert np.array_equal(a, b)

    def test_invalid_layout_rejected_with_violations(self):
        params = init_params(config())
        lay = build_span_layout(window(3), [Span(1, 1)], MV, TV)
        lay.visibility[0, 3] = True
        with pytest.raises(LayoutError, match="TEXT"):
            encode(params, lay)

    def test_position_budget_enforced(self):
        params = init_params(config(max_position=3))
        lay = build_span_layout(window(4), [], MV, TV)
        with pytest.raises(ConfigError):
            encode(params, lay)

    def test_text_slots_blind_to_markers(self):
        params = init_params(config())
        win = window(7)
        text = encode(params, build_span_layout(win, [], MV, TV)).hidden
        packed = encode(
            params, build_span_layout(win, [Span(1, 3), Span(2, 2), Span(5, 7)], MV, TV)
        ).hidden
        assert np.max(np.abs(packed[:7] - text)) <= 1e-12

    def test_packed_equals_alone_span_layout(self):
        params = init_params(config())
        win = window(8)
        spans = [Span(a, b) for a in range(1, 9) for b in range(a, min(8, a + 2) + 1)]
        packed_lay = build_span_layout(win, spans, MV, TV)
        packed = encode(params, packed_lay).hidden
        for sp in spans:
            alone_lay = build_span_layout(win, [sp], MV, TV)
            alone = encode(params, alone_lay).hidden
            ps, pe = packed_lay.marker_slots(sp)
            as_, ae = alone_lay.marker_slots(sp)
            assert np.max(np.abs(packed[ps] - alone[as_])) <= 1e-9
            assert np.max(np.abs(packed[pe] - alone[ae])) <= 1e-9

    def test_packed_equals_alone_pair_layout(self):
        params = init_params(config())
        win = window(8)
        subject = Span(3, 4)
        objects = [Span(1, 1), Span(2, 2), Span(6, 8)]
        packed_lay = build_pair_layout(win, subject, objects, MV, TV)
        packed = encode(params, packed_lay).hidden
        for ob in objects:
            alone_lay = build_pair_layout(win, subject, [ob], MV, TV)
            alone = encode(params, alone_lay).hidden
            ps, pe = packed_lay.marker_slots(ob)
            as_, ae = alone_lay.marker_slots(ob)
            assert np.max(np.abs(packed[ps] - alone[as_])) <= 1e-9
            assert np.max(np.abs(packed[pe] - alone[ae])) <= 1e-9
            # the text stream (and the solid markers in it) is identical too
            for t in range(1, 9):
                assert np.max(np.abs(
                    packed[packed_lay.text_slot(t)] - alone[alone_lay.text_slot(t)]
                )) <= 1e-12


def ner_batch(params_seed=0):
    rng = np.random.default_rng(params_seed)
    head = HeadParams(
        ner=init_mlp(rng, 128, 24, 3),
        stage1=init_mlp(rng, 64, 24, 3),
    )
    task = NerTaskHead(head, train_stage1=True)
    win = window(6)
    spans = (Span(1, 1), Span(2, 3), Span(4, 6), Span(5, 5))
    lay = build_span_layout(win, spans, MV, TV)
    items = [NerItem(lay, spans, np.array([0, 1, 2, 0]))]
    return items, task


class TestGradients:
    def test_uniform_loss_is_log_classes(self):
        params = init_params(config())
        rng = np.random.default_rng(0)
        head = HeadParams(ner=init_mlp(rng, 128, 24, 5))
        head.ner.W2[:] = 0.0  # zero output layer -> uniform softmax
        head.ner.b2[:] = 0.0
        task = NerTaskHead(head)
        win = window(5)
        spans = (Span(1, 1), Span(2, 2))
        items = [NerItem(build_span_layout(win, spans, MV, TV), spans, np.array([1, 4]))]
        loss, _, _ = loss_and_grad(params, items, task)
        assert loss == pytest.approx(np.log(5), abs=1e-12)

    def test_loss_nonnegative(self):
        params = init_params(config())
        items, task = ner_batch()
        loss, _, _ = loss_and_grad(params, items, task)
        assert loss >= 0

    def test_finite_diff_small(self):
        params = init_params(config())
        items, task = ner_batch()
        err = finite_diff_check(params, items, task, epsilon=1e-5, sample=150, seed=3)
        assert err < 1e-4

    def test_truncation_error_shrinks_with_epsilon(self):
        # second-order central differences: error drops with epsilon while
        # truncation still dominates round-off (which takes over near 1e-5)
        params = init_params(config(num_layers=1, hidden_dim=16, ffn_dim=24, num_heads=2))
        rng = np.random.default_rng(1)
        head = HeadParams(ner=init_mlp(rng, 64, 16, 3))
        task = NerTaskHead(head)
        win = window(5)
        spans = (Span(1, 2), Span(3, 5))
        items = [NerItem(build_span_layout(win, spans, MV, TV), spans, np.array([1, 2]))]
        coarse = finite_diff_check(params, items, task, epsilon=1e-2, sample=60, seed=2)
        fine = finite_diff_check(params, items, task, epsilon=1e-3, sample=60, seed=2)
        assert fine < coarse

    def test_frozen_zero_head_gives_zero_error(self):
        params = init_params(config())
        rng = np.random.default_rng(0)
        head = HeadParams(ner=init_mlp(rng, 128, 24, 3))
        for t in (head.ner.W1, head.ner.b1, head.ner.W2, head.ner.b2):
            t[:] = 0.0
        task = NerTaskHead(head)
        task.tensors = lambda: {}  # frozen head: only encoder coordinates sampled
        win = window(4)
        spans = (Span(1, 1),)
        items = [NerItem(build_span_layout(win, spans, MV, TV), spans, np.array([1]))]
        # loss is constant in every encoder direction: 0/0 convention applies
        err = finite_diff_check(params, items, task, epsilon=1e-5, sample=100, seed=0)
        assert err == 0.0


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = init_params(config())
        path = tmp_path / "enc.npz"
        save_params(params, path)
        back = load_params(path)
        assert back.config == params.config
        assert checksum(back) == checksum(params)
