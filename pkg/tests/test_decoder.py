import numpy as np
import pytest

from oracles import TableModel, capped_log_like, exhaustive_best_sequence
from rnntlab.decoder import (
    BeamConfig,
    Hypothesis,
    decode_noncausal,
    decode_offline,
    decode_streaming,
    decode_two_pass,
    joint_logits,
    predict_step,
    read_traces,
    write_traces,
)
from rnntlab.decoder.networks import predict_sequence
from rnntlab.model import ModelConfig, TransducerModel
from rnntlab.numerics import autodiff as ad
from rnntlab.numerics.autodiff import _sigmoid
from rnntlab.encoder import ConformerConfig
from rnntlab.prefetch import PrefetchEvent
from rnntlab.transducer import Vocab

TINY = ModelConfig(input_dim=4, vocab_size=3,
                   conformer=ConformerConfig(model_dim=8, num_heads=2, kernel_size=3, left_context=4,
                                             num_groups=2, ffn_expansion=2),
                   num_causal=1, num_noncausal=1, right_context=2, embed_dim=4, pred_dim=6, joint_dim=8)


class ScriptedModel:
    """Joint distribution given per (frame, prefix); anything unscripted is near-certain blank."""

    def __init__(self, vocab, script, T):
        self.vocab = vocab
        self.script = script
        self.T = T

    def frames(self):
        return [np.array([float(t)]) for t in range(self.T)]

    def initial_pred_state(self):
        return ()

    def predict(self, state, token):
        return state + (token,)

    def joint_log_probs(self, h, state):
        p = self.script.get((int(h[0]), state))
        if p is None:
            p = np.full(self.vocab.total, 0.01 / (self.vocab.total - 1))
            p[0] = 0.99
        return np.log(np.asarray(p, dtype=np.float64))


class CascadeTable(TableModel):
    """Table model with a pass-through second pass that records what it was given."""

    has_second_pass = True

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.second_inputs = []

    def encode_first_pass(self, frames):
        return np.asarray(frames, dtype=np.float64)

    def encode_second_pass(self, causal):
        self.second_inputs.append(np.array(causal))
        return causal


# ---------------------------------------------------------------- prediction and joint networks


def test_predict_step_determinism_and_blank():
    m = TransducerModel(TINY)
    s0 = m.initial_pred_state()
    a = predict_step(s0, 2, m.params)
    b = predict_step(s0, 2, m.params)
    np.testing.assert_array_equal(a[0], b[0])
    with pytest.raises(ValueError):
        predict_step(s0, 0, m.params)


def test_predict_step_zero_weights():
    m = TransducerModel(TINY)
    for k in ("pred.embed", "pred.wx", "pred.wh", "pred.bx", "pred.bh"):
        m.params[k].data[...] = 0.0
    for tok in (1, 2, 4):
        _, g = predict_step(m.initial_pred_state(), tok, m.params)
        np.testing.assert_array_equal(g, np.zeros(TINY.pred_dim))


def test_predict_matches_unrolled_recurrence():
    m = TransducerModel(TINY)
    rng = np.random.default_rng(0)
    for k in ("pred.bx", "pred.bh"):
        m.params[k].data[...] = rng.normal(size=m.params[k].data.shape)
    P = {k: v.data for k, v in m.params.items()}
    dp = TINY.pred_dim
    h = np.zeros(dp)
    state = m.initial_pred_state()
    toks = [3, 1, 4]
    for tok in toks:
        x = P["pred.embed"][tok]
        Wx, Wh = P["pred.wx"], P["pred.wh"]
        bx, bh = P["pred.bx"], P["pred.bh"]
        r = 1 / (1 + np.exp(-(x @ Wx[:, :dp] + bx[:dp] + h @ Wh[:, :dp] + bh[:dp])))
        z = 1 / (1 + np.exp(-(x @ Wx[:, dp:2 * dp] + bx[dp:2 * dp] + h @ Wh[:, dp:2 * dp] + bh[dp:2 * dp])))
        n = np.tanh(x @ Wx[:, 2 * dp:] + bx[2 * dp:] + r * (h @ Wh[:, 2 * dp:] + bh[2 * dp:]))
        h = (1 - z) * n + z * h
        state, _ = predict_step(state, tok, m.params)
        np.testing.assert_allclose(state, h, atol=1e-12)
    with ad.no_grad():
        seq = predict_sequence(np.array([toks]), m.params, dp).data[0]
    np.testing.assert_allclose(seq[-1], h, atol=1e-12)
    np.testing.assert_array_equal(seq[0], np.zeros(dp))


def test_sigmoid_is_stable():
    x = np.array([-800.0, -1.0, 0.0, 1.0, 800.0])
    np.testing.assert_allclose(_sigmoid(x), [0.0, 1 / (1 + np.e), 0.5, 1 / (1 + np.exp(-1)), 1.0], atol=1e-15)


def test_joint_logits_formula():
    m = TransducerModel(TINY)
    rng = np.random.default_rng(1)
    m.params["joint.b"].data[...] = rng.normal(size=TINY.joint_dim)
    h, g = rng.normal(size=8), rng.normal(size=6)
    P = {k: v.data for k, v in m.params.items()}
    pre = P["joint.we"].T @ h + P["joint.wp"].T @ g + P["joint.b"]
    np.testing.assert_allclose(joint_logits(h, g, m.params), P["joint.wo"].T @ np.tanh(pre), atol=1e-12)
    np.testing.assert_array_equal(joint_logits(h, g, m.params), joint_logits(h.copy(), g, m.params))
    for k in ("joint.we", "joint.wp", "joint.b", "joint.wo"):
        m.params[k].data[...] = 0.0
    z = joint_logits(h, g, m.params)
    np.testing.assert_array_equal(z, np.zeros(m.vocab.total))
    np.testing.assert_allclose(np.exp(m.joint_log_probs(h, g)), np.full(m.vocab.total, 1 / m.vocab.total))


# ---------------------------------------------------------------- beam search


def test_beam_config_validation():
    for kw in ({"beam_size": 0}, {"max_expansions_per_frame": 0}, {"eoq_threshold": 0.0},
               {"eoq_threshold": 1.5}):
        with pytest.raises(ValueError):
            BeamConfig(**kw)


def test_blank_dominant_gives_empty_result():
    m = ScriptedModel(Vocab(2), {}, T=2)
    tr = decode_streaming(m.frames(), m, BeamConfig())
    assert tr.partials == [(), ()]
    assert tr.final_tokens == ()
    assert tr.eoq_frame == 2 and not tr.eoq_fired


def test_forced_token_then_eoq():
    v = Vocab(1)  # a = 1, EOQ = 2
    script = {
        (0, ()): [0.05, 0.9, 0.05],
        (0, (1,)): [0.9, 0.05, 0.05],
        (1, (1,)): [0.025, 0.025, 0.95],
    }
    m = ScriptedModel(v, script, T=3)
    tr = decode_streaming(m.frames(), m, BeamConfig(eoq_threshold=0.9))
    assert tr.final_tokens == (1,)
    assert tr.eoq_frame == 2 and tr.eoq_fired
    assert tr.partials == [(1,), (1,)]
    assert tr.final_first_pass.emit_frames == (1, 2)
    assert tr.eoq_posterior[1] == pytest.approx(0.95)


def test_eoq_below_threshold_does_not_finalize():
    v = Vocab(1)
    script = {(0, ()): [0.05, 0.9, 0.05], (0, (1,)): [0.9, 0.05, 0.05], (1, (1,)): [0.1, 0.05, 0.85]}
    m = ScriptedModel(v, script, T=3)
    tr = decode_streaming(m.frames(), m, BeamConfig(eoq_threshold=0.9))
    assert tr.eoq_frame == 3 and not tr.eoq_fired


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        decode_streaming([], ScriptedModel(Vocab(1), {}, 0), BeamConfig())


def test_beam_matches_exhaustive_search():
    agree = 0
    for i in range(200):
        rng = np.random.default_rng([99, i])
        T, V = int(rng.integers(1, 5)), int(rng.integers(1, 3))
        m = TableModel(Vocab(V), i, T)
        ll, best = exhaustive_best_sequence(m, 3)
        hyp = decode_offline(m.frames(), m, BeamConfig(beam_size=64, max_expansions_per_frame=3))
        if hyp.tokens == best:
            agree += 1
            # merged score never exceeds the exact marginal and loses little to pruning
            assert hyp.log_score <= ll + 1e-9
            assert hyp.log_score >= ll - 0.01
    assert agree >= 198


def test_wide_beam_dominates_narrow_beams():
    for i in range(200):
        rng = np.random.default_rng([5, i])
        T, V = int(rng.integers(1, 5)), int(rng.integers(1, 3))
        m = TableModel(Vocab(V), 1000 + i, T)
        wide = decode_offline(m.frames(), m, BeamConfig(beam_size=64)).log_score
        for b in (1, 2, 4, 8):
            assert decode_offline(m.frames(), m, BeamConfig(beam_size=b)).log_score <= wide + 1e-12


def test_merging_conserves_probability():
    """With a one-token vocabulary nothing is ever pruned at beam 64, so every hypothesis score
    must equal the marginal over all of its alignments (merged by log-add)."""
    for seed in range(20):
        m = TableModel(Vocab(1), seed, T=3, scale=1.0)
        hyp = decode_offline(m.frames(), m, BeamConfig(beam_size=64, max_expansions_per_frame=3))
        want = capped_log_like(m.lattice(list(hyp.tokens)), list(hyp.tokens), 3)
        assert hyp.log_score == pytest.approx(want, abs=1e-12)


def test_hypothesis_invariants():
    for i in range(50):
        rng = np.random.default_rng([6, i])
        T, V = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        m = TableModel(Vocab(V), 2000 + i, T, scale=1.0)
        tr = decode_streaming(m.frames(), m, BeamConfig(beam_size=3, eoq_threshold=0.3))
        h = tr.final_first_pass
        assert all(a <= b for a, b in zip(h.emit_frames, h.emit_frames[1:]))
        assert 0 not in h.tokens
        assert m.vocab.eoq_id not in h.tokens[:-1]
        assert len(tr.partials) == tr.eoq_frame <= T


def test_partials_depend_only_on_past_frames():
    m = TransducerModel(TINY)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(12, 4))
    enc = m.encode_first_pass(x)
    full = decode_streaming(enc, m, BeamConfig(), finalize_on_eoq=False)
    for t in range(1, 13):
        part = decode_streaming(enc[:t], m, BeamConfig(), finalize_on_eoq=False)
        assert part.partials == full.partials[:t]
        assert part.top_scores == full.top_scores[:t]


# ---------------------------------------------------------------- two-pass


def test_identity_cascade_reruns_first_pass():
    for i in range(20):
        rng = np.random.default_rng([8, i])
        T = int(rng.integers(1, 6))
        m = CascadeTable(Vocab(2), 3000 + i, T, scale=1.5)
        cfg = BeamConfig(beam_size=4, eoq_threshold=0.3)
        tr = decode_two_pass(m.frames(), m, cfg)
        rerun = decode_offline(m.frames()[:tr.eoq_frame], m, cfg)
        assert tr.final_two_pass.tokens == rerun.tokens
        assert tr.final_tokens == rerun.text(m.vocab.eoq_id)
        # the second pass never sees frames beyond the EOQ frame
        assert len(m.second_inputs[-1]) == tr.eoq_frame


def test_second_pass_falls_back_to_all_frames():
    m = CascadeTable(Vocab(2), 1, T=4)
    # eoq_threshold 1.0 cannot be reached, so the first pass runs to the end
    tr = decode_two_pass(m.frames(), m, BeamConfig(eoq_threshold=1.0))
    assert tr.eoq_frame == 4 and not tr.eoq_fired
    assert len(m.second_inputs[-1]) == 4


def test_second_pass_shares_the_decoder():
    m = TransducerModel(TINY)
    x = np.random.default_rng(9).normal(size=(10, 4))
    tr = decode_two_pass(x, m, BeamConfig())
    want = decode_offline(m.encode_second_pass(m.encode_first_pass(x)[:tr.eoq_frame]), m, BeamConfig())
    assert tr.final_two_pass.tokens == want.tokens
    assert tr.final_two_pass.log_score == want.log_score


def test_two_pass_requires_noncausal_layers():
    m = TransducerModel(ModelConfig(**{**TINY.__dict__, "num_noncausal": 0}))
    with pytest.raises(ValueError):
        decode_two_pass(np.zeros((3, 4)), m, BeamConfig())
    with pytest.raises(ValueError):
        decode_noncausal(np.zeros((3, 4)), m, BeamConfig())


# ---------------------------------------------------------------- trace files


def test_trace_round_trip(tmp_path):
    m = TransducerModel(TINY)
    rng = np.random.default_rng(10)
    traces = []
    for i in range(3):
        tr = decode_two_pass(rng.normal(size=(6 + i, 4)), m, BeamConfig(), utt_id=f"u{i}")
        traces.append(tr)
    events = {"u1": [PrefetchEvent(2, (1,)), PrefetchEvent(4, (1, 2))]}
    path = tmp_path / "t.jsonl"
    write_traces(path, traces, events)
    back, ev = read_traces(path)
    assert list(back) == ["u0", "u1", "u2"]
    assert ev == events
    for tr in traces:
        b = back[tr.utt_id]
        assert b.partials == tr.partials
        assert b.top_scores == tr.top_scores
        assert b.eoq_posterior == tr.eoq_posterior
        assert (b.eoq_frame, b.eoq_fired, b.frame_ms) == (tr.eoq_frame, tr.eoq_fired, tr.frame_ms)
        assert b.final_tokens == tr.final_tokens
        assert b.final_first_pass.log_score == tr.final_first_pass.log_score
        assert b.final_two_pass.emit_frames == tr.final_two_pass.emit_frames


def test_trace_reader_rejects_malformed(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"type": "frame", "utt": "a", "frame": 1, "partial_tokens": [], "top_score": 0, '
                 '"eoq_posterior": 0.1}\n')
    with pytest.raises(ValueError):
        read_traces(p)
    p.write_text('{"type": "mystery"}\n')
    with pytest.raises(ValueError):
        read_traces(p)


def test_hypothesis_text_strips_terminal_eoq():
    h = Hypothesis(tokens=(1, 2, 5))
    assert h.ended(5) and h.text(5) == (1, 2)
    assert Hypothesis(tokens=(1,)).text(5) == (1,)
