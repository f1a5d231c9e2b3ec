import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import levenshtein
from rnntlab.decoder import Hypothesis, StreamTrace
from rnntlab.metrics import (
    CSV_COLUMNS,
    LatencyReport,
    UtteranceResult,
    aggregate,
    endpointer_latency,
    partial_latency,
    percentile,
    prefetch_latency,
    token_error_rate,
    write_csv,
)
from rnntlab.prefetch import PrefetchEvent, PrefetchPolicyConfig, run_policy

EOQ = 9
A, B, C = 1, 2, 3


def make_trace(partials, eoq_frame=None, final=None, second=None, frame_ms=30.0):
    partials = [tuple(p) for p in partials]
    final = partials[-1] if final is None else tuple(final)
    return StreamTrace(partials=partials, top_scores=[0.0] * len(partials), eoq_posterior=[0.0] * len(partials),
                       eoq_frame=eoq_frame or len(partials), final_first_pass=Hypothesis(final + (EOQ,)),
                       eoq_id=EOQ, final_two_pass=None if second is None else Hypothesis(tuple(second)),
                       frame_ms=frame_ms)


def result(partials, eos, events=(), **kw):
    tr = make_trace(partials, **kw)
    return UtteranceResult(tr, list(events), eos, tr.final_tokens)


# ---------------------------------------------------------------- percentile


def test_percentile_examples():
    vals = list(range(1, 11))
    assert percentile(vals, 50) == 5
    assert percentile(vals, 90) == 9
    for p in (0.1, 50, 90, 100):
        assert percentile([7], p) == 7
    assert percentile([3, 1, 2], 100) == 3


def test_percentile_errors():
    with pytest.raises(ValueError):
        percentile([], 50)
    with pytest.raises(ValueError):
        percentile([1], 0)
    with pytest.raises(ValueError):
        percentile([1], 101)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=30), st.floats(0.5, 100), st.integers(0, 500))
def test_percentile_monotone_under_new_max(vals, p, bump):
    bigger = vals + [max(vals) + bump]
    assert percentile(bigger, p) >= percentile(vals, p)
    assert percentile(vals, p) in vals


# ---------------------------------------------------------------- latencies


def test_endpointer_latency_examples():
    assert endpointer_latency(result([()] * 15, eos=10)) == 150.0
    assert endpointer_latency(result([()] * 10, eos=10)) == 0.0
    assert endpointer_latency(result([()] * 8, eos=10)) == -60.0


def test_partial_latency_examples():
    assert partial_latency(result([(), (A,), (A, B), (A, B)], eos=4)) == -30.0
    # the final never shows up as a partial: fall back to the EOQ frame
    r = result([(), (A,), (A,)], eos=2, final=(A, C))
    assert partial_latency(r) == endpointer_latency(r) == 30.0


def test_partial_latency_uses_first_match():
    assert partial_latency(result([(A,), (B,), (A,), (A,)], eos=4)) == -90.0


def test_partial_reference_switch():
    tr = make_trace([(A,), (A, B), (A, B)], second=(A, C, EOQ))
    system = UtteranceResult(tr, [], 3, (A, C))
    first = UtteranceResult(tr, [], 3, (A, C), partial_reference="first_pass")
    assert system.final_tokens == (A, C)
    assert partial_latency(system) == 0.0
    assert partial_latency(first) == -30.0
    with pytest.raises(ValueError):
        UtteranceResult(tr, [], 3, (A,), partial_reference="oracle")


def test_prefetch_latency_examples():
    r = result([(A,), (A,), (A,)], eos=2, events=[PrefetchEvent(3, (A,))])
    assert prefetch_latency(r) == (endpointer_latency(r), 1)
    r = result([(A,), (A, B), (A, B), (A, B), (A, B), (A, B)], eos=4,
               events=[PrefetchEvent(1, (A,)), PrefetchEvent(2, (A, B))])
    assert prefetch_latency(r) == (-60.0, 2)
    # no event matches the final: fall back to the endpointer latency
    r = result([(A,), (A, B)], eos=1, events=[PrefetchEvent(1, (A,))])
    assert prefetch_latency(r) == (30.0, 1)


partial_seqs = st.lists(st.lists(st.integers(1, 3), max_size=3).map(tuple), min_size=1, max_size=12)


@settings(max_examples=300, deadline=None)
@given(partial_seqs, st.data())
def test_prefetch_never_beats_partial(partials, data):
    eos = data.draw(st.integers(1, len(partials)))
    posts = data.draw(st.lists(st.floats(0, 1), min_size=len(partials), max_size=len(partials)))
    tr = make_trace(partials)
    tr.eoq_posterior = posts
    for cfg in (PrefetchPolicyConfig("e2e", data.draw(st.floats(0.05, 1.0))),
                PrefetchPolicyConfig("silence", silence_frames=data.draw(st.integers(1, 4)))):
        r = UtteranceResult(tr, run_policy(tr, cfg), eos, tr.final_tokens)
        pf, n = prefetch_latency(r)
        pr = partial_latency(r)
        ep = endpointer_latency(r)
        assert pf >= pr
        assert n >= 1
        for v in (pf, pr, ep):
            assert v / tr.frame_ms == int(v / tr.frame_ms)


# ---------------------------------------------------------------- token error rate


def test_ter_examples():
    assert token_error_rate([[A, B, C]], [[A, B, C]]) == 0.0
    assert token_error_rate([[A, C]], [[A, B, C]]) == pytest.approx(100 / 3)
    assert round(token_error_rate([[A, C]], [[A, B, C]]), 2) == 33.33
    assert token_error_rate([[A, B, EOQ]], [[A, B]], eoq_id=EOQ) == 0.0
    assert token_error_rate([[], [A]], [[A, B], [A, B]]) == 75.0


def test_ter_errors():
    with pytest.raises(ValueError):
        token_error_rate([], [])
    with pytest.raises(ValueError):
        token_error_rate([[A]], [[]])
    with pytest.raises(ValueError):
        token_error_rate([[A]], [[A], [B]])


seqs = st.lists(st.integers(1, 4), max_size=6)


@settings(max_examples=300, deadline=None)
@given(seqs, seqs)
def test_edit_distance_matches_dp_oracle(h, r):
    d = levenshtein(r, h)
    if r:
        assert token_error_rate([h], [r]) == pytest.approx(100.0 * d / len(r))
    # distance is symmetric even though the normalization is not
    assert levenshtein(h, r) == d
    if h and r:
        assert token_error_rate([r], [h]) * len(h) == pytest.approx(token_error_rate([h], [r]) * len(r))


# ---------------------------------------------------------------- aggregation and reports


def test_aggregate_single_utterance():
    r = result([(A,), (A, B), (A, B)], eos=2, events=[PrefetchEvent(2, (A, B))])
    rep = aggregate([r], EOQ)
    assert rep.n == 1
    assert rep.ep50_ms == rep.ep90_ms == 30.0
    assert rep.pr50_ms == rep.pr90_ms == 0.0
    assert rep.pf50_ms == rep.pf90_ms == 0.0
    assert rep.pfr == 1.0
    assert rep.ter_pct == 0.0


def test_aggregate_two_latencies():
    r1 = result([(A,)] * 4, eos=3, frame_ms=100.0)
    r2 = result([(A,)] * 5, eos=3, frame_ms=100.0)
    rep = aggregate([r1, r2])
    assert (rep.ep50_ms, rep.ep90_ms) == (100.0, 200.0)


def test_aggregate_rejects_empty():
    with pytest.raises(ValueError):
        aggregate([])


def test_report_json_round_trip():
    rep = LatencyReport(n=3, ter_pct=100 / 3, ep50_ms=90.0, ep90_ms=120.0, pr50_ms=-30.0, pr90_ms=0.0,
                        pf50_ms=-30.0, pf90_ms=30.0, pfr=4 / 3, extra={"delay": 0.1 + 0.2})
    back = LatencyReport.from_json(rep.to_json())
    assert back == rep
    assert back.to_json() == rep.to_json()
    assert set(LatencyReport.from_json(LatencyReport(1, 0, 0, 0, 0, 0, 0, 0, 1).to_json()).to_dict()) == {
        "n", "ter_pct", "ep50_ms", "ep90_ms", "pr50_ms", "pr90_ms", "pf50_ms", "pf90_ms", "pfr"}


def test_csv_column_order():
    rep = LatencyReport(2, 5.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 1.5)
    text = write_csv({"B1": rep})
    head, row = text.strip().split("\n")
    assert head.split(",") == ["arm"] + list(CSV_COLUMNS)
    assert CSV_COLUMNS[:3] == ("ter_pct", "ep50_ms", "ep90_ms")
    assert row.split(",")[0] == "B1"
    assert [float(x) for x in row.split(",")[1:]] == [5.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 1.5, 2.0]
