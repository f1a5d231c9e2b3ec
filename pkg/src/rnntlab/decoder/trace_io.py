"""JSON-lines trace files: one ``frame`` record per decoded frame, a ``final``
footer per utterance and optional ``prefetch`` records."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Optional

from .beam import Hypothesis, StreamTrace


def _hyp_to_dict(h: Optional[Hypothesis]):
    if h is None:
        return None
    return {"tokens": list(h.tokens), "emit_frames": list(h.emit_frames),
            "log_score": float(h.log_score), "eoq_prob": h.eoq_prob}


def _hyp_from_dict(d) -> Optional[Hypothesis]:
    if d is None:
        return None
    return Hypothesis(tuple(d["tokens"]), tuple(d["emit_frames"]), d["log_score"], None, d["eoq_prob"])


def trace_records(trace: StreamTrace, events: Iterable = ()) -> list:
    recs = []
    for t, (partial, score, post) in enumerate(zip(trace.partials, trace.top_scores,
                                                   trace.eoq_posterior), start=1):
        recs.append({"type": "frame", "utt": trace.utt_id, "frame": t, "partial_tokens": list(partial),
                     "top_score": score, "eoq_posterior": post})
    recs.append({
        "type": "final", "utt": trace.utt_id, "eoq_frame": trace.eoq_frame,
        "eoq_fired": trace.eoq_fired, "frame_ms": trace.frame_ms, "eoq_id": trace.eoq_id,
        "first_pass": _hyp_to_dict(trace.final_first_pass),
        "two_pass": _hyp_to_dict(trace.final_two_pass),
    })
    for ev in events:
        recs.append({"type": "prefetch", "utt": trace.utt_id, "frame": ev.frame,
                     "partial_tokens": list(ev.partial)})
    return recs


def write_traces(path, traces: Iterable[StreamTrace], events_by_utt: Optional[dict] = None) -> None:
    events_by_utt = events_by_utt or {}
    with Path(path).open("w") as fh:
        for tr in traces:
            for rec in trace_records(tr, events_by_utt.get(tr.utt_id, ())):
                fh.write(json.dumps(rec) + "\n")


def read_traces(path):
    """Parse a trace file into ``(traces_by_utt, prefetch_events_by_utt)``, both in file order."""
    from ..prefetch import PrefetchEvent

    frames: dict = {}
    traces: dict = {}
    events: dict = {}
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            kind, utt = rec.get("type"), rec.get("utt")
            if kind == "frame":
                frames.setdefault(utt, []).append(rec)
            elif kind == "final":
                fr = frames.pop(utt, [])
                if [r["frame"] for r in fr] != list(range(1, len(fr) + 1)):
                    raise ValueError(f"line {lineno}: frames of {utt!r} are not contiguous")
                traces[utt] = StreamTrace(
                    partials=[tuple(r["partial_tokens"]) for r in fr],
                    top_scores=[r["top_score"] for r in fr],
                    eoq_posterior=[r["eoq_posterior"] for r in fr],
                    eoq_frame=rec["eoq_frame"],
                    final_first_pass=_hyp_from_dict(rec["first_pass"]),
                    eoq_id=rec["eoq_id"],
                    eoq_fired=rec["eoq_fired"],
                    final_two_pass=_hyp_from_dict(rec["two_pass"]),
                    frame_ms=rec["frame_ms"],
                    utt_id=utt,
                )
            elif kind == "prefetch":
                events.setdefault(utt, []).append(PrefetchEvent(rec["frame"], tuple(rec["partial_tokens"])))
            else:
                raise ValueError(f"line {lineno}: unknown record type {kind!r}")
    if frames:
        raise ValueError(f"trace file ends without a final record for {sorted(frames)}")
    return traces, events
