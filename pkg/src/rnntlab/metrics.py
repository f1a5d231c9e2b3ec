"""Latency and accuracy metrics: endpointer, partial and prefetch latency, prefetch
rate and token error rate. All frame indices are 1-based and latencies are
``(frame - eos_frame) * frame_ms``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ._kernels import edit_distance

REPORT_COLUMNS = ("n", "ter_pct", "ep50_ms", "ep90_ms", "pr50_ms", "pr90_ms", "pf50_ms", "pf90_ms", "pfr")
# column order of the published results table
CSV_COLUMNS = ("ter_pct", "ep50_ms", "ep90_ms", "pr50_ms", "pr90_ms", "pf50_ms", "pf90_ms", "pfr", "n")


@dataclass
class UtteranceResult:
    trace: object
    prefetch_events: list
    eos_frame: int
    reference_tokens: tuple
    # compare partials against the system result (second pass when present) or the first pass
    partial_reference: str = "system"

    def __post_init__(self):
        if self.partial_reference not in ("system", "first_pass"):
            raise ValueError("partial_reference must be 'system' or 'first_pass'")

    @property
    def final_tokens(self) -> tuple:
        return tuple(self.trace.final_tokens)

    @property
    def partial_target(self) -> tuple:
        if self.partial_reference == "first_pass":
            return tuple(self.trace.first_pass_tokens)
        return self.final_tokens


@dataclass
class LatencyReport:
    n: int
    ter_pct: float
    ep50_ms: float
    ep90_ms: float
    pr50_ms: float
    pr90_ms: float
    pf50_ms: float
    pf90_ms: float
    pfr: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in REPORT_COLUMNS}
        if self.extra:
            d["extra"] = self.extra
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyReport":
        return cls(**{k: d[k] for k in REPORT_COLUMNS}, extra=d.get("extra", {}))

    @classmethod
    def from_json(cls, s: str) -> "LatencyReport":
        return cls.from_dict(json.loads(s))

    def csv_row(self, label: Optional[str] = None) -> list:
        row = [getattr(self, k) for k in CSV_COLUMNS]
        return row if label is None else [label] + row


def write_csv(reports: dict) -> str:
    """CSV text with one row per labelled report."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("arm",) + CSV_COLUMNS)
    for label, rep in reports.items():
        w.writerow(rep.csv_row(label))
    return buf.getvalue()


def percentile(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ``ceil(p/100 * n)``-th smallest value."""
    vals = sorted(values)
    if not vals:
        raise ValueError("percentile of an empty sequence")
    if not 0 < p <= 100:
        raise ValueError("p must lie in (0, 100]")
    rank = max(1, math.ceil(p / 100.0 * len(vals)))
    return vals[rank - 1]


def endpointer_latency(result: UtteranceResult) -> float:
    tr = result.trace
    return (tr.eoq_frame - result.eos_frame) * tr.frame_ms


def first_correct_partial_frame(result: UtteranceResult) -> int:
    """First frame whose partial equals the target result; the EOQ frame if none does."""
    tr = result.trace
    target = result.partial_target
    for t in range(1, tr.eoq_frame + 1):
        if tuple(tr.partials[t - 1]) == target:
            return t
    return tr.eoq_frame


def partial_latency(result: UtteranceResult) -> float:
    return (first_correct_partial_frame(result) - result.eos_frame) * result.trace.frame_ms


def prefetch_latency(result: UtteranceResult):
    """``(latency_ms, prefetch_count)``: first event matching the final result, else the endpointer latency."""
    final = result.final_tokens
    for ev in result.prefetch_events:
        if tuple(ev.partial) == final:
            return (ev.frame - result.eos_frame) * result.trace.frame_ms, len(result.prefetch_events)
    return endpointer_latency(result), len(result.prefetch_events)


def strip_eoq(tokens, eoq_id: Optional[int]) -> tuple:
    return tuple(k for k in tokens if k != eoq_id)


def token_errors(hypothesis, reference) -> int:
    return edit_distance(reference, hypothesis)


def token_error_rate(hypotheses: Sequence, references: Sequence, eoq_id: Optional[int] = None) -> float:
    """Summed edit distance over total reference length, in percent (EOQ ignored)."""
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references must align")
    refs = [strip_eoq(r, eoq_id) for r in references]
    total = sum(len(r) for r in refs)
    if total == 0:
        raise ValueError("reference corpus is empty")
    errs = sum(edit_distance(r, strip_eoq(h, eoq_id)) for h, r in zip(hypotheses, refs))
    return 100.0 * errs / total


def aggregate(results: Sequence[UtteranceResult], eoq_id: Optional[int] = None) -> LatencyReport:
    if not results:
        raise ValueError("aggregate needs at least one result")
    ep = [endpointer_latency(r) for r in results]
    pr = [partial_latency(r) for r in results]
    pf, counts = zip(*(prefetch_latency(r) for r in results))
    ter = token_error_rate([r.final_tokens for r in results], [r.reference_tokens for r in results], eoq_id)
    return LatencyReport(
        n=len(results), ter_pct=ter,
        ep50_ms=percentile(ep, 50), ep90_ms=percentile(ep, 90),
        pr50_ms=percentile(pr, 50), pr90_ms=percentile(pr, 90),
        pf50_ms=percentile(pf, 50), pf90_ms=percentile(pf, 90),
        pfr=sum(counts) / len(counts),
    )


__all__ = [
    "UtteranceResult", "LatencyReport", "percentile", "endpointer_latency", "partial_latency",
    "prefetch_latency", "token_error_rate", "aggregate", "write_csv", "first_correct_partial_frame",
    "REPORT_COLUMNS", "CSV_COLUMNS",
]
