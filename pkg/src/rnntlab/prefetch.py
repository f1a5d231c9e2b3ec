"""Prefetch triggering over decoded stream traces.

Two policies are provided:

* ``e2e``: prefetch when the probability of EOQ appended to the current top
  hypothesis reaches a threshold.
* ``silence``: prefetch once the top partial has stayed unchanged for a
  fixed number of frames (a decoder-side stand-in for a silence detector).

Both deduplicate by partial text, skip empty partials, and always end with
a fallback event at the EOQ frame carrying the first-pass result, so every
query has at least one prefetch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .decoder.beam import Hypothesis, StreamTrace


@dataclass(frozen=True)
class PrefetchEvent:
    frame: int
    partial: tuple


@dataclass(frozen=True)
class PrefetchPolicyConfig:
    kind: str = "e2e"
    e2e_threshold: float = 0.5
    silence_frames: int = 6

    def __post_init__(self):
        if self.kind not in ("e2e", "silence"):
            raise ValueError(f"unknown prefetch policy {self.kind!r}")
        if not 0.0 < self.e2e_threshold <= 1.0:
            raise ValueError("e2e_threshold must lie in (0, 1]")
        if self.silence_frames < 1:
            raise ValueError("silence_frames must be >= 1")


def eoq_probe(top_hypothesis: "Hypothesis", h_t, model) -> float:
    """Pr(EOQ | h_t, top hypothesis) from the joint network; touches no decoder state."""
    eoq = model.vocab.eoq_id
    if top_hypothesis.ended(eoq):
        raise ValueError("hypothesis already ends with EOQ")
    lp = model.joint_log_probs(np.asarray(h_t, dtype=np.float64), top_hypothesis.pred_state)
    return float(np.exp(lp[eoq]))


def run_policy(trace: "StreamTrace", cfg: PrefetchPolicyConfig) -> list:
    """Prefetch events for one trace, in frame order, at most one per distinct partial."""
    n = trace.eoq_frame
    if len(trace.partials) < n:
        raise ValueError("trace has fewer partials than its eoq_frame")
    if cfg.kind == "e2e":
        post = trace.eoq_posterior
        if len(post) < n or any(p is None for p in post[:n]):
            raise ValueError("e2e policy needs an EOQ posterior for every frame")
    events, seen = [], set()

    def emit(frame: int, partial: tuple):
        if partial not in seen:
            seen.add(partial)
            events.append(PrefetchEvent(frame, partial))

    run = 0
    for t in range(1, n + 1):
        partial = tuple(trace.partials[t - 1])
        run = run + 1 if t > 1 and partial == tuple(trace.partials[t - 2]) else 1
        if not partial:
            continue
        if cfg.kind == "e2e":
            if trace.eoq_posterior[t - 1] >= cfg.e2e_threshold:
                emit(t, partial)
        elif run == cfg.silence_frames:
            emit(t, partial)
    emit(n, tuple(trace.first_pass_tokens))
    return events
