"""Cascaded-encoder decoding: causal streaming pass, then a non-causal rerun at EOQ.

Both passes use the same prediction and joint networks; only the encoder
frames differ.
"""
from __future__ import annotations

import numpy as np

from .beam import BeamConfig, Hypothesis, StreamTrace, decode_offline, decode_streaming


def decode_two_pass(frames, model, cfg: BeamConfig, probe_eoq: bool = True,
                    frame_ms: float = 30.0, utt_id: str = "") -> StreamTrace:
    """Stream the first pass; at its EOQ frame run the second pass over frames [1..eoq_frame].

    The second pass starts from a fresh beam and never sees encoder frames
    beyond the first pass's EOQ frame.
    """
    if not getattr(model, "has_second_pass", False):
        raise ValueError("model has no non-causal layers for a second pass")
    causal = model.encode_first_pass(frames)
    trace = decode_streaming(causal, model, cfg, probe_eoq=probe_eoq, frame_ms=frame_ms, utt_id=utt_id)
    second = model.encode_second_pass(causal[:trace.eoq_frame])
    trace.final_two_pass = decode_offline(second, model, cfg)
    return trace


def decode_first_pass(frames, model, cfg: BeamConfig, probe_eoq: bool = True,
                      frame_ms: float = 30.0, utt_id: str = "") -> StreamTrace:
    causal = model.encode_first_pass(frames)
    return decode_streaming(causal, model, cfg, probe_eoq=probe_eoq, frame_ms=frame_ms, utt_id=utt_id)


def decode_noncausal(frames, model, cfg: BeamConfig) -> Hypothesis:
    """Non-streaming single pass: cascade over the whole utterance, no endpointing."""
    if not getattr(model, "has_second_pass", False):
        raise ValueError("model has no non-causal layers")
    causal = model.encode_first_pass(np.asarray(frames, dtype=np.float64))
    return decode_offline(model.encode_second_pass(causal), model, cfg)
