"""Prediction/joint networks, streaming beam search and cascaded two-pass decoding."""
from .beam import BeamConfig, DecoderModel, Hypothesis, StreamTrace, beam_step, decode_offline, decode_streaming
from .networks import joint_logits, predict_step
from .trace_io import read_traces, write_traces
from .two_pass import decode_first_pass, decode_noncausal, decode_two_pass

__all__ = [
    "BeamConfig", "DecoderModel", "Hypothesis", "StreamTrace", "beam_step", "decode_offline",
    "decode_streaming", "joint_logits", "predict_step", "read_traces", "write_traces",
    "decode_first_pass", "decode_noncausal", "decode_two_pass",
]
