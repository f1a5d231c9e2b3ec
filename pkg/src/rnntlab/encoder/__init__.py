"""Streaming Conformer encoder and cascaded non-causal second-pass layers."""
from .conformer import ConformerConfig, conformer_block, group_normalize, init_block_params, local_mask
from .stack import (
    EncoderStack,
    StreamState,
    encode_cascade,
    encode_causal,
    encode_streaming_step,
    init_stream_state,
    split_right_context,
)

__all__ = [
    "ConformerConfig", "conformer_block", "group_normalize", "init_block_params", "local_mask",
    "EncoderStack", "StreamState", "encode_cascade", "encode_causal", "encode_streaming_step",
    "init_stream_state", "split_right_context",
]
