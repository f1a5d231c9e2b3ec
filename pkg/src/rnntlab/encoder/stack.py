"""Causal encoder stack plus cascaded non-causal layers, and frame-by-frame streaming."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..numerics import autodiff as ad
from ..numerics.autodiff import Parameter, Tensor
from .conformer import (
    ConformerConfig,
    attention,
    attn_finish,
    attn_qkv,
    conformer_block,
    conv_finish,
    conv_gate,
    ffn_half,
    init_block_params,
    _uniform,
)


def split_right_context(total: int, n_layers: int) -> list:
    """Spread a total lookahead over ``n_layers`` (earlier layers take the remainder)."""
    base, rem = divmod(total, n_layers)
    return [base + (1 if i < rem else 0) for i in range(n_layers)]


@dataclass
class EncoderStack:
    """Input projection, causal Conformer blocks and optional non-causal blocks.

    Non-causal blocks only ever see the causal blocks' outputs; both stacks
    emit ``model_dim`` wide frames so one decoder can consume either.
    """

    input_dim: int
    causal_cfgs: list
    noncausal_cfgs: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.causal_cfgs:
            raise ValueError("at least one causal layer is required")
        if any(c.right_context for c in self.causal_cfgs):
            raise ValueError("causal layers must have right_context = 0")
        dims = {c.model_dim for c in self.causal_cfgs + self.noncausal_cfgs}
        if len(dims) != 1:
            raise ValueError("all layers must share model_dim")
        self._blocks = {}

    @classmethod
    def create(cls, input_dim: int, causal_cfg: ConformerConfig, num_causal: int,
               noncausal_cfg: Optional[ConformerConfig] = None, num_noncausal: int = 0,
               rng: Optional[np.random.Generator] = None,
               right_context_mode: str = "per_layer") -> "EncoderStack":
        """Build a stack with freshly initialised parameters.

        ``right_context_mode='total'`` reads ``noncausal_cfg.right_context`` as the
        lookahead of the whole non-causal stack and splits it across layers.
        """
        rng = rng if rng is not None else np.random.default_rng(0)
        causal_cfg = replace(causal_cfg, right_context=0)
        causal = [causal_cfg] * num_causal
        noncausal = []
        if num_noncausal:
            if noncausal_cfg is None:
                raise ValueError("noncausal_cfg required when num_noncausal > 0")
            if right_context_mode == "per_layer":
                noncausal = [noncausal_cfg] * num_noncausal
            elif right_context_mode == "total":
                noncausal = [replace(noncausal_cfg, right_context=r)
                             for r in split_right_context(noncausal_cfg.right_context, num_noncausal)]
            else:
                raise ValueError(f"unknown right_context_mode {right_context_mode!r}")
        d = causal_cfg.model_dim
        params = {
            "input.w": Parameter(_uniform(rng, input_dim, (input_dim, d)), "input.w"),
            "input.b": Parameter(np.zeros(d), "input.b"),
        }
        for kind, cfgs in (("causal", causal), ("noncausal", noncausal)):
            for i, c in enumerate(cfgs):
                prefix = f"{kind}.{i}."
                for name, p in init_block_params(c, rng, prefix).items():
                    params[prefix + name] = p
        return cls(input_dim, causal, noncausal, params)

    @property
    def model_dim(self) -> int:
        return self.causal_cfgs[0].model_dim

    def block_params(self, kind: str, index: int) -> dict:
        key = (kind, index)
        if key not in self._blocks:
            prefix = f"{kind}.{index}."
            self._blocks[key] = {k[len(prefix):]: v for k, v in self.params.items()
                                 if k.startswith(prefix)}
        return self._blocks[key]

    def project(self, frames) -> Tensor:
        frames = ad.as_tensor(frames)
        if frames.shape[-1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim}-dim frames, got {frames.shape[-1]}")
        return ad.linear(frames, self.params["input.w"], self.params["input.b"])

    def forward_causal(self, frames, frame_mask=None) -> Tensor:
        x = self.project(frames)
        for i, c in enumerate(self.causal_cfgs):
            x = conformer_block(x, self.block_params("causal", i), c, frame_mask)
        return x

    def forward_cascade(self, causal_out, frame_mask=None) -> Tensor:
        if not self.noncausal_cfgs:
            raise ValueError("encoder has no non-causal layers")
        x = ad.as_tensor(causal_out)
        for i, c in enumerate(self.noncausal_cfgs):
            x = conformer_block(x, self.block_params("noncausal", i), c, frame_mask)
        return x

    def lookahead(self) -> int:
        return sum(c.right_context for c in self.noncausal_cfgs)


def encode_causal(frames, stack: EncoderStack) -> np.ndarray:
    """[T, d_in] features -> [T, d] first-pass encodings (frame t sees frames <= t)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError("encode_causal needs a non-empty [T, d_in] array")
    with ad.no_grad():
        return stack.forward_causal(frames).data


def encode_cascade(causal_out, stack: EncoderStack) -> np.ndarray:
    """[T, d] causal encodings -> [T, d] second-pass encodings with right context."""
    causal_out = np.asarray(causal_out, dtype=np.float64)
    if causal_out.ndim != 2 or causal_out.shape[0] == 0:
        raise ValueError("encode_cascade needs a non-empty [T, d] array")
    with ad.no_grad():
        return stack.forward_cascade(causal_out).data


# ---------------------------------------------------------------- streaming


@dataclass(frozen=True)
class LayerCache:
    conv_hist: np.ndarray  # [kernel_size - 1, d] conv inputs of the previous frames
    keys: np.ndarray       # [<= left_context, d]
    values: np.ndarray


@dataclass(frozen=True)
class StreamState:
    """Per-layer ring buffers for one streaming session. Never mutated in place."""

    layers: tuple
    frames_seen: int = 0


def init_stream_state(stack: EncoderStack) -> StreamState:
    d = stack.model_dim
    layers = tuple(
        LayerCache(np.zeros((c.kernel_size - 1, d)), np.zeros((0, d)), np.zeros((0, d)))
        for c in stack.causal_cfgs)
    return StreamState(layers, 0)


def _stream_block(x: Tensor, p: dict, cfg: ConformerConfig, cache: LayerCache):
    x = ffn_half(x, p, "ffn1")
    g = conv_gate(x, p)
    window = ad.concat([cache.conv_hist, g], axis=0)
    dw = ad.depthwise_conv1d(window, p["conv.dw"], cfg.kernel_size - 1, 0)[-1:]
    x = conv_finish(x, dw, p, cfg)
    q, k, v = attn_qkv(x, p)
    keys = np.concatenate([cache.keys, k.data], axis=0)
    values = np.concatenate([cache.values, v.data], axis=0)
    ctx = attention(q, keys, values, np.ones((1, keys.shape[0]), dtype=bool), cfg)
    x = attn_finish(x, ctx, p)
    x = ffn_half(x, p, "ffn2")
    x = ad.layer_norm(x, p["out.ln_g"], p["out.ln_b"])
    start = max(0, keys.shape[0] - cfg.left_context)
    new_cache = LayerCache(
        conv_hist=window.data[1:].copy(),
        keys=keys[start:].copy(),
        values=values[start:].copy(),
    )
    return x, new_cache


def encode_streaming_step(state: StreamState, frame, stack: EncoderStack):
    """Consume one [d_in] feature frame; returns ``(new_state, [d] encoding)``."""
    frame = np.asarray(frame, dtype=np.float64).reshape(-1)
    if frame.shape[0] != stack.input_dim:
        raise ValueError(f"frame width {frame.shape[0]} != encoder input {stack.input_dim}")
    if len(state.layers) != len(stack.causal_cfgs):
        raise ValueError("stream state was created for a different stack")
    new_layers = []
    with ad.no_grad():
        x = stack.project(frame[None, :])
        for i, (c, cache) in enumerate(zip(stack.causal_cfgs, state.layers)):
            x, new_cache = _stream_block(x, stack.block_params("causal", i), c, cache)
            new_layers.append(new_cache)
    return StreamState(tuple(new_layers), state.frames_seen + 1), x.data[0].copy()
