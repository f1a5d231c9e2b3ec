"""Streaming Conformer block with the convolution module ahead of self-attention.

Block order: half-step FFN -> convolution module (GLU, depthwise conv, group
norm, swish, pointwise) -> local multi-head self-attention -> half-step FFN
-> layer norm. There is no positional encoding anywhere.

A layer's ``right_context`` is its whole lookahead budget in frames. The
depthwise conv takes ``min((kernel_size-1)//2, right_context)`` of it (so it
is symmetric once the budget allows) and attention takes the remainder.
With ``right_context = 0`` the block is strictly causal.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..numerics import autodiff as ad
from ..numerics.autodiff import Parameter, Tensor

LN_EPS = 1e-5
GN_EPS = 1e-5


@dataclass(frozen=True)
class ConformerConfig:
    model_dim: int = 32
    num_heads: int = 4
    kernel_size: int = 5
    left_context: int = 16
    right_context: int = 0
    num_groups: int = 4
    ffn_expansion: int = 4

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise ValueError("model_dim must be divisible by num_heads")
        if self.model_dim % self.num_groups:
            raise ValueError("model_dim must be divisible by num_groups")
        if self.kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        if self.left_context < 0 or self.right_context < 0:
            raise ValueError("context sizes must be >= 0")

    @property
    def conv_right(self) -> int:
        return min((self.kernel_size - 1) // 2, self.right_context)

    @property
    def conv_left(self) -> int:
        return self.kernel_size - 1 - self.conv_right

    @property
    def attn_right(self) -> int:
        return self.right_context - self.conv_right

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)


def group_normalize(x, num_groups: int, eps: float = GN_EPS, scale=None, shift=None) -> np.ndarray:
    """Per-frame group normalisation of ``x`` [..., d] (numpy in, numpy out)."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if eps <= 0:
        raise ValueError("eps must be positive")
    scale = np.ones(d) if scale is None else scale
    shift = np.zeros(d) if shift is None else shift
    with ad.no_grad():
        return ad.group_norm(x, scale, shift, num_groups, eps).data


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_block_params(cfg: ConformerConfig, rng: np.random.Generator, prefix: str = "") -> dict:
    """Fan-in scaled uniform weights, zero biases, unit norm gains."""
    d, e, k = cfg.model_dim, cfg.ffn_expansion * cfg.model_dim, cfg.kernel_size
    shapes = {}
    for ffn in ("ffn1", "ffn2"):
        shapes.update({
            f"{ffn}.ln_g": ("one", (d,)), f"{ffn}.ln_b": ("zero", (d,)),
            f"{ffn}.w1": (d, (d, e)), f"{ffn}.b1": ("zero", (e,)),
            f"{ffn}.w2": (e, (e, d)), f"{ffn}.b2": ("zero", (d,)),
        })
    shapes.update({
        "conv.ln_g": ("one", (d,)), "conv.ln_b": ("zero", (d,)),
        "conv.pw1": (d, (d, 2 * d)), "conv.pw1_b": ("zero", (2 * d,)),
        "conv.dw": (k, (k, d)),
        "conv.gn_g": ("one", (d,)), "conv.gn_b": ("zero", (d,)),
        "conv.pw2": (d, (d, d)), "conv.pw2_b": ("zero", (d,)),
        "attn.ln_g": ("one", (d,)), "attn.ln_b": ("zero", (d,)),
        "attn.wq": (d, (d, d)), "attn.bq": ("zero", (d,)),
        "attn.wk": (d, (d, d)), "attn.bk": ("zero", (d,)),
        "attn.wv": (d, (d, d)), "attn.bv": ("zero", (d,)),
        "attn.wo": (d, (d, d)), "attn.bo": ("zero", (d,)),
        "out.ln_g": ("one", (d,)), "out.ln_b": ("zero", (d,)),
    })
    params = {}
    for name, (kind, shape) in shapes.items():
        if kind == "one":
            value = np.ones(shape)
        elif kind == "zero":
            value = np.zeros(shape)
        else:
            value = _uniform(rng, kind, shape)
        params[name] = Parameter(value, name=prefix + name)
    return params


# ---------------------------------------------------------------- sub-modules


def ffn_half(x: Tensor, p: dict, name: str) -> Tensor:
    h = ad.layer_norm(x, p[f"{name}.ln_g"], p[f"{name}.ln_b"], LN_EPS)
    h = ad.swish(ad.linear(h, p[f"{name}.w1"], p[f"{name}.b1"]))
    h = ad.linear(h, p[f"{name}.w2"], p[f"{name}.b2"])
    return x + 0.5 * h


def conv_gate(x: Tensor, p: dict) -> Tensor:
    """Layer norm + pointwise expansion + GLU: the input of the depthwise conv."""
    h = ad.layer_norm(x, p["conv.ln_g"], p["conv.ln_b"], LN_EPS)
    return ad.glu(ad.linear(h, p["conv.pw1"], p["conv.pw1_b"]))


def conv_finish(x: Tensor, dw_out: Tensor, p: dict, cfg: ConformerConfig) -> Tensor:
    h = ad.group_norm(dw_out, p["conv.gn_g"], p["conv.gn_b"], cfg.num_groups, GN_EPS)
    h = ad.linear(ad.swish(h), p["conv.pw2"], p["conv.pw2_b"])
    return x + h


def attn_qkv(x: Tensor, p: dict):
    h = ad.layer_norm(x, p["attn.ln_g"], p["attn.ln_b"], LN_EPS)
    q = ad.linear(h, p["attn.wq"], p["attn.bq"])
    k = ad.linear(h, p["attn.wk"], p["attn.bk"])
    v = ad.linear(h, p["attn.wv"], p["attn.bv"])
    return q, k, v


def _split_heads(x: Tensor, cfg: ConformerConfig) -> Tensor:
    # [..., T, d] -> [..., H, T, dh]
    lead = x.shape[:-2]
    t = x.shape[-2]
    x = ad.reshape(x, lead + (t, cfg.num_heads, cfg.head_dim))
    n = len(lead)
    return ad.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))


def _merge_heads(x: Tensor, cfg: ConformerConfig) -> Tensor:
    lead = x.shape[:-3]
    n = len(lead)
    t = x.shape[-2]
    x = ad.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))
    return ad.reshape(x, lead + (t, cfg.model_dim))


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray, cfg: ConformerConfig) -> Tensor:
    """softmax(Q K^T / sqrt(dh)) V per head; ``mask`` [..., Tq, Tk] marks allowed keys."""
    qh, kh, vh = (_split_heads(z, cfg) for z in (q, k, v))
    scores = ad.matmul(qh, ad.transpose(kh, tuple(range(kh.ndim - 2)) + (kh.ndim - 1, kh.ndim - 2)))
    scores = scores * (1.0 / np.sqrt(cfg.head_dim))
    probs = ad.softmax(scores, axis=-1, mask=np.expand_dims(mask, -3))
    return _merge_heads(ad.matmul(probs, vh), cfg)


def attn_finish(x: Tensor, ctx: Tensor, p: dict) -> Tensor:
    return x + ad.linear(ctx, p["attn.wo"], p["attn.bo"])


def local_mask(t_len: int, left: int, right: int) -> np.ndarray:
    """[T, T] boolean band: query t may read keys in [t - left, t + right]."""
    d = np.arange(t_len)[None, :] - np.arange(t_len)[:, None]
    return (d >= -left) & (d <= right)


# ---------------------------------------------------------------- block


def conformer_block(x, params: dict, cfg: ConformerConfig, frame_mask=None) -> Tensor:
    """Apply one block to ``x`` [..., T, d].

    ``frame_mask`` ([..., T], True on real frames) keeps padded frames of a
    batch from leaking into real ones: they are zeroed before the conv and
    never used as attention keys.
    """
    x = ad.as_tensor(x)
    if x.shape[-1] != cfg.model_dim:
        raise ValueError(f"expected feature width {cfg.model_dim}, got {x.shape[-1]}")
    t_len = x.shape[-2]
    x = ffn_half(x, params, "ffn1")
    g = conv_gate(x, params)
    if frame_mask is not None:
        g = g * np.asarray(frame_mask, dtype=np.float64)[..., None]
    dw = ad.depthwise_conv1d(g, params["conv.dw"], cfg.conv_left, cfg.conv_right)
    x = conv_finish(x, dw, params, cfg)
    mask = local_mask(t_len, cfg.left_context, cfg.attn_right)
    if frame_mask is not None:
        mask = mask & np.asarray(frame_mask, dtype=bool)[..., None, :]
    q, k, v = attn_qkv(x, params)
    x = attn_finish(x, attention(q, k, v, mask, cfg), params)
    x = ffn_half(x, params, "ffn2")
    return ad.layer_norm(x, params["out.ln_g"], params["out.ln_b"], LN_EPS)
