"""The transducer model: Conformer encoder stacks, GRU prediction network, joint network."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .decoder import networks
from .encoder.conformer import ConformerConfig
from .encoder.stack import EncoderStack, encode_cascade, encode_causal
from .numerics import autodiff as ad
from .numerics.autodiff import Parameter, Tensor
from .numerics.logspace import log_softmax
from .transducer.lattice import Vocab

CHECKPOINT_FORMAT = "rnntlab-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 16
    vocab_size: int = 16
    conformer: ConformerConfig = field(default_factory=ConformerConfig)
    num_causal: int = 2
    num_noncausal: int = 1
    right_context: int = 4
    right_context_mode: str = "per_layer"
    embed_dim: int = 16
    pred_dim: int = 32
    joint_dim: int = 32
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conformer"] = self.conformer.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "conformer" in d:
            d["conformer"] = ConformerConfig(**d["conformer"])
        return cls(**d)


class TransducerModel:
    """Parameters plus the decoding interface used by the beam search."""

    def __init__(self, cfg: ModelConfig, params: dict | None = None):
        self.cfg = cfg
        self.vocab = Vocab(cfg.vocab_size)
        rng = np.random.default_rng(cfg.seed)
        nc_cfg = replace(cfg.conformer, right_context=cfg.right_context) if cfg.num_noncausal else None
        self.encoder = EncoderStack.create(cfg.input_dim, cfg.conformer, cfg.num_causal, nc_cfg,
                                           cfg.num_noncausal, rng, cfg.right_context_mode)
        fresh = dict(self.encoder.params)
        fresh.update(networks.init_predictor_params(self.vocab.total, cfg.embed_dim, cfg.pred_dim, rng))
        fresh.update(networks.init_joint_params(cfg.conformer.model_dim, cfg.pred_dim, cfg.joint_dim,
                                                self.vocab.total, rng))
        if params is not None:
            if set(params) != set(fresh):
                raise ValueError("checkpoint parameters do not match the model layout")
            for name, p in fresh.items():
                value = np.asarray(params[name], dtype=np.float64)
                if value.shape != p.data.shape:
                    raise ValueError(f"shape mismatch for {name}: {value.shape} vs {p.data.shape}")
                p.data[...] = value
        self.params = fresh

    # -- decoding interface

    @property
    def has_second_pass(self) -> bool:
        return self.cfg.num_noncausal > 0

    def initial_pred_state(self) -> np.ndarray:
        return np.zeros(self.cfg.pred_dim)

    def predict(self, state, token: int) -> np.ndarray:
        return networks.predict_step(state, token, self.params, self.vocab.blank_id)[0]

    def joint_log_probs(self, h, state) -> np.ndarray:
        return log_softmax(networks.joint_logits(h, state, self.params))

    def encode_first_pass(self, frames) -> np.ndarray:
        return encode_causal(frames, self.encoder)

    def encode_second_pass(self, causal_out) -> np.ndarray:
        return encode_cascade(causal_out, self.encoder)

    # -- training graph

    def lattice_logits(self, feats, frame_mask, tokens, second_pass: bool = False):
        """Joint logits for a padded batch; returns ``(first_pass, second_pass_or_None)``."""
        enc = self.encoder.forward_causal(feats, frame_mask)
        pred = networks.predict_sequence(tokens, self.params, self.cfg.pred_dim)
        first = networks.joint_train(enc, pred, self.params)
        second = None
        if second_pass:
            enc2 = self.encoder.forward_cascade(enc, frame_mask)
            second = networks.joint_train(enc2, pred, self.params)
        return first, second

    def parameters(self) -> list:
        return [self.params[k] for k in sorted(self.params)]

    # -- checkpoints

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "model_config": self.cfg.to_dict(),
            "params": {k: {"shape": list(p.data.shape), "values": p.data.ravel().tolist()}
                       for k, p in sorted(self.params.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransducerModel":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not an rnntlab checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        params = {k: np.asarray(v["values"], dtype=np.float64).reshape(v["shape"])
                  for k, v in d["params"].items()}
        return cls(ModelConfig.from_dict(d["model_config"]), params)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TransducerModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def stream_encoder_frames(frames, model: TransducerModel):
    """Yield first-pass encodings one frame at a time through the streaming state."""
    from .encoder.stack import encode_streaming_step, init_stream_state

    state = init_stream_state(model.encoder)
    for f in np.asarray(frames, dtype=np.float64):
        state, out = encode_streaming_step(state, f, model.encoder)
        yield out


__all__ = ["ModelConfig", "TransducerModel", "stream_encoder_frames", "Parameter", "Tensor", "ad"]
