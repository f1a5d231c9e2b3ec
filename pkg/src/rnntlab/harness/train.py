"""Mini-batch training of the transducer on synthetic utterances."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..model import ModelConfig, TransducerModel
from ..numerics import autodiff as ad
from ..transducer.loss import LossItem, rnnt_loss
from ..transducer.penalties import AlignmentRef, RegularizerConfig
from .data import Utterance

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """Raised when the loss or the parameters become non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1500
    batch_size: int = 8
    learning_rate: float = 3e-3
    warmup_steps: int = 100
    # first-moment decay; 0 keeps the update momentum-free
    beta1: float = 0.0
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 5.0
    # which frame of a token's span is its reference emission time
    align_anchor: str = "start"
    train_second_pass: bool = True
    # the cascade pass runs after the endpoint, so emission regularizers default to the causal pass
    regularize_second_pass: bool = False
    # FastEmit stays off until this step; from scratch it can pull every emission onto
    # the first frames before the encoder carries token identity
    fastemit_start_step: int = 400
    seed: int = 0
    log_every: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("steps >= 0, batch_size >= 1 and learning_rate > 0 required")
        if self.warmup_steps < 0 or self.fastemit_start_step < 0:
            raise ValueError("warmup_steps and fastemit_start_step must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.align_anchor not in ("start", "center", "end"):
            raise ValueError("align_anchor must be start, center or end")

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "TrainConfig":
        return cls(**(d or {}))

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adam with bias correction; ``beta1=0`` gives the momentum-free variant."""

    def __init__(self, params: Sequence[ad.Parameter], lr: float, beta1: float = 0.0,
                 beta2: float = 0.999, eps: float = 1e-8, grad_clip: float = 0.0):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps, self.grad_clip = lr, beta1, beta2, eps, grad_clip
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> float:
        """Apply one update from the accumulated ``.grad``; returns the pre-clip gradient norm."""
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
        if not np.isfinite(norm):
            raise TrainingDiverged("non-finite gradient norm")
        scale = self.grad_clip / norm if self.grad_clip and norm > self.grad_clip else 1.0
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g * scale
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm


def reference_frames(utt: Utterance, anchor: str = "start") -> list:
    """Reference emission frame per target token, plus ``eos_frame + 1`` for EOQ (clipped to T)."""
    out = []
    for s, e in utt.token_boundaries:
        out.append(s if anchor == "start" else e if anchor == "end" else (s + e) // 2)
    out.append(min(utt.eos_frame + 1, utt.T))
    return out


@dataclass
class Batch:
    feats: np.ndarray       # [B, T_max, d_in]
    frame_mask: np.ndarray  # [B, T_max] bool
    tokens: np.ndarray      # [B, U_max] padded with token 1 (never scored)
    items: list


def make_batch(utts: Sequence[Utterance], eoq_id: int, anchor: str = "start") -> Batch:
    B = len(utts)
    T_max = max(u.T for u in utts)
    tgts = [tuple(u.targets) + (eoq_id,) for u in utts]
    U_max = max(len(t) for t in tgts)
    feats = np.zeros((B, T_max, utts[0].frames.shape[1]))
    mask = np.zeros((B, T_max), dtype=bool)
    tokens = np.ones((B, U_max), dtype=np.int64)
    items = []
    for b, (u, t) in enumerate(zip(utts, tgts)):
        feats[b, :u.T] = u.frames
        mask[b, :u.T] = True
        tokens[b, :len(t)] = t
        items.append(LossItem(targets=t, n_frames=u.T, eos_frame=u.eos_frame,
                              align=AlignmentRef(reference_frames(u, anchor))))
    return Batch(feats, mask, tokens, items)


def batch_loss(model: TransducerModel, batch: Batch, reg: RegularizerConfig,
               second_pass: bool, second_reg: Optional[RegularizerConfig] = None) -> ad.Tensor:
    """Causal-pass loss, plus the cascade-pass loss through the shared decoder if requested.

    ``second_reg`` regularizes the cascade pass (unregularized when None).
    """
    first, second = model.lattice_logits(batch.feats, batch.frame_mask, batch.tokens, second_pass)
    eoq = model.vocab.eoq_id
    loss = rnnt_loss(first, batch.items, reg, eoq)
    if second is not None:
        loss = loss + rnnt_loss(second, batch.items, second_reg or RegularizerConfig(), eoq)
    return loss


@dataclass
class TrainResult:
    model: TransducerModel
    losses: list = field(default_factory=list)
    seconds: float = 0.0


def evaluate_loss(model: TransducerModel, utts: Sequence[Utterance], reg: RegularizerConfig = RegularizerConfig(),
                  second_pass: bool = False, anchor: str = "start") -> float:
    with ad.no_grad():
        return float(batch_loss(model, make_batch(utts, model.vocab.eoq_id, anchor), reg, second_pass).data)


def train(utts: Sequence[Utterance], model_cfg: ModelConfig, train_cfg: TrainConfig,
          reg: RegularizerConfig = RegularizerConfig(), model: Optional[TransducerModel] = None) -> TrainResult:
    """Fit a transducer by mini-batch Adam; the loss curve is per-step mean NLL (per utterance)."""
    if not utts:
        raise ValueError("no training utterances")
    model = model if model is not None else TransducerModel(model_cfg)
    second = train_cfg.train_second_pass and model.has_second_pass
    early_reg = replace(reg, lambda_fastemit=0.0)
    params = model.parameters()
    opt = Adam(params, train_cfg.learning_rate, train_cfg.beta1, train_cfg.beta2, train_cfg.eps,
               train_cfg.grad_clip)
    rng = np.random.default_rng([train_cfg.seed, 3])
    order = rng.permutation(len(utts))
    pos = 0
    losses = []
    start = time.perf_counter()
    eoq = model.vocab.eoq_id
    for step in range(train_cfg.steps):
        if pos + train_cfg.batch_size > len(order):
            order, pos = rng.permutation(len(utts)), 0
        idx = order[pos:pos + train_cfg.batch_size]
        pos += train_cfg.batch_size
        batch = make_batch([utts[i] for i in idx], eoq, train_cfg.align_anchor)
        for p in params:
            p.zero_grad()
        if not all(np.isfinite(p.data).all() for p in params):
            raise TrainingDiverged(f"step {step}: non-finite parameters")
        step_reg = reg if step >= train_cfg.fastemit_start_step else early_reg
        second_reg = step_reg if train_cfg.regularize_second_pass else None
        try:
            loss = batch_loss(model, batch, step_reg, second, second_reg)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"step {step}: {exc}") from exc
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(f"step {step}: loss is {value}")
        loss.backward()
        opt.lr = train_cfg.learning_rate * min(1.0, (step + 1) / max(1, train_cfg.warmup_steps))
        opt.step()
        losses.append(value)
        if train_cfg.log_every and step % train_cfg.log_every == 0:
            log.info("step %d loss %.4f", step, value)
    return TrainResult(model, losses, time.perf_counter() - start)


def save_loss_curve(losses: Sequence[float], path) -> None:
    with open(path, "w") as f:
        json.dump({"loss": [float(x) for x in losses]}, f)
