"""Time-synchronous transducer beam search with per-frame partials and EOQ endpointing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Protocol

import numpy as np

from ..numerics.logspace import log_add
from ..transducer.lattice import Vocab


class DecoderModel(Protocol):
    vocab: Vocab

    def initial_pred_state(self) -> Any: ...

    def predict(self, state: Any, token: int) -> Any: ...

    def joint_log_probs(self, h: np.ndarray, state: Any) -> np.ndarray: ...


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 4
    max_expansions_per_frame: int = 3
    eoq_threshold: float = 0.5

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_expansions_per_frame < 1:
            raise ValueError("max_expansions_per_frame must be >= 1")
        if not 0.0 < self.eoq_threshold <= 1.0:
            raise ValueError("eoq_threshold must lie in (0, 1]")


@dataclass
class Hypothesis:
    tokens: tuple = ()
    emit_frames: tuple = ()
    log_score: float = 0.0
    pred_state: Any = None
    # best probability with which a terminal EOQ was emitted on any merged path
    eoq_prob: Optional[float] = None

    def ended(self, eoq_id: int) -> bool:
        return bool(self.tokens) and self.tokens[-1] == eoq_id

    def text(self, eoq_id: int) -> tuple:
        """Token sequence without the terminal EOQ."""
        return self.tokens[:-1] if self.ended(eoq_id) else self.tokens


@dataclass
class StreamTrace:
    """Per-frame record of one streaming decode. Frames are 1-based."""

    partials: list
    top_scores: list
    eoq_posterior: list
    eoq_frame: int
    final_first_pass: Hypothesis
    eoq_id: int
    eoq_fired: bool = False
    final_two_pass: Optional[Hypothesis] = None
    frame_ms: float = 30.0
    utt_id: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def first_pass_tokens(self) -> tuple:
        return self.final_first_pass.text(self.eoq_id)

    @property
    def final_tokens(self) -> tuple:
        """The system result: second pass when it ran, else the first pass."""
        hyp = self.final_two_pass if self.final_two_pass is not None else self.final_first_pass
        return hyp.text(self.eoq_id)

    def partial_at(self, frame: int) -> tuple:
        return self.partials[frame - 1]


def _sort_key(h: Hypothesis):
    return (-h.log_score, h.tokens)


def _prune(pool: dict, beam_size: int) -> list:
    return sorted(pool.values(), key=_sort_key)[:beam_size]


def _merge_into(pool: dict, hyp: Hypothesis) -> None:
    old = pool.get(hyp.tokens)
    if old is None:
        pool[hyp.tokens] = hyp
        return
    eoq = [p for p in (old.eoq_prob, hyp.eoq_prob) if p is not None]
    pool[hyp.tokens] = Hypothesis(
        tokens=hyp.tokens,
        emit_frames=min(old.emit_frames, hyp.emit_frames),
        log_score=log_add(old.log_score, hyp.log_score),
        pred_state=old.pred_state,
        eoq_prob=max(eoq) if eoq else None,
    )


class _Scorer:
    """Memoises prediction states per token prefix and joint outputs per frame."""

    def __init__(self, model: DecoderModel):
        self.model = model
        self.states = {(): model.initial_pred_state()}
        self.frame_cache: dict = {}

    def state(self, tokens: tuple):
        s = self.states.get(tokens)
        if s is None:
            s = self.model.predict(self.state(tokens[:-1]), tokens[-1])
            self.states[tokens] = s
        return s

    def new_frame(self):
        self.frame_cache = {}

    def log_probs(self, h, hyp: Hypothesis) -> np.ndarray:
        lp = self.frame_cache.get(hyp.tokens)
        if lp is None:
            lp = np.asarray(self.model.joint_log_probs(h, hyp.pred_state), dtype=np.float64)
            self.frame_cache[hyp.tokens] = lp
        return lp


def beam_step(beam: list, h: np.ndarray, frame: int, scorer: _Scorer, cfg: BeamConfig) -> list:
    """Consume one encoder frame: up to ``max_expansions_per_frame`` emissions then blank."""
    vocab = scorer.model.vocab
    blank, eoq = vocab.blank_id, vocab.eoq_id
    scorer.new_frame()
    advanced: dict = {}
    current = beam
    for step in range(cfg.max_expansions_per_frame + 1):
        expanded: dict = {}
        for hyp in current:
            lp = scorer.log_probs(h, hyp)
            _merge_into(advanced, Hypothesis(hyp.tokens, hyp.emit_frames, hyp.log_score + lp[blank],
                                             hyp.pred_state, hyp.eoq_prob))
            if step == cfg.max_expansions_per_frame or hyp.ended(eoq):
                continue
            # only a hypothesis' best beam_size symbols can survive pruning
            cand = np.argsort(-lp, kind="stable")
            taken = 0
            for k in cand:
                k = int(k)
                if k == blank or lp[k] == -np.inf:
                    continue
                toks = hyp.tokens + (k,)
                _merge_into(expanded, Hypothesis(
                    tokens=toks,
                    emit_frames=hyp.emit_frames + (frame,),
                    log_score=hyp.log_score + lp[k],
                    pred_state=scorer.state(toks),
                    eoq_prob=math.exp(lp[k]) if k == eoq else None,
                ))
                taken += 1
                if taken == cfg.beam_size:
                    break
        current = _prune(expanded, cfg.beam_size)
        if not current:
            break
    return _prune(advanced, cfg.beam_size)


def decode_streaming(enc_frames: Iterable, model: DecoderModel, cfg: BeamConfig,
                     probe_eoq: bool = True, finalize_on_eoq: bool = True,
                     frame_ms: float = 30.0, utt_id: str = "") -> StreamTrace:
    """Frame-synchronous beam search over encoder outputs arriving in order.

    After every frame the top hypothesis (EOQ stripped) is recorded as that
    frame's partial. Decoding stops at the first frame whose top hypothesis
    ends in EOQ emitted with probability >= ``cfg.eoq_threshold``, or when the
    input runs out. With ``probe_eoq`` the EOQ probability of the top
    hypothesis is also recorded per frame (a read-only probe).
    """
    from ..prefetch import eoq_probe

    eoq = model.vocab.eoq_id
    scorer = _Scorer(model)
    beam = [Hypothesis(pred_state=scorer.state(()))]
    partials, scores, posts = [], [], []
    frame = 0
    fired = False
    for frame, h in enumerate(enc_frames, start=1):
        h = np.asarray(h, dtype=np.float64)
        beam = beam_step(beam, h, frame, scorer, cfg)
        top = beam[0]
        partials.append(top.text(eoq))
        scores.append(float(top.log_score))
        if probe_eoq:
            posts.append(top.eoq_prob if top.ended(eoq) else eoq_probe(top, h, model))
        else:
            posts.append(None)
        if finalize_on_eoq and top.ended(eoq) and top.eoq_prob >= cfg.eoq_threshold:
            fired = True
            break
    if frame == 0:
        raise ValueError("decode_streaming needs at least one encoder frame")
    return StreamTrace(partials=partials, top_scores=scores, eoq_posterior=posts, eoq_frame=frame,
                       final_first_pass=beam[0], eoq_id=eoq, eoq_fired=fired, frame_ms=frame_ms,
                       utt_id=utt_id)


def decode_offline(enc_frames, model: DecoderModel, cfg: BeamConfig) -> Hypothesis:
    """Beam search over all frames without endpointing; returns the top hypothesis."""
    return decode_streaming(enc_frames, model, cfg, probe_eoq=False, finalize_on_eoq=False).final_first_pass
