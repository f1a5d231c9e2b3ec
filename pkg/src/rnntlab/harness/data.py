"""Synthetic frame-aligned token task.

Every token id owns a fixed prototype feature vector; a token occupies a span
of consecutive frames holding its prototype plus Gaussian noise, and silence
frames are noise around zero. With ``onset_ramp`` the prototype fades in over
the span, so a token only becomes unambiguous some frames after its onset.
Adjacent tokens always differ so spans stay distinguishable.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class SyntheticTaskConfig:
    vocab_size: int = 16
    tokens_per_utterance: tuple = (2, 5)
    frames_per_token: tuple = (3, 6)
    leading_silence: tuple = (1, 3)
    trailing_silence: tuple = (6, 10)
    feature_dim: int = 16
    feature_noise_std: float = 0.35
    # a token's prototype fades in linearly across its span (evidence accumulates)
    onset_ramp: bool = True
    frame_ms: float = 30.0
    num_utterances: int = 4000
    heldout_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        for name in ("tokens_per_utterance", "frames_per_token", "leading_silence", "trailing_silence"):
            lo, hi = getattr(self, name)
            floor = 0 if name == "leading_silence" else 1
            if lo < floor or hi < lo:
                raise ValueError(f"{name} must be a nonempty range with lower bound >= {floor}")
        if self.feature_dim < 1 or self.feature_noise_std < 0 or self.frame_ms <= 0:
            raise ValueError("feature_dim, feature_noise_std and frame_ms must be positive")
        if self.num_utterances < 1 or not 0 <= self.heldout_fraction < 1:
            raise ValueError("need >= 1 utterance and heldout_fraction in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SyntheticTaskConfig":
        d = dict(d or {})
        for k in ("tokens_per_utterance", "frames_per_token", "leading_silence", "trailing_silence"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Utterance:
    """One synthetic utterance. Frames in ``eos_frame`` and boundaries are 1-based."""

    id: str
    frames: np.ndarray
    targets: tuple
    eos_frame: int
    token_boundaries: tuple  # ((start, end), ...) inclusive

    @property
    def T(self) -> int:
        return int(self.frames.shape[0])

    def to_dict(self) -> dict:
        return {"id": self.id, "frames": self.frames.tolist(), "targets": list(self.targets),
                "eos_frame": self.eos_frame, "token_boundaries": [list(b) for b in self.token_boundaries]}

    @classmethod
    def from_dict(cls, d: dict) -> "Utterance":
        return cls(id=d["id"], frames=np.asarray(d["frames"], dtype=np.float64),
                   targets=tuple(int(k) for k in d["targets"]), eos_frame=int(d["eos_frame"]),
                   token_boundaries=tuple(tuple(int(v) for v in b) for b in d["token_boundaries"]))


@dataclass
class Dataset:
    train: list
    heldout: list
    config: SyntheticTaskConfig

    @property
    def all(self) -> list:
        return self.train + self.heldout


def token_prototypes(cfg: SyntheticTaskConfig) -> np.ndarray:
    """[vocab_size + 1, feature_dim] table; row 0 (blank) is the zero silence vector."""
    rng = np.random.default_rng([cfg.seed, 1])
    protos = rng.standard_normal((cfg.vocab_size + 1, cfg.feature_dim))
    protos[1:] /= np.linalg.norm(protos[1:], axis=1, keepdims=True)
    protos[1:] *= np.sqrt(cfg.feature_dim) * 0.5
    protos[0] = 0.0
    return protos


def _make_utterance(idx: int, cfg: SyntheticTaskConfig, protos: np.ndarray,
                    rng: np.random.Generator) -> Utterance:
    n_tok = int(rng.integers(cfg.tokens_per_utterance[0], cfg.tokens_per_utterance[1] + 1))
    targets = []
    for _ in range(n_tok):
        k = int(rng.integers(1, cfg.vocab_size + 1))
        while targets and k == targets[-1]:
            k = int(rng.integers(1, cfg.vocab_size + 1))
        targets.append(k)
    lead = int(rng.integers(cfg.leading_silence[0], cfg.leading_silence[1] + 1))
    labels = [0] * lead
    gain = [0.0] * lead
    bounds = []
    for k in targets:
        n = int(rng.integers(cfg.frames_per_token[0], cfg.frames_per_token[1] + 1))
        bounds.append((len(labels) + 1, len(labels) + n))
        labels.extend([k] * n)
        gain.extend((np.arange(1, n + 1) / n).tolist() if cfg.onset_ramp else [1.0] * n)
    eos = len(labels)
    n_sil = int(rng.integers(cfg.trailing_silence[0], cfg.trailing_silence[1] + 1))
    labels.extend([0] * n_sil)
    gain.extend([0.0] * n_sil)
    clean = protos[labels] * np.asarray(gain)[:, None]
    frames = clean + cfg.feature_noise_std * rng.standard_normal((len(labels), cfg.feature_dim))
    return Utterance(f"utt{idx:05d}", frames, tuple(targets), eos, tuple(bounds))


def gen_synthetic(cfg: SyntheticTaskConfig) -> Dataset:
    """Deterministic dataset split into disjoint train and held-out lists."""
    protos = token_prototypes(cfg)
    rng = np.random.default_rng([cfg.seed, 2])
    utts = [_make_utterance(i, cfg, protos, rng) for i in range(cfg.num_utterances)]
    n_held = int(round(cfg.heldout_fraction * len(utts)))
    cut = len(utts) - n_held
    return Dataset(train=utts[:cut], heldout=utts[cut:], config=cfg)


def frame_labels(utt: Utterance) -> np.ndarray:
    """Per-frame token id (0 for silence) reconstructed from the boundaries."""
    lab = np.zeros(utt.T, dtype=np.int64)
    for k, (s, e) in zip(utt.targets, utt.token_boundaries):
        lab[s - 1:e] = k
    return lab


def save_dataset(ds: Dataset, path) -> None:
    """JSON lines: a header record, then one record per utterance tagged with its split."""
    with open(path, "w") as f:
        f.write(json.dumps({"type": "header", "config": ds.config.to_dict()}) + "\n")
        for split, utts in (("train", ds.train), ("heldout", ds.heldout)):
            for u in utts:
                f.write(json.dumps({"type": "utterance", "split": split, **u.to_dict()}) + "\n")


def load_dataset(path) -> Dataset:
    cfg, train, held = None, [], []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec["type"] == "header":
            cfg = SyntheticTaskConfig.from_dict(rec["config"])
        elif rec["type"] == "utterance":
            (train if rec["split"] == "train" else held).append(Utterance.from_dict(rec))
    if cfg is None:
        raise ValueError(f"{path}: missing dataset header")
    return Dataset(train, held, cfg)


def check_disjoint(splits: Iterable[Sequence[Utterance]]) -> None:
    seen: set = set()
    for split in splits:
        ids = {u.id for u in split}
        if ids & seen:
            raise ValueError("dataset splits share utterance ids")
        seen |= ids
