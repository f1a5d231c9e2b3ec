"""Multi-arm latency experiment: train each distinct model once per seed, decode the
held-out split, apply prefetch policies and report median-of-seeds metrics.

Arms that share a training configuration share the trained model, and arms that
also share a decode mode share the decoded traces, so policies are compared on
identical streams.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..decoder.beam import BeamConfig
from ..decoder.two_pass import decode_first_pass, decode_noncausal, decode_two_pass
from ..metrics import (
    CSV_COLUMNS,
    REPORT_COLUMNS,
    LatencyReport,
    UtteranceResult,
    aggregate,
    token_error_rate,
)
from ..model import ModelConfig, TransducerModel
from ..numerics import autodiff as ad
from ..prefetch import PrefetchPolicyConfig, run_policy
from ..transducer.lattice import PosteriorLattice, emission_posterior, forward_backward
from ..numerics.logspace import log_softmax
from ..transducer.penalties import RegularizerConfig
from .data import Dataset, SyntheticTaskConfig, gen_synthetic
from .train import TrainConfig, make_batch, train

log = logging.getLogger(__name__)

DECODE_MODES = ("causal", "two_pass", "noncausal")


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ArmConfig:
    """One comparison row: regularizer deltas over the base config, decode mode and policy."""

    name: str
    regularizer: dict = field(default_factory=dict)
    decode: str = "causal"
    policy: str = "silence"

    def __post_init__(self):
        if self.decode not in DECODE_MODES:
            raise ValueError(f"arm {self.name}: unknown decode mode {self.decode!r}")
        if self.policy not in ("e2e", "silence"):
            raise ValueError(f"arm {self.name}: unknown policy {self.policy!r}")
        unknown = set(self.regularizer) - set(asdict(RegularizerConfig()))
        if unknown:
            raise ValueError(f"arm {self.name}: unknown regularizer fields {sorted(unknown)}")


def default_arms(lambda_fastemit: float = 0.01, align_penalty: float = 4.0, align_buffer: int = 1) -> tuple:
    fe = {"lambda_fastemit": lambda_fastemit}
    return (
        ArmConfig("B1"),
        ArmConfig("B2", {"align_penalty": align_penalty, "align_buffer": align_buffer}),
        ArmConfig("B3", fe),
        ArmConfig("C4", fe, policy="e2e"),
        ArmConfig("T2-causal", fe, policy="e2e"),
        ArmConfig("T2-two-pass", fe, decode="two_pass", policy="e2e"),
        ArmConfig("T2-noncausal", fe, decode="noncausal", policy="e2e"),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    task: SyntheticTaskConfig = field(default_factory=SyntheticTaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    # every arm trains the endpointer with early and late EOQ penalties; a late penalty alone
    # teaches the model to overpredict EOQ during speech
    regularizer: RegularizerConfig = field(default_factory=lambda: RegularizerConfig(
        eoq_early_scale=1.0, eoq_late_scale=1.0, eoq_buffer=1))
    beam: BeamConfig = field(default_factory=BeamConfig)
    silence_frames: int = 6
    e2e_threshold: float = 0.5
    e2e_sweep: tuple = (0.1, 0.2, 0.3, 0.5, 0.7, 0.9)
    arms: tuple = field(default_factory=default_arms)
    seeds: tuple = (0, 1, 2)
    # None evaluates the whole held-out split
    max_eval_utterances: Optional[int] = None

    def __post_init__(self):
        names = [a.name for a in self.arms]
        if len(set(names)) != len(names):
            raise ValueError("arm names must be unique")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if (self.model.input_dim, self.model.vocab_size) != (self.task.feature_dim, self.task.vocab_size):
            raise ValueError("model input_dim/vocab_size must match the task feature_dim/vocab_size")

    def arm(self, name: str) -> ArmConfig:
        for a in self.arms:
            if a.name == name:
                return a
        raise KeyError(name)

    def arm_regularizer(self, arm: ArmConfig) -> RegularizerConfig:
        return replace(self.regularizer, **arm.regularizer)

    def to_dict(self) -> dict:
        return {
            "task": self.task.to_dict(), "model": self.model.to_dict(), "train": self.train.to_dict(),
            "regularizer": asdict(self.regularizer), "beam": asdict(self.beam),
            "silence_frames": self.silence_frames, "e2e_threshold": self.e2e_threshold,
            "e2e_sweep": list(self.e2e_sweep), "arms": [asdict(a) for a in self.arms],
            "seeds": list(self.seeds), "max_eval_utterances": self.max_eval_utterances,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        kw = {}
        if "task" in d:
            kw["task"] = SyntheticTaskConfig.from_dict(d["task"])
        if "model" in d or "task" in d:
            task = kw.get("task", SyntheticTaskConfig())
            # the model's input and vocabulary sizes follow the task unless given explicitly
            kw["model"] = ModelConfig.from_dict({"input_dim": task.feature_dim, "vocab_size": task.vocab_size,
                                                 **d.get("model", {})})
        if "train" in d:
            kw["train"] = TrainConfig.from_dict(d["train"])
        if "regularizer" in d:
            kw["regularizer"] = RegularizerConfig.from_dict(d["regularizer"])
        if "beam" in d:
            kw["beam"] = BeamConfig(**d["beam"])
        if "arms" in d:
            kw["arms"] = tuple(ArmConfig(**a) for a in d["arms"])
        for k in ("silence_frames", "e2e_threshold", "max_eval_utterances"):
            if k in d:
                kw[k] = d[k]
        for k in ("e2e_sweep", "seeds"):
            if k in d:
                kw[k] = tuple(d[k])
        unknown = set(d) - set(kw) - {"task", "model", "train", "regularizer", "beam", "arms"}
        if unknown:
            raise ValueError(f"unknown experiment fields {sorted(unknown)}")
        return cls(**kw)


def arm_deltas(cfg: ExperimentConfig) -> dict:
    """Per arm, the settings that differ from the first arm (the baseline)."""
    base = cfg.arms[0]
    out = {}
    for a in cfg.arms:
        d = {}
        rb, ra = asdict(cfg.arm_regularizer(base)), asdict(cfg.arm_regularizer(a))
        d.update({f"regularizer.{k}": ra[k] for k in ra if ra[k] != rb[k]})
        if a.decode != base.decode:
            d["decode"] = a.decode
        if a.policy != base.policy:
            d["policy"] = a.policy
        out[a.name] = d
    return out


# -- building blocks


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def seeded(cfg: ExperimentConfig, seed: int):
    """Task, model and training configs for one seed."""
    return (replace(cfg.task, seed=seed), replace(cfg.model, seed=seed), replace(cfg.train, seed=seed))


def policy_config(cfg: ExperimentConfig, kind: str, threshold: Optional[float] = None) -> PrefetchPolicyConfig:
    return PrefetchPolicyConfig(kind=kind, e2e_threshold=cfg.e2e_threshold if threshold is None else threshold,
                                silence_frames=cfg.silence_frames)


def decode_utterance(model: TransducerModel, utt, mode: str, beam: BeamConfig, frame_ms: float):
    """A StreamTrace for causal/two-pass modes, or the top Hypothesis for non-causal decoding."""
    if mode == "causal":
        return decode_first_pass(utt.frames, model, beam, frame_ms=frame_ms, utt_id=utt.id)
    if mode == "two_pass":
        return decode_two_pass(utt.frames, model, beam, frame_ms=frame_ms, utt_id=utt.id)
    return decode_noncausal(utt.frames, model, beam)


def forced_emission_delay(model: TransducerModel, utts) -> float:
    """Mean over tokens of expected emission frame minus the token's last frame (causal pass)."""
    delays = []
    with ad.no_grad():
        for u in utts:
            batch = make_batch([u], model.vocab.eoq_id)
            first, _ = model.lattice_logits(batch.feats, batch.frame_mask, batch.tokens)
            lat = PosteriorLattice(log_softmax(first.data[0], axis=-1))
            tgt = batch.items[0].targets
            post = emission_posterior(forward_backward(lat, tgt), lat, tgt)
            frames = np.arange(1, lat.T + 1) @ post  # [U]
            delays.extend(frames[:len(u.targets)] - np.array([e for _, e in u.token_boundaries]))
    return float(np.mean(delays))


def decode_emission_delay(traces, utts, eoq_id: int) -> Optional[float]:
    """Mean emit frame minus token end over correctly decoded first-pass results."""
    d = []
    for tr, u in zip(traces, utts):
        hyp = tr.final_first_pass
        if hyp.text(eoq_id) == tuple(u.targets):
            d.extend(f - e for f, (_, e) in zip(hyp.emit_frames, u.token_boundaries))
    return float(np.mean(d)) if d else None


@dataclass
class SeedRun:
    """Everything decoded for one (training config, seed)."""

    model: TransducerModel
    losses: list
    traces: dict  # decode mode -> list
    train_seconds: Optional[float] = None


class Experiment:
    """Runs arms with model and trace caching; optionally persists checkpoints."""

    def __init__(self, cfg: ExperimentConfig, cache_dir=None):
        self.cfg = cfg
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._data: dict = {}
        self._runs: dict = {}

    def dataset(self, seed: int) -> Dataset:
        if seed not in self._data:
            self._data[seed] = gen_synthetic(seeded(self.cfg, seed)[0])
        return self._data[seed]

    def eval_utts(self, seed: int) -> list:
        held = self.dataset(seed).heldout
        n = self.cfg.max_eval_utterances
        return held if n is None else held[:n]

    def train_key(self, arm: ArmConfig, seed: int) -> str:
        task, model, tr = seeded(self.cfg, seed)
        return _digest({"task": task.to_dict(), "model": model.to_dict(), "train": tr.to_dict(),
                        "reg": asdict(self.cfg.arm_regularizer(arm))})

    def run_for(self, arm: ArmConfig, seed: int) -> SeedRun:
        key = self.train_key(arm, seed)
        run = self._runs.get(key)
        if run is None:
            run = self._train(arm, seed, key)
            self._runs[key] = run
        return run

    def _train(self, arm: ArmConfig, seed: int, key: str) -> SeedRun:
        _, model_cfg, train_cfg = seeded(self.cfg, seed)
        ckpt = self.cache_dir / f"model-{key}.json" if self.cache_dir else None
        if ckpt is not None and ckpt.exists():
            blob = json.loads(ckpt.read_text())
            return SeedRun(TransducerModel.from_dict(blob["checkpoint"]), blob["losses"], {},
                           blob.get("train_seconds"))
        log.info("training %s seed %d", arm.name, seed)
        res = train(self.dataset(seed).train, model_cfg, train_cfg, self.cfg.arm_regularizer(arm))
        if ckpt is not None:
            ckpt.parent.mkdir(parents=True, exist_ok=True)
            ckpt.write_text(json.dumps({"checkpoint": res.model.to_dict(), "losses": res.losses,
                                        "train_seconds": res.seconds}))
        return SeedRun(res.model, res.losses, {}, res.seconds)

    def traces(self, arm: ArmConfig, seed: int) -> list:
        run = self.run_for(arm, seed)
        if arm.decode not in run.traces:
            fm = self.cfg.task.frame_ms
            run.traces[arm.decode] = [decode_utterance(run.model, u, arm.decode, self.cfg.beam, fm)
                                      for u in self.eval_utts(seed)]
        return run.traces[arm.decode]

    def report(self, arm: ArmConfig, seed: int, threshold: Optional[float] = None) -> LatencyReport:
        utts = self.eval_utts(seed)
        out = self.traces(arm, seed)
        run = self.run_for(arm, seed)
        eoq = run.model.vocab.eoq_id
        refs = [u.targets for u in utts]
        if arm.decode == "noncausal":
            ter = token_error_rate([h.text(eoq) for h in out], refs, eoq)
            nan = float("nan")
            return LatencyReport(len(utts), ter, nan, nan, nan, nan, nan, nan, nan)
        pol = policy_config(self.cfg, arm.policy, threshold)
        results = [UtteranceResult(tr, run_policy(tr, pol), u.eos_frame, u.targets)
                   for tr, u in zip(out, utts)]
        rep = aggregate(results, eoq)
        rep.extra["decode_delay_frames"] = decode_emission_delay(out, utts, eoq)
        rep.extra["first_pass_ter_pct"] = token_error_rate([tr.first_pass_tokens for tr in out], refs, eoq)
        return rep

    def emission_delay(self, arm: ArmConfig, seed: int) -> float:
        run = self.run_for(arm, seed)
        key = "_forced_delay"
        if key not in run.traces:
            run.traces[key] = forced_emission_delay(run.model, self.eval_utts(seed))
        return run.traces[key]


def median_report(reports: list) -> LatencyReport:
    """Field-wise median over seeds (NaN fields stay NaN)."""
    vals = {}
    for k in REPORT_COLUMNS:
        xs = np.array([getattr(r, k) for r in reports], dtype=np.float64)
        vals[k] = float("nan") if np.isnan(xs).all() else float(np.median(xs[~np.isnan(xs)]))
    vals["n"] = int(vals["n"])
    extra = {}
    for k in sorted({k for r in reports for k in r.extra}):
        xs = [r.extra[k] for r in reports if r.extra.get(k) is not None]
        extra[k] = float(np.median(xs)) if xs else None
    return LatencyReport(**vals, extra=extra)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    per_seed: dict     # arm -> [LatencyReport per seed]
    median: dict       # arm -> LatencyReport
    sweep: dict = field(default_factory=dict)  # arm -> [{threshold, pf50_ms, pfr} median of seeds]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "arms": {a: {"median": _clean(r.to_dict()), "per_seed": [_clean(x.to_dict()) for x in self.per_seed[a]]}
                     for a, r in self.median.items()},
            "e2e_sweep": self.sweep,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def to_csv(self) -> str:
        lines = ["arm," + ",".join(CSV_COLUMNS)]
        for a, r in self.median.items():
            lines.append(a + "," + ",".join(_fmt_csv(getattr(r, k)) for k in CSV_COLUMNS))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        head = ["arm", "TER%", "EP50", "EP90", "PR50", "PR90", "PF50", "PF90", "PFR", "delay"]
        rows = [head]
        for a, r in self.median.items():
            rows.append([a] + [_fmt(getattr(r, k)) for k in CSV_COLUMNS[:-1]] + [_fmt(r.extra.get("forced_delay_frames"))])
        widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
        return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in rows) + "\n"

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "report.csv").write_text(self.to_csv())
        (out / "report.txt").write_text(self.to_text())


def _clean(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in d.items()}


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return "-"
    return f"{v:.2f}" if isinstance(v, float) and not float(v).is_integer() else f"{v:g}"


def _fmt_csv(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(v)


def run_experiment(cfg: ExperimentConfig, cache_dir=None, experiment: Optional[Experiment] = None) -> ExperimentResult:
    exp = experiment or Experiment(cfg, cache_dir)
    per_seed, median, sweep = {}, {}, {}
    for arm in cfg.arms:
        try:
            reps = []
            for seed in cfg.seeds:
                rep = exp.report(arm, seed)
                rep.extra["forced_delay_frames"] = exp.emission_delay(arm, seed)
                reps.append(rep)
            per_seed[arm.name] = reps
            median[arm.name] = median_report(reps)
            if arm.policy == "e2e" and arm.decode != "noncausal":
                sweep[arm.name] = []
                for th in cfg.e2e_sweep:
                    m = median_report([exp.report(arm, s, th) for s in cfg.seeds])
                    sweep[arm.name].append({"threshold": th, "pf50_ms": m.pf50_ms, "pf90_ms": m.pf90_ms,
                                            "pfr": m.pfr})
        except Exception as exc:  # noqa: BLE001 - re-raised with the arm named
            raise ExperimentError(f"arm {arm.name} failed: {exc}") from exc
    return ExperimentResult(cfg, per_seed, median, sweep)
