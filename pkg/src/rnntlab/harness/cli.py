"""Command line entry point: ``rnntlab <subcommand> ...``.

Every failure prints a single JSON line ``{"error": ..., "message": ...}`` on
stderr and exits nonzero (2 for usage errors, 1 otherwise).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..decoder.beam import BeamConfig
from ..decoder.trace_io import read_traces, write_traces
from ..metrics import UtteranceResult, aggregate
from ..model import ModelConfig, TransducerModel
from ..prefetch import PrefetchPolicyConfig, run_policy
from ..transducer.penalties import RegularizerConfig
from .data import SyntheticTaskConfig, gen_synthetic, load_dataset, save_dataset
from .experiment import ExperimentConfig, decode_utterance, run_experiment
from .train import TrainConfig, save_loss_curve, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path) -> dict:
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return cfg


def _section(cfg: dict, key: str) -> dict:
    """A sub-config: ``cfg[key]`` when present, else ``{}``."""
    sub = cfg.get(key, {})
    if not isinstance(sub, dict):
        raise ValueError(f"config section {key!r} must be an object")
    return sub


def _split(ds, name: str):
    return {"train": ds.train, "heldout": ds.heldout, "all": ds.all}[name]


def cmd_gen_data(args) -> dict:
    cfg = _load_config(args.config)
    ds = gen_synthetic(SyntheticTaskConfig.from_dict(cfg.get("task", cfg)))
    save_dataset(ds, args.out)
    return {"out": args.out, "train": len(ds.train), "heldout": len(ds.heldout)}


def cmd_train(args) -> dict:
    cfg = _load_config(args.config)
    ds = load_dataset(args.data)
    model_cfg = ModelConfig.from_dict({"input_dim": ds.config.feature_dim,
                                       "vocab_size": ds.config.vocab_size, **_section(cfg, "model")})
    res = train(ds.train, model_cfg, TrainConfig.from_dict(_section(cfg, "train")),
                RegularizerConfig.from_dict(_section(cfg, "regularizer")))
    res.model.save(args.out)
    curve = args.out + ".loss.json"
    save_loss_curve(res.losses, curve)
    return {"out": args.out, "loss_curve": curve, "final_loss": res.losses[-1] if res.losses else None}


def cmd_decode(args) -> dict:
    model = TransducerModel.load(args.ckpt)
    ds = load_dataset(args.data)
    beam = BeamConfig(**(_load_config(args.beam_config) if args.beam_config else {}))
    mode = "two_pass" if args.two_pass else "causal"
    traces = [decode_utterance(model, u, mode, beam, ds.config.frame_ms) for u in _split(ds, args.split)]
    write_traces(args.trace, traces)
    return {"trace": args.trace, "utterances": len(traces), "mode": mode}


def cmd_eval(args) -> dict:
    traces, _ = read_traces(args.trace)
    ds = load_dataset(args.data)
    utts = {u.id: u for u in ds.all}
    missing = sorted(set(traces) - set(utts))
    if missing:
        raise ValueError(f"trace has utterances missing from the dataset: {missing[:3]}")
    kw = {"kind": args.policy}
    if args.threshold is not None:
        kw["e2e_threshold"] = args.threshold
    if args.silence_frames is not None:
        kw["silence_frames"] = args.silence_frames
    pol = PrefetchPolicyConfig(**kw)
    results, events = [], {}
    for uid, tr in traces.items():
        events[uid] = run_policy(tr, pol)
        results.append(UtteranceResult(tr, events[uid], utts[uid].eos_frame, utts[uid].targets))
    eoq = next(iter(traces.values())).eoq_id if traces else None
    report = aggregate(results, eoq)
    Path(args.report).write_text(report.to_json())
    if args.trace_out:
        write_traces(args.trace_out, traces.values(), events)
    return {"report": args.report, **report.to_dict()}


def cmd_experiment(args) -> dict:
    cfg = ExperimentConfig.from_dict(_load_config(args.config))
    res = run_experiment(cfg, cache_dir=args.cache)
    res.write(args.out)
    print(res.to_text(), end="", file=sys.stderr)
    return {"out": args.out, "arms": list(res.median)}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rnntlab", description="Streaming transducer latency lab.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset (JSON lines)")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on the train split")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("decode", help="stream-decode a split into a trace file")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--trace", required=True)
    d.add_argument("--two-pass", action="store_true")
    d.add_argument("--split", default="heldout", choices=("train", "heldout", "all"))
    d.add_argument("--beam-config")
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("eval", help="apply a prefetch policy and aggregate latency metrics")
    e.add_argument("--trace", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--policy", required=True, choices=("e2e", "silence"))
    e.add_argument("--report", required=True)
    e.add_argument("--threshold", type=float)
    e.add_argument("--silence-frames", type=int)
    e.add_argument("--trace-out", help="also write the trace with prefetch records")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="run the multi-arm comparison")
    x.add_argument("--config", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--cache", help="directory for trained-model checkpoints")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        out = args.func(args)
    except Exception as exc:  # noqa: BLE001 - top-level error reporting
        msg = " ".join(str(exc).split())
        print(json.dumps({"error": type(exc).__name__, "message": msg}), file=sys.stderr)
        return 1
    print(json.dumps(out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
