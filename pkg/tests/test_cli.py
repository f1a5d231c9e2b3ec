import json
import subprocess
import sys

import pytest

from rnntlab.decoder import read_traces
from rnntlab.harness.cli import main
from rnntlab.metrics import LatencyReport

TASK = {"vocab_size": 3, "tokens_per_utterance": [1, 2], "frames_per_token": [2, 3], "leading_silence": [0, 1],
        "trailing_silence": [2, 3], "feature_dim": 4, "num_utterances": 12, "heldout_fraction": 0.25}
MODEL = {"conformer": {"model_dim": 8, "num_heads": 2, "kernel_size": 3, "left_context": 4, "num_groups": 2,
                       "ffn_expansion": 2},
         "num_causal": 1, "num_noncausal": 1, "right_context": 1, "embed_dim": 4, "pred_dim": 8, "joint_dim": 8}
TRAIN = {"steps": 5, "batch_size": 3}


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def workspace(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"task": TASK, "model": MODEL, "train": TRAIN}))
    return tmp_path, cfg


def test_pipeline_end_to_end(workspace, capsys):
    d, cfg = workspace
    code, out, _ = run(["gen-data", "--config", cfg, "--out", d / "data.jsonl"], capsys)
    assert code == 0 and json.loads(out) == {"out": str(d / "data.jsonl"), "train": 9, "heldout": 3}

    code, out, _ = run(["train", "--config", cfg, "--data", d / "data.jsonl", "--out", d / "m.json"], capsys)
    assert code == 0
    assert len(json.loads((d / "m.json.loss.json").read_text())["loss"]) == 5

    for extra, name in (([], "causal"), (["--two-pass"], "two_pass")):
        code, out, _ = run(["decode", "--ckpt", d / "m.json", "--data", d / "data.jsonl",
                            "--trace", d / f"{name}.jsonl"] + extra, capsys)
        assert code == 0 and json.loads(out)["mode"] == name
        traces, _ = read_traces(d / f"{name}.jsonl")
        assert len(traces) == 3

    for policy in ("e2e", "silence"):
        code, out, _ = run(["eval", "--trace", d / "two_pass.jsonl", "--data", d / "data.jsonl", "--policy", policy,
                            "--report", d / f"{policy}.json", "--trace-out", d / f"{policy}-ev.jsonl"], capsys)
        assert code == 0
        rep = LatencyReport.from_json((d / f"{policy}.json").read_text())
        assert rep.n == 3 and rep.pfr >= 1.0
        _, events = read_traces(d / f"{policy}-ev.jsonl")
        assert all(len(ev) >= 1 for ev in events.values())


def test_experiment_subcommand(workspace, capsys):
    d, _ = workspace
    cfg = d / "exp.json"
    cfg.write_text(json.dumps({"task": TASK, "model": MODEL, "train": TRAIN, "seeds": [0],
                               "max_eval_utterances": 2}))
    code, out, err = run(["experiment", "--config", cfg, "--out", d / "exp", "--cache", d / "cache"], capsys)
    assert code == 0
    assert json.loads(out)["arms"][0] == "B1"
    assert "T2-two-pass" in err
    assert {p.name for p in (d / "exp").iterdir()} == {"report.json", "report.csv", "report.txt"}


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["train", "--config", "c.json"],
    ["eval", "--trace", "t", "--data", "d", "--policy", "vad", "--report", "r"],
    ["eval", "--trace", "t", "--data", "d", "--policy", "e2e", "--report", "r", "--threshold", "high"],
])
def test_usage_errors_exit_2(argv, capsys):
    code, out, err = run(argv, capsys)
    assert code == 2 and out == ""
    lines = err.strip().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["error"] == "usage"


def test_runtime_errors_exit_1(workspace, capsys):
    d, cfg = workspace
    code, _, err = run(["train", "--config", cfg, "--data", d / "missing.jsonl", "--out", d / "m.json"], capsys)
    assert code == 1
    msg = json.loads(err.strip())
    assert msg["error"] == "FileNotFoundError"

    (d / "bad.json").write_text(json.dumps({"task": {"vocab_size": 1}}))
    code, _, err = run(["gen-data", "--config", d / "bad.json", "--out", d / "x.jsonl"], capsys)
    assert code == 1 and json.loads(err.strip())["error"] == "ValueError"

    (d / "list.json").write_text("[1, 2]")
    code, _, err = run(["experiment", "--config", d / "list.json", "--out", d / "o"], capsys)
    assert code == 1 and "JSON object" in json.loads(err.strip())["message"]


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rnntlab.harness.cli", "gen-data"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr.strip())["error"] == "usage"
