from __future__ import annotations

import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from winlab.cli import main

FIX = Path(__file__).resolve().parent.parent / "fixtures"
ENV = str(FIX / "dpo_counterexample_env.json")
REF = str(FIX / "dpo_counterexample_reference.json")


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_eval_prints_exact_value(capsys):
    assert main(["eval", ENV, str(FIX / "plain_pair_first.json"), REF]) == 0
    assert capsys.readouterr().out.strip() == "win_rate 0.50931034482758619"


def test_eval_published_comparison(capsys):
    assert main(["eval", ENV, str(FIX / "plain_pair_first.json"), REF, "--paper-compare"]) == 0
    out = capsys.readouterr().out
    assert "plain" in out and "regularized" in out and "0.54" in out


def test_eval_mc_requires_seed(capsys):
    assert main(["eval", ENV, REF, REF, "--mc", "100"]) == 2
    assert "--seed" in capsys.readouterr().err


def test_eval_logit_domain_error(tmp_path, capsys):
    env = tmp_path / "det.json"
    env.write_text(json.dumps({
        "queries": [{"id": "x", "prob": 1.0, "responses": ["a", "b"]}],
        "classifier": {"kind": "matrix", "data": [[[0.5, 1.0], [0.0, 0.5]]]},
    }))
    pol = tmp_path / "u.json"
    pol.write_text(json.dumps({"probs": [[0.5, 0.5]]}))
    assert main(["eval", str(env), str(pol), str(pol), "--h", "logit"]) == 1
    assert main(["eval", str(env), str(pol), str(pol), "--h", "logit", "--clamp", "1e-9"]) == 0


def test_invalid_environment_exit_code(tmp_path, capsys):
    env = tmp_path / "bad.json"
    env.write_text(json.dumps({
        "queries": [{"id": "x", "prob": 1.0, "responses": ["a", "b"]}],
        "classifier": {"kind": "matrix", "data": [[[0.5, 0.8], [0.3, 0.5]]]},
    }))
    assert main(["fit-bt", str(env), "--out", str(tmp_path / "o.csv")]) == 2
    assert "antisymmetry violated at (x, a, b)" in capsys.readouterr().err


def test_target_csv(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["target", ENV, "--family", "rlhf_dpo", "--reference", REF, "--out", str(out)]) == 0
    rows = _rows(out)
    assert [r["response"] for r in rows] == ["a", "b", "c"]
    assert [float(r["target_prob"]) for r in rows] == pytest.approx([0.54, 0.3, 0.16], abs=1e-14)
    manifest = json.loads(Path(f"{out}.manifest.json").read_text())
    assert manifest["command"] == "target" and ENV in manifest["inputs"]


def test_analyze(tmp_path, capsys):
    assert main(["analyze", ENV, "--theorem", "sft", "--initial", REF]) == 0
    out = capsys.readouterr().out
    assert "abs_diff" in out
    assert main(["analyze", ENV, "--theorem", "variance", "--initial", REF]) == 0
    assert "holds true" in capsys.readouterr().out
    assert main(["analyze", ENV, "--theorem", "filter_sft"]) == 2


def test_loss(capsys):
    args = ["loss", ENV, str(FIX / "regularized_pair_first.json"), "--family", "dpo_online", "--reference", REF]
    assert main(args) == 0
    assert capsys.readouterr().out.strip() == "dpo_online 0.58797084104274866"


def test_optimize_trajectory(tmp_path):
    out = tmp_path / "traj.csv"
    pol = tmp_path / "final.json"
    args = ["optimize", ENV, "--family", "wro_kl", "--reference", REF, "--out", str(out), "--policy-out", str(pol)]
    assert main(args) == 0
    rows = _rows(out)
    assert list(rows[0]) == ["iteration", "objective", "win_rate", "kl", "grad_norm"]
    assert float(rows[-1]["grad_norm"]) <= 1e-10
    final = json.loads(pol.read_text())["probs"][0]
    assert final == pytest.approx([0.1437486633511832, 0.49526377555035844, 0.36098756109845825], abs=1e-8)


def test_scan_and_game(tmp_path, capsys):
    out = tmp_path / "scan.csv"
    assert main(["scan", ENV, "--reference", REF, "--draws", "300", "--seed", "7", "--out", str(out)]) == 0
    assert len(_rows(out)) == 300
    assert "violating pairs" in capsys.readouterr().out
    game = tmp_path / "game.csv"
    pol = tmp_path / "game_policy.csv"
    assert main(["game", str(FIX / "rps_env.json"), "--out", str(game), "--policy-out", str(pol)]) == 0
    assert float(_rows(game)[-1]["exploitability"]) <= 1e-2
    assert len(_rows(pol)) == 6


def test_sweep_and_report(tmp_path):
    out, rep = tmp_path / "s.csv", tmp_path / "r.csv"
    args = ["sweep", str(FIX / "sweep_config.json"), "--seed", "0", "--permutations", "500", "--out", str(out), "--report", str(rep)]
    assert main(args) == 0
    assert len(_rows(out)) == 48
    assert [r["axis"] for r in _rows(rep)] == ["objective", "beta", "h", "estimate"]


def test_fit_bt_on_bt_env(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["fit-bt", ENV, "--out", str(out), "--env-out", str(tmp_path / "fit.json")]) == 0
    assert float(_rows(out)[0]["reward"]) == pytest.approx(0.0)


def test_console_script_runs():
    out = subprocess.run([sys.executable, "-m", "winlab.cli", "--version"], capture_output=True, text=True, check=True)
    assert out.stdout.startswith("winlab ")
