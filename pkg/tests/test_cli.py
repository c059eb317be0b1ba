from __future__ import annotations

import csv
import json

import pytest

from zygmund.cli import EXIT_AUDIT, EXIT_OK, EXIT_USAGE, main


def test_eval_weierstrass_at_zero(tmp_path, capsys):
    assert main(["eval", "--point", "0", "--out-dir", str(tmp_path)]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "eval.csv")))
    assert abs(float(rows[0]["value"]) - 2.0) <= 1e-12
    assert rows[0]["seed"] == "0" and len(rows[0]["config_hash"]) == 16


def test_dimension_fixture_slope(tmp_path):
    assert main(["dimension", "--out-dir", str(tmp_path)]) == EXIT_OK
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert abs(summary["slope"] - 0.5) <= 0.05


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"field": {"kind": "linear", "c": [2.0]}, "points": [[0.5]], "seed": 7}))
    assert main(["eval", "--config", str(cfg), "--seed", "3", "--out-dir", str(tmp_path)]) == EXIT_OK
    row = next(csv.DictReader(open(tmp_path / "eval.csv")))
    assert float(row["value"]) == 1.0 and row["seed"] == "3"


def test_usage_errors(tmp_path, capsys):
    assert main(["nonsense"]) == EXIT_USAGE
    assert main(["eval", "--config", str(tmp_path / "missing.json")]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"field": {"kind": "mystery"}}))
    assert main(["eval", "--config", str(bad), "--out-dir", str(tmp_path)]) == EXIT_USAGE
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["subcommand"] == "eval" and "mystery" in err["message"]
    assert main(["verify", "--criteria", "42", "--out-dir", str(tmp_path)]) == EXIT_USAGE
    assert main(["eval", "--threads", "0", "--out-dir", str(tmp_path)]) == EXIT_USAGE


def test_gradient_and_martingale_outputs(tmp_path):
    assert main(["gradient", "--depth", "6", "--samples", "2", "--out-dir", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "trajectories.csv").exists() and (tmp_path / "modulus.dat").exists()
    assert main(["martingale", "--depth", "4", "--samples", "5", "--out-dir", str(tmp_path)]) == EXIT_OK
    dump = json.loads((tmp_path / "martingale.json").read_text())
    assert len(dump) == 5 and len(dump[4]) == 256
    header = (tmp_path / "defects.csv").read_text().splitlines()[0]
    assert header == "config_hash,seed,cube,k,defect,defect_over_side"


def test_cantor_selection(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"mode": "selection", "M": 50, "field": {"kind": "sum", "parts": [
        {"field": {"kind": "linear", "c": [50.0, 0.0]}},
        {"field": {"kind": "tensor_sum", "dim": 2}, "weight": 3.0},
    ]}}))
    assert main(["cantor", "--config", str(cfg), "--depth", "8", "--out-dir", str(tmp_path)]) == EXIT_OK
    out = json.loads((tmp_path / "cantor.json").read_text())
    assert out["passed"] and out["result"]["stopping"]["passed"]


def test_counterexample_audit_exit_code(tmp_path):
    # two stages at small sample counts; the exit status mirrors the audit verdict
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"stages": 2}))
    code = main(["counterexample", "--config", str(cfg), "--samples", "2000", "--out-dir", str(tmp_path)])
    audits = json.loads((tmp_path / "audits.json").read_text())
    assert code == (EXIT_OK if audits["passed"] else EXIT_AUDIT)
    assert json.loads((tmp_path / "construction.json").read_text())["precision"] > 0


def test_verify_subset_is_deterministic(tmp_path, capsys):
    assert main(["verify", "--criteria", "1,5", "--out-dir", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS [1]" in out and "PASS [10]" in out
    assert (tmp_path / "run1" / "verify.json").read_bytes() == (tmp_path / "run2" / "verify.json").read_bytes()
