"""Every acceptance criterion at its stated tolerance, one PASS/FAIL line each.

Run under pytest (lines appear in the terminal summary) or directly with
``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import json
import os
import sys
import tempfile

import pytest

from zygmund.acceptance import CHECKS, compare_dirs, run_verify

from conftest import LINES


def _report(line: str) -> None:
    LINES.append(line)
    print(line)


@pytest.mark.parametrize("number", sorted(CHECKS))
def test_criterion(verify_run, number):
    _, results = verify_run
    r = results[number]
    _report(r.line())
    assert r.in_time, f"criterion {number} took {r.runtime:.1f}s (limit {r.limit:g}s)"
    if not r.passed:
        pytest.fail(json.dumps(r.to_json()["measured"], default=str)[:1500], pytrace=False)


def test_criterion_10_determinism(verify_run, tmp_path):
    first, _ = verify_run
    run_verify(tmp_path, seed=0, threads=int(os.environ.get("ZYGMUND_THREADS", "1") or 1))
    diff = compare_dirs(first, tmp_path)
    _report(("PASS" if not diff else "FAIL") + f" [10] determinism: {len(diff)} differing files")
    assert not diff, diff


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        results = run_verify(a, seed=0)
        for r in results:
            print(r.line())
        run_verify(b, seed=0)
        diff = compare_dirs(a, b)
        print(("PASS" if not diff else "FAIL") + f" [10] determinism: {len(diff)} differing files")
        sys.exit(0 if all(r.ok for r in results) and not diff else 2)
