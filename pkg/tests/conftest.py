from __future__ import annotations

import os

import pytest

from zygmund.acceptance import run_verify

LINES: list[str] = []


@pytest.fixture(scope="session")
def verify_run(tmp_path_factory):
    """One full acceptance run shared by every criterion test."""
    out = tmp_path_factory.mktemp("verify")
    threads = int(os.environ.get("ZYGMUND_THREADS", "1") or 1)
    results = run_verify(out, seed=0, threads=threads)
    return out, {r.number: r for r in results}


def pytest_terminal_summary(terminalreporter):
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
