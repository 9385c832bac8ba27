from __future__ import annotations

from pathlib import Path

import pytest

from nileztn.cli import main
from nileztn.config import RunConfig
from nileztn.evalkit import EvaluationReport
from nileztn.pipeline import FILES, run_pipeline

_GATE_LINES: dict[str, str] = {}


class PipelineCache:
    """Full pipeline runs keyed by (seed, tag), each in its own directory.

    Tag "cli" goes through ``nileztn pipeline`` instead of the library call.
    """

    def __init__(self, root: Path):
        self.root = root
        self.runs = {}

    def get(self, seed: int = 0, tag: str = "a"):
        key = (seed, tag)
        if key not in self.runs:
            out = self.root / f"seed{seed}_{tag}"
            if tag == "cli":
                code = main(["pipeline", "--seed", str(seed), "--out", str(out)])
                assert code == 0, f"nileztn pipeline exited with {code}"
                report = EvaluationReport.load(out / FILES["report"])
            else:
                report = run_pipeline(RunConfig().with_seed(seed), out, log=None)
            self.runs[key] = (out, report)
        return self.runs[key]


@pytest.fixture(scope="session")
def pipelines(tmp_path_factory) -> PipelineCache:
    return PipelineCache(tmp_path_factory.mktemp("pipelines"))


@pytest.fixture
def gate():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def check(cid: int, title: str, ok: bool, detail: str = ""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {cid:>2}: {title}"
        if detail:
            line += f" ({detail})"
        _GATE_LINES[f"{cid:02d}"] = line
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _GATE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_GATE_LINES):
            terminalreporter.write_line(_GATE_LINES[key])
