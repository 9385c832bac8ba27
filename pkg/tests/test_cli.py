from __future__ import annotations

import json
import subprocess
import sys

import pytest

from nileztn.cli import main
from nileztn.evalkit import EvaluationReport
from nileztn.pipeline import FILES

SMALL = """\
trace_length = 60
epochs = 5
hidden = 4
n_trees = 5
episodes = 20
eval_length = 20
mc_episodes = 3
mc_length = 5
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def error_line(err: str) -> tuple[str, str]:
    line = [ln for ln in err.splitlines() if ln.startswith("error kind=")]
    assert len(line) == 1, err
    kind, _, msg = line[0][len("error kind="):].partition(" message=")
    return kind, json.loads(msg)


def test_translate_prints_nile_and_goal(capsys):
    assert main(["translate", "--intent", "I need at most 300 kbps from cn to ue1"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["define intent qosIntent: from endpoint('cn') to endpoint('ue1') "
                   "set bandwidth('max', '300', 'kbps')", "beta_target_kbps=300"]


def test_translate_gibberish_exit_2(capsys):
    assert main(["translate", "--intent", "purple monkey dishwasher"]) == 2
    kind, msg = error_line(capsys.readouterr().err)
    assert kind == "untranslatable-intent" and msg


def test_translate_conflict_exit_2(tmp_path, capsys):
    store = tmp_path / "active.nile"
    assert main(["translate", "--intent", "I need at most 300 kbps from cn to ue1",
                 "--store", str(store), "--admit"]) == 0
    assert "qosIntent" in store.read_text()
    capsys.readouterr()
    assert main(["translate", "--intent", "Limit streaming to 450 kbps", "--store", str(store)]) == 2
    err = capsys.readouterr().err
    assert "conflict:" in err
    assert error_line(err)[0] == "conflict"
    # a non-conflicting pair is admitted alongside
    assert main(["translate", "--intent", "Give me at least 2.5 Mbps from cn to ue2",
                 "--store", str(store), "--admit"]) == 0
    assert len(store.read_text().splitlines()) == 2


@pytest.mark.parametrize("stage", ["train-agent", "run", "evaluate"])
def test_missing_artifact_exit_2(tmp_path, small_cfg, capsys, stage):
    assert main([stage, "--config", str(small_cfg), "--out", str(tmp_path / "o")]) == 2
    kind, msg = error_line(capsys.readouterr().err)
    assert kind == "missing-artifact" and "run `nileztn " in msg


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as ex:
        main(["no-such-command"])
    assert ex.value.code == 1
    capsys.readouterr()
    with pytest.raises(SystemExit) as ex:
        main(["run", "--seed", "abc"])
    assert ex.value.code == 1
    assert error_line(capsys.readouterr().err)[0] == "usage"


def test_bad_config_exit_1(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("gamma = 1.5\n")
    assert main(["pipeline", "--config", str(p)]) == 1
    kind, msg = error_line(capsys.readouterr().err)
    assert kind == "config" and msg.startswith("line 1:")


def test_stage_by_stage_matches_pipeline(tmp_path, small_cfg, capsys):
    staged, whole = tmp_path / "staged", tmp_path / "whole"
    common = ["--config", str(small_cfg), "--seed", "3"]
    for stage in ("translate", "gen-trace", "train-predictor", "train-agent", "run",
                  "montecarlo", "evaluate"):
        assert main([stage, *common, "--out", str(staged)]) == 0, stage
    assert main(["pipeline", *common, "--out", str(whole)]) == 0
    assert "ordering ID-opt > ID-sub > OOD-opt > OOD-sub" in capsys.readouterr().out
    for name in FILES.values():
        assert (staged / name).read_bytes() == (whole / name).read_bytes(), name
    manifest = json.loads((whole / "manifest.json").read_text())
    assert manifest["config"]["trace_seed"] == 3
    assert set(manifest["artifacts"]) == set(FILES)
    EvaluationReport.load(whole / "report.csv")


def test_corrupt_artifact_exit_2(tmp_path, small_cfg, capsys):
    out = tmp_path / "o"
    assert main(["pipeline", "--config", str(small_cfg), "--out", str(out)]) == 0
    (out / "model.txt").write_text("not a model\n")
    capsys.readouterr()
    assert main(["train-agent", "--config", str(small_cfg), "--out", str(out)]) == 2
    assert error_line(capsys.readouterr().err)[0] == "data"


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "nileztn.cli", "--help"], capture_output=True,
                         text=True, check=True)
    for cmd in ("translate", "gen-trace", "train-predictor", "train-agent", "run", "montecarlo",
                "evaluate", "pipeline"):
        assert cmd in res.stdout
