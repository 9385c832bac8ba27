"""Stage functions: translate, traces, predictor, agent, episodes, Monte Carlo, evaluation.

Every stage reads its inputs from and writes its outputs to one output
directory, so stages can run one at a time or chained by ``run_pipeline``.
All randomness is derived from the three config seeds, and reruns produce
byte-identical data files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .agent import load_qtable, q_controller, save_qtable, snapshot_suboptimal, train_agent_run
from .config import RunConfig
from .evalkit import (MODES, SCENARIOS, EvaluationReport, ObjectiveSample, comparison_traces,
                      evaluate_objective_closedloop, evaluate_objective_montecarlo,
                      satisfaction, trend_compare)
from .intent import (ExemplarCorpus, NaturalIntent, extract_bandwidth, parse_nile, render_nile,
                     translate)
from .netsim import (BandwidthTrace, LinkConfig, LinkEnv, ShapingAction, generate_trace,
                     read_episode_rows, read_trace_csv, run_episode, write_episode_csv,
                     write_trace_csv)
from .predictor import bilstm_forward_batch, load_model, make_windows, save_model, train_hybrid

FILES = {
    "intents": "intents.nile",
    "goals": "goals.csv",
    "trace_train": "trace_train.csv",
    "trace_eval": "trace_eval.csv",
    "monitored_train": "monitored_train.csv",
    "model": "model.txt",
    "prediction_train": "prediction_train.csv",
    "bilstm_loss": "bilstm_loss.csv",
    "boosting_mse": "boosting_mse.csv",
    "qtable_optimal": "qtable_optimal.txt",
    "qtable_suboptimal": "qtable_suboptimal.txt",
    "agent_training": "agent_training.csv",
    **{f"episode_{sc.lower()}_{md}": f"episode_{sc.lower()}_{md}.csv"
       for sc in SCENARIOS for md in MODES},
    "objective_montecarlo": "objective_montecarlo.csv",
    "objective_closedloop": "objective_closedloop.csv",
    "report": "report.csv",
}
MANIFEST = "manifest.json"
OBJECTIVE_HEADER = ["episode", "scenario", "mode", "source", "mean_deviation"]

# independent random streams derived from each base seed
_STREAM = {"eval_trace": 1, "agent_traces": 2, "monitor": 3, "eval_noise": 4, "explore": 5,
           "comparison": 6}


class MissingArtifactError(FileNotFoundError):
    def __init__(self, path: Path, producer: str):
        super().__init__(f"missing artifact {path}; run `nileztn {producer}` first")
        self.path = path
        self.producer = producer


_PRODUCER = {
    "intents": "translate", "goals": "translate", "trace_train": "gen-trace",
    "trace_eval": "gen-trace", "model": "train-predictor", "qtable_optimal": "train-agent",
    "qtable_suboptimal": "train-agent", "objective_montecarlo": "montecarlo",
    **{f"episode_{sc.lower()}_{md}": "run" for sc in SCENARIOS for md in MODES},
}


def derive_seed(base: int, stream: str) -> int:
    return int(np.random.SeedSequence([base, _STREAM[stream]]).generate_state(1)[0])


@dataclass
class Workspace:
    out: Path

    def __post_init__(self):
        self.out = Path(self.out)

    def path(self, name: str) -> Path:
        return self.out / FILES[name]

    def writable(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.path(name)

    def require(self, name: str) -> Path:
        p = self.path(name)
        if not p.is_file():
            raise MissingArtifactError(p, _PRODUCER.get(name, "pipeline"))
        return p


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --- stages ---------------------------------------------------------------------

@dataclass(frozen=True)
class Goals:
    id_kbps: float
    ood_kbps: float

    def of(self, scenario: str) -> float:
        return self.id_kbps if scenario == "ID" else self.ood_kbps


def stage_translate(cfg: RunConfig, ws: Workspace) -> Goals:
    """Translate both intents, extract their goals, apply any goal overrides."""
    corpus = ExemplarCorpus.load(cfg.corpus) if cfg.corpus else ExemplarCorpus.bundled()
    rows, nile = [], []
    for scenario, text, override in (("ID", cfg.id_intent, cfg.goal_id_kbps),
                                     ("OOD", cfg.ood_intent, cfg.goal_ood_kbps)):
        intent = translate(NaturalIntent(text, scenario.lower()), corpus)
        goal = extract_bandwidth(intent).beta_target
        rows.append([scenario, repr(float(goal if override is None else override)),
                     goal, render_nile(intent)])
        nile.append(render_nile(intent))
    with open(ws.writable("intents"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(nile) + "\n")
    _write_rows(ws.writable("goals"), ["scenario", "beta_target_kbps", "intent_kbps", "nile"], rows)
    return load_goals(ws)


def load_goals(ws: Workspace) -> Goals:
    rows = {r["scenario"]: r for r in _read_rows(ws.require("goals"))}
    for r in rows.values():
        parse_nile(r["nile"])
    return Goals(float(rows["ID"]["beta_target_kbps"]), float(rows["OOD"]["beta_target_kbps"]))


def stage_gen_trace(cfg: RunConfig, ws: Workspace) -> tuple[BandwidthTrace, BandwidthTrace]:
    train = generate_trace(cfg.trace_seed, cfg.trace_length, cfg.cap_min, cfg.cap_max, cfg.hold)
    ev = generate_trace(derive_seed(cfg.eval_seed, "eval_trace"), cfg.eval_length,
                        cfg.cap_min, cfg.cap_max, cfg.hold)
    write_trace_csv(train, ws.writable("trace_train"))
    write_trace_csv(ev, ws.writable("trace_eval"))
    return train, ev


def _bounds(cfg: RunConfig):
    return (cfg.cap_min, cfg.cap_max)


def monitored_series(trace: BandwidthTrace, link: LinkConfig, seed: int) -> list[float]:
    """Deliverable bandwidth the monitor records when the link runs unshaped."""
    env = LinkEnv(trace, link, np.random.default_rng(seed))
    unshaped = ShapingAction(-1, math.inf, math.inf)
    while not env.done:
        env.step(unshaped)
    return env.history


def stage_train_predictor(cfg: RunConfig, ws: Workspace):
    trace = read_trace_csv(ws.require("trace_train"), _bounds(cfg))
    series = monitored_series(trace, cfg.link(), derive_seed(cfg.train_seed, "monitor"))
    predictor = train_hybrid(series, cfg.cap_max, cfg.lstm(), cfg.boosting())
    save_model(predictor, ws.writable("model"))
    _write_rows(ws.writable("monitored_train"), ["t", "monitored_kbps"],
                ([t, repr(float(v))] for t, v in enumerate(series)))
    X, y = make_windows(series, cfg.window)
    raw = bilstm_forward_batch(predictor.bilstm, X)
    hybrid = [predictor(w) for w in X]
    _write_rows(ws.writable("prediction_train"), ["t", "actual_kbps", "bilstm_kbps", "hybrid_kbps"],
                ([t + cfg.window, repr(float(a)), repr(float(b)), repr(float(h))]
                 for t, (a, b, h) in enumerate(zip(y, raw, hybrid))))
    _write_rows(ws.writable("bilstm_loss"), ["epoch", "mse_normalized"],
                ([k, repr(v)] for k, v in enumerate(predictor.bilstm_losses)))
    _write_rows(ws.writable("boosting_mse"), ["trees", "mse_kbps2"],
                ([m, repr(v)] for m, v in enumerate(predictor.staged_mse)))
    return predictor


def agent_traces(cfg: RunConfig) -> list[BandwidthTrace]:
    seeds = np.random.SeedSequence(derive_seed(cfg.trace_seed, "agent_traces")).generate_state(
        cfg.episodes)
    return [generate_trace(int(s), cfg.train_episode_length, cfg.cap_min, cfg.cap_max, cfg.hold)
            for s in seeds]


def stage_train_agent(cfg: RunConfig, ws: Workspace):
    predictor = load_model(ws.require("model"))
    goals = load_goals(ws)
    run = train_agent_run(agent_traces(cfg), predictor, goals.id_kbps, cfg.agent(),
                          cfg.action_set(), cfg.link(), cfg.cap_max)
    sub = snapshot_suboptimal(run, cfg.suboptimal_fraction)
    save_qtable(run.final, ws.writable("qtable_optimal"))
    save_qtable(sub, ws.writable("qtable_suboptimal"))
    _write_rows(ws.writable("agent_training"), ["episode", "return", "epsilon"],
                ([k, repr(r), repr(run.snapshots[k + 1].epsilon)]
                 for k, r in enumerate(run.episode_returns)))
    return run


def _controller(cfg: RunConfig, q, predictor, mode: str):
    explore = mode == "suboptimal"
    rng = np.random.default_rng(derive_seed(cfg.eval_seed, "explore")) if explore else None
    return q_controller(q, predictor, cfg.action_set(), explore, rng)


def stage_run(cfg: RunConfig, ws: Workspace):
    """Evaluation episodes for {ID, OOD} x {optimal, suboptimal} on the shared trace."""
    predictor = load_model(ws.require("model"))
    goals = load_goals(ws)
    trace = read_trace_csv(ws.require("trace_eval"), _bounds(cfg))
    tables = {md: load_qtable(ws.require(f"qtable_{md}")) for md in MODES}
    noise = derive_seed(cfg.eval_seed, "eval_noise")
    episodes = {}
    for sc in SCENARIOS:
        for md in MODES:
            ep = run_episode(trace, _controller(cfg, tables[md], predictor, md), goals.of(sc),
                             seed=noise, link=cfg.link(), label=sc)
            write_episode_csv(ep, ws.writable(f"episode_{sc.lower()}_{md}"))
            episodes[(sc, md)] = ep
    return episodes


def _comparison(cfg: RunConfig):
    seed = derive_seed(cfg.eval_seed, "comparison")
    traces = comparison_traces(seed, cfg.mc_episodes, cfg.mc_length, cfg.cap_min, cfg.cap_max,
                               cfg.hold)
    return seed, traces


def _write_objective(path: Path, samples: list[ObjectiveSample]) -> None:
    _write_rows(path, OBJECTIVE_HEADER, ([s.episode, s.scenario, s.mode, s.source,
                                          repr(s.mean_deviation)] for s in samples))


def _read_objective(path: Path) -> list[ObjectiveSample]:
    return [ObjectiveSample(int(r["episode"]), float(r["mean_deviation"]), r["scenario"],
                            r["mode"], r["source"]) for r in _read_rows(path)]


def stage_montecarlo(cfg: RunConfig, ws: Workspace) -> list[ObjectiveSample]:
    goals = load_goals(ws)
    seed, traces = _comparison(cfg)
    samples = []
    for sc in SCENARIOS:
        samples += evaluate_objective_montecarlo(goals.of(sc), traces, cfg.action_set(), seed,
                                                 cfg.link(), sc, cfg.mc_constrained)
    _write_objective(ws.writable("objective_montecarlo"), samples)
    return samples


def stage_evaluate(cfg: RunConfig, ws: Workspace) -> EvaluationReport:
    predictor = load_model(ws.require("model"))
    q = load_qtable(ws.require("qtable_optimal"))
    goals = load_goals(ws)
    mc = _read_objective(ws.require("objective_montecarlo"))
    report = EvaluationReport(goals={sc: goals.of(sc) for sc in SCENARIOS})
    for sc in SCENARIOS:
        for md in MODES:
            rows = read_episode_rows(ws.require(f"episode_{sc.lower()}_{md}"))
            report.satisfaction[(sc, md)] = satisfaction([r["observed_kbps"] for r in rows],
                                                         goals.of(sc))
    seed, traces = _comparison(cfg)
    cl = []
    for sc in SCENARIOS:
        cl += evaluate_objective_closedloop(q, predictor, traces, goals.of(sc), cfg.action_set(),
                                            seed, "optimal", cfg.link(), sc)
    _write_objective(ws.writable("objective_closedloop"), cl)
    report.objective = mc + cl
    for sc in SCENARIOS:
        report.correlation[sc] = trend_compare(report.objective_for(sc, "montecarlo"),
                                               report.objective_for(sc, "closedloop"))
    report.save(ws.writable("report"))
    return report


STAGES = {
    "translate": stage_translate,
    "gen-trace": stage_gen_trace,
    "train-predictor": stage_train_predictor,
    "train-agent": stage_train_agent,
    "run": stage_run,
    "montecarlo": stage_montecarlo,
    "evaluate": stage_evaluate,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg: RunConfig, ws: Workspace, timings: dict[str, float]) -> Path:
    artifacts = {}
    for name in FILES:
        p = ws.path(name)
        if p.is_file():
            artifacts[name] = {"path": p.name, "sha256": _sha256(p)}
    manifest = {
        "config": cfg.snapshot(),
        "artifacts": artifacts,
        "timings_s": {k: round(v, 3) for k, v in timings.items()},
        "versions": {"nileztn": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = ws.out / MANIFEST
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def run_pipeline(cfg: RunConfig, out=None, log=print) -> EvaluationReport:
    ws = Workspace(out if out is not None else cfg.out_dir)
    timings, result = {}, None
    for name, stage in STAGES.items():
        t0 = time.perf_counter()
        result = stage(cfg, ws)
        timings[name] = time.perf_counter() - t0
        if log:
            log(f"[{name}] done in {timings[name]:.1f}s")
    write_manifest(cfg, ws, timings)
    return result
