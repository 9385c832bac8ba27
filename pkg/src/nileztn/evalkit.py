"""Satisfaction, MOS, run counts, and the closed-loop vs Monte Carlo objective.

The objective is the per-episode mean of ``|goal - B_t|``. The Monte Carlo
side picks each step's action by exhaustive search using the known shaping
model; the closed loop only sees predictions.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .agent import QTable, q_controller
from .netsim import (BandwidthTrace, Episode, LinkConfig, LinkEnv, ShapingAction,
                     generate_trace, run_episode)
from .objective import delta, goal_kbps

SCENARIOS = ("ID", "OOD")
MODES = ("optimal", "suboptimal")
SOURCES = ("montecarlo", "closedloop")
MOS_MIN, MOS_MAX = 1.0, 5.0


class EmptyEpisodeError(ValueError):
    pass


class ReportFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SatisfactionSeries:
    deltas: tuple[int, ...]

    def __post_init__(self):
        if not self.deltas:
            raise EmptyEpisodeError("satisfaction needs at least one step")
        if any(d not in (0, 1) for d in self.deltas):
            raise ValueError("deltas must be 0 or 1")

    @property
    def T(self) -> int:
        return len(self.deltas)

    @property
    def met(self) -> int:
        return sum(self.deltas)

    @property
    def fraction(self) -> float:
        return self.met / self.T


def _observed(episode) -> list[float]:
    if isinstance(episode, Episode):
        return list(episode.observed)
    return [float(x) for x in episode]


def satisfaction(episode, goal) -> SatisfactionSeries:
    """``delta_t = 1`` iff the realized bandwidth meets the goal. Accepts an
    Episode or a plain sequence of observed kbps."""
    return SatisfactionSeries(tuple(delta(b, goal) for b in _observed(episode)))


@dataclass(frozen=True)
class MosScore:
    value: float
    mos_min: float = MOS_MIN
    mos_max: float = MOS_MAX


def mos(series: SatisfactionSeries, mos_min: float = MOS_MIN, mos_max: float = MOS_MAX) -> MosScore:
    return MosScore(mos_min + series.fraction * (mos_max - mos_min), mos_min, mos_max)


def count_goal_runs(episodes: Iterable, goal) -> tuple[int, int]:
    """Steps meeting the goal, and total steps, over all episodes."""
    met = total = 0
    for ep in episodes:
        s = satisfaction(ep, goal)
        met += s.met
        total += s.T
    if total == 0:
        raise EmptyEpisodeError("no steps to count")
    return met, total


# --- objective ------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectiveSample:
    episode: int
    mean_deviation: float
    scenario: str = "ID"
    mode: str = "optimal"
    source: str = "closedloop"

    def __post_init__(self):
        if not self.mean_deviation >= 0:
            raise ValueError("mean deviation must be non-negative")


def comparison_seeds(seed: int, k: int) -> list[int]:
    """Independent per-episode seeds; both objective evaluators draw traces and noise from them."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(k)]


def comparison_traces(seed: int, k: int, length: int, cap_min: float, cap_max: float,
                      hold: int = 5) -> list[BandwidthTrace]:
    return [generate_trace(s, length, cap_min, cap_max, hold) for s in comparison_seeds(seed, k)]


def expected_throughput(capacity: float, rate: float, link: LinkConfig) -> float:
    """E[max(0, m - eps)] for eps ~ U[0, noise], m = min(C, rate) * eta."""
    m = min(capacity, rate) * link.efficiency
    n = link.noise_kbps
    if n == 0 or m >= n:
        return max(0.0, m - n / 2)
    if m <= 0:
        return 0.0
    return m * m / (2 * n)


def _abs_mean(c: float, L: float) -> float:
    """Mean of |e - c| for e uniform on [0, L], piecewise to avoid cancellation."""
    if c <= 0:
        return L / 2 - c
    if c >= L:
        return c - L / 2
    return (c * c + (L - c) ** 2) / (2 * L)


def expected_deviation(goal: float, capacity: float, rate: float, link: LinkConfig) -> float:
    """E|goal - max(0, m - eps)| with eps ~ U[0, noise], in closed form."""
    m = min(capacity, rate) * link.efficiency
    n = link.noise_kbps
    if n == 0:
        return abs(goal - max(0.0, m))
    L = min(n, max(m, 0.0))  # noise range where the clamp is inactive
    w = 1.0 if L == n else L / n
    return w * _abs_mean(m - goal, L) + (1 - w) * abs(goal)


def best_action(goal: float, capacity: float, actions: Sequence[ShapingAction],
                link: LinkConfig, constrained: bool = True) -> ShapingAction:
    """Exhaustive search for the action with the least expected deviation.

    With ``constrained`` the search is limited to actions whose expected
    throughput meets the goal, when any does; otherwise it spans all actions.
    Ties go to the lowest action id.
    """
    cand = list(actions)
    if constrained:
        ok = [a for a in cand if expected_throughput(capacity, a.rate_kbps, link) >= goal]
        cand = ok or cand
    return min(cand, key=lambda a: (expected_deviation(goal, capacity, a.rate_kbps, link), a.id))


def montecarlo_episode(trace: BandwidthTrace, goal, actions: Sequence[ShapingAction],
                       noise_seed: int, link: LinkConfig = LinkConfig(),
                       constrained: bool = True) -> float:
    """Mean realized deviation of the exhaustive-search policy over one trace."""
    g = goal_kbps(goal)
    env = LinkEnv(trace, link, np.random.default_rng(noise_seed))
    devs = []
    while not env.done:
        a = best_action(g, trace[env.t], actions, link, constrained)
        devs.append(abs(g - env.step(a).observed_kbps))
    return float(np.mean(devs))


def evaluate_objective_montecarlo(goal, traces: Sequence[BandwidthTrace],
                                  actions: Sequence[ShapingAction], seed: int,
                                  link: LinkConfig = LinkConfig(), scenario: str = "ID",
                                  constrained: bool = True) -> list[ObjectiveSample]:
    """One sample per trace; episode ``k`` uses noise seed ``comparison_seeds(seed, K)[k]``."""
    if not traces:
        raise ValueError("need at least one episode")
    seeds = comparison_seeds(seed, len(traces))
    return [ObjectiveSample(k, montecarlo_episode(tr, goal, actions, s, link, constrained),
                            scenario, "optimal", "montecarlo")
            for k, (tr, s) in enumerate(zip(traces, seeds))]


def evaluate_objective_closedloop(qtable: QTable, predictor, traces: Sequence[BandwidthTrace],
                                  goal, actions: Sequence[ShapingAction], seed: int,
                                  mode: str = "optimal", link: LinkConfig = LinkConfig(),
                                  scenario: str = "ID") -> list[ObjectiveSample]:
    """Frozen-table episodes on the same traces and noise seeds as the Monte Carlo side.

    ``suboptimal`` acts epsilon-greedily with the table's own epsilon.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    g = goal_kbps(goal)
    seeds = comparison_seeds(seed, len(traces))
    out = []
    for k, (tr, s) in enumerate(zip(traces, seeds)):
        explore = mode == "suboptimal"
        rng = np.random.default_rng([s, 1]) if explore else None
        ep = run_episode(tr, q_controller(qtable, predictor, actions, explore, rng), g,
                         seed=s, link=link, label=scenario)
        out.append(ObjectiveSample(k, float(np.mean(np.abs(g - ep.observed))), scenario, mode,
                                   "closedloop"))
    return out


@dataclass(frozen=True)
class TrendStatistic:
    pearson: float | None  # None when either side has zero variance
    mean_gap: float  # closed loop minus Monte Carlo
    n: int
    mean_montecarlo: float
    mean_closedloop: float


def trend_compare(mc: Sequence[ObjectiveSample], cl: Sequence[ObjectiveSample]) -> TrendStatistic:
    if len(mc) != len(cl) or not mc:
        raise ValueError("need equal-length, non-empty sample lists")
    if [s.episode for s in mc] != [s.episode for s in cl]:
        raise ValueError("sample lists are not aligned by episode")
    a = np.array([s.mean_deviation for s in mc])
    b = np.array([s.mean_deviation for s in cl])
    r = None
    if np.ptp(a) > 0 and np.ptp(b) > 0:
        r = float(np.corrcoef(a, b)[0, 1])
    return TrendStatistic(r, float(b.mean() - a.mean()), len(a), float(a.mean()), float(b.mean()))


# --- report ---------------------------------------------------------------------

@dataclass
class EvaluationReport:
    goals: dict[str, float] = field(default_factory=dict)
    satisfaction: dict[tuple[str, str], SatisfactionSeries] = field(default_factory=dict)
    objective: list[ObjectiveSample] = field(default_factory=list)
    correlation: dict[str, TrendStatistic] = field(default_factory=dict)

    def fraction(self, scenario: str, mode: str) -> float:
        return self.satisfaction[(scenario, mode)].fraction

    def mos_table(self) -> dict[tuple[str, str], MosScore]:
        return {key: mos(s) for key, s in self.satisfaction.items()}

    def run_counts(self) -> dict[tuple[str, str], tuple[int, int]]:
        return {key: (s.met, s.T) for key, s in self.satisfaction.items()}

    def ordering_holds(self) -> bool:
        f = [self.fraction(s, m) for s in SCENARIOS for m in MODES]
        return all(x > y for x, y in zip(f, f[1:]))

    def objective_for(self, scenario: str, source: str, mode: str = "optimal") -> list[ObjectiveSample]:
        return [s for s in self.objective
                if s.scenario == scenario and s.source == source and s.mode == mode]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        buf.write("# satisfaction\n# columns: scenario,mode,goal_kbps,t,delta\n")
        for (sc, md), s in self.satisfaction.items():
            for t, d in enumerate(s.deltas):
                w.writerow([sc, md, repr(float(self.goals[sc])), t, d])
        buf.write("# mos\n# columns: scenario,mode,met,total,fraction,mos\n")
        for (sc, md), s in self.satisfaction.items():
            w.writerow([sc, md, s.met, s.T, repr(s.fraction), repr(mos(s).value)])
        buf.write("# objective\n# columns: episode,scenario,mode,source,mean_deviation\n")
        for o in self.objective:
            w.writerow([o.episode, o.scenario, o.mode, o.source, repr(o.mean_deviation)])
        buf.write("# correlation\n# columns: scenario,pearson,mean_gap,n,mean_montecarlo,"
                  "mean_closedloop\n")
        for sc, c in self.correlation.items():
            w.writerow([sc, "n/a" if c.pearson is None else repr(c.pearson), repr(c.mean_gap),
                        c.n, repr(c.mean_montecarlo), repr(c.mean_closedloop)])
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> EvaluationReport:
        sections: dict[str, list[list[str]]] = {}
        current = None
        for lineno, line in enumerate(text.splitlines(), 1):
            if line.startswith("# columns:"):
                continue
            if line.startswith("# "):
                current = line[2:].strip()
                if current not in ("satisfaction", "mos", "objective", "correlation"):
                    raise ReportFormatError(f"line {lineno}: unknown section {current!r}")
                sections[current] = []
            elif line.strip():
                if current is None:
                    raise ReportFormatError(f"line {lineno}: data before any section header")
                sections[current].append(next(csv.reader([line])))
        rep = cls()
        try:
            deltas: dict[tuple[str, str], list[int]] = {}
            for sc, md, goal, _t, d in sections.get("satisfaction", []):
                rep.goals[sc] = float(goal)
                deltas.setdefault((sc, md), []).append(int(d))
            rep.satisfaction = {k: SatisfactionSeries(tuple(v)) for k, v in deltas.items()}
            for sc, md, met, total, _f, _m in sections.get("mos", []):
                if rep.run_counts().get((sc, md)) != (int(met), int(total)):
                    raise ReportFormatError(f"mos row for {sc}/{md} disagrees with satisfaction")
            rep.objective = [ObjectiveSample(int(e), float(v), sc, md, src)
                             for e, sc, md, src, v in sections.get("objective", [])]
            for sc, r, gap, n, a, b in sections.get("correlation", []):
                rep.correlation[sc] = TrendStatistic(None if r == "n/a" else float(r), float(gap),
                                                     int(n), float(a), float(b))
        except ValueError as exc:
            if isinstance(exc, ReportFormatError):
                raise
            raise ReportFormatError(f"malformed report: {exc}") from exc
        return rep

    @classmethod
    def load(cls, path) -> EvaluationReport:
        with open(path, encoding="utf-8") as fh:
            return cls.from_csv(fh.read())

    def summary(self) -> str:
        lines = ["scenario  mode        met/total  fraction  MOS"]
        for (sc, md), s in self.satisfaction.items():
            lines.append(f"{sc:<9} {md:<11} {s.met:>4}/{s.T:<5} {s.fraction:8.3f}  {mos(s).value:.3f}")
        for sc, c in self.correlation.items():
            r = "n/a" if c.pearson is None else f"{c.pearson:.3f}"
            lines.append(f"{sc} deviation: montecarlo {c.mean_montecarlo:.2f} kbps, closed loop "
                         f"{c.mean_closedloop:.2f} kbps, pearson {r}")
        return "\n".join(lines)
