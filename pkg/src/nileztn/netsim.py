"""Single bottleneck link between core network and application server.

Capacity follows an injected piecewise-constant trace; a traffic-shaping
action caps the flow rate, and the realized end-to-end throughput is the
smaller of capacity and rate, scaled by a protocol efficiency and reduced by
a small uniform noise term.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .objective import delta, goal_kbps, reward

DEFAULT_RATES_KBPS = (100, 150, 200, 250, 300, 400, 500, 550)
DEFAULT_CAP_BOUNDS = (310.0, 560.0)

TRACE_HEADER = ["t", "capacity_kbps"]
EPISODE_HEADER = [
    "t",
    "capacity_kbps",
    "action_id",
    "shaped_rate_kbps",
    "observed_kbps",
    "predicted_kbps",
    "reward",
    "delta",
]


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class BandwidthTrace:
    samples: tuple[float, ...]
    seed: int | None
    bounds: tuple[float, float]

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, t: int) -> float:
        return self.samples[t]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.samples, dtype=float)


@dataclass(frozen=True)
class ShapingAction:
    id: int
    rate_kbps: float
    burst_kbps: float

    def __post_init__(self):
        if not self.rate_kbps > 0:
            raise ValueError(f"shaping rate must be positive, got {self.rate_kbps}")


def make_actions(rates_kbps: Sequence[float] = DEFAULT_RATES_KBPS) -> tuple[ShapingAction, ...]:
    """Action set with ids in the given order and burst = rate / 10."""
    return tuple(ShapingAction(i, float(r), float(r) / 10.0) for i, r in enumerate(rates_kbps))


@dataclass(frozen=True)
class LinkConfig:
    efficiency: float = 0.97
    noise_kbps: float = 5.0
    history_len: int = 10


@dataclass(frozen=True)
class LinkState:
    t: int
    capacity_kbps: float
    shaped_rate_kbps: float
    observed_kbps: float


class Step(NamedTuple):
    state: LinkState
    action: ShapingAction
    reward: int
    predicted_kbps: float


@dataclass
class Episode:
    trace: BandwidthTrace
    goal_kbps: float
    label: str = "ID"
    steps: list[Step] = field(default_factory=list)

    @property
    def observed(self) -> np.ndarray:
        return np.array([s.state.observed_kbps for s in self.steps])

    @property
    def rewards(self) -> list[int]:
        return [s.reward for s in self.steps]


class Decision(NamedTuple):
    action: ShapingAction
    predicted_kbps: float = math.nan


Policy = Callable[[Sequence[float]], Decision]


def generate_trace(seed: int, length: int = 300, cap_min: float = DEFAULT_CAP_BOUNDS[0],
                   cap_max: float = DEFAULT_CAP_BOUNDS[1], hold: int = 5) -> BandwidthTrace:
    """Piecewise-constant capacity: a uniform draw held for ``hold`` steps, repeated."""
    if cap_min > cap_max or cap_min < 0:
        raise TraceError(f"invalid capacity bounds [{cap_min}, {cap_max}]")
    if length < 1 or hold < 1:
        raise TraceError("length and hold must be >= 1")
    rng = np.random.default_rng(seed)
    blocks = rng.uniform(cap_min, cap_max, size=-(-length // hold))
    samples = np.repeat(blocks, hold)[:length]
    # uniform() can return the upper bound through rounding; keep the closed interval
    samples = np.clip(samples, cap_min, cap_max)
    return BandwidthTrace(tuple(float(x) for x in samples), seed, (float(cap_min), float(cap_max)))


def shaped_throughput(capacity_kbps: float, rate_kbps: float, eps: float,
                      efficiency: float = 0.97) -> float:
    return max(0.0, min(capacity_kbps, rate_kbps) * efficiency - eps)


def apply_shaping(capacity_kbps: float, action: ShapingAction, rng,
                  efficiency: float = 0.97, noise_kbps: float = 5.0) -> float:
    """Realized throughput ``max(0, min(C, rate) * eta - eps)``, eps ~ U[0, noise_kbps].

    ``rng`` is a seed or a ``numpy.random.Generator``.
    """
    if capacity_kbps < 0:
        raise ValueError("capacity must be non-negative")
    rng = np.random.default_rng(rng)
    return shaped_throughput(capacity_kbps, action.rate_kbps, _noise(rng, noise_kbps), efficiency)


def _noise(rng: np.random.Generator, noise_kbps: float) -> float:
    # one draw per step even when noise is disabled keeps streams aligned
    u = rng.random()
    return u * noise_kbps


class LinkEnv:
    """Step-wise link driven by a trace.

    ``history`` holds the monitored deliverable bandwidth of each step: what
    the link would have carried unshaped, under the same noise draw as the
    realized throughput. It is primed with ``history_len`` measurements of the
    first capacity sample so a prediction window exists from step 0.
    """

    def __init__(self, trace: BandwidthTrace, link: LinkConfig, rng: np.random.Generator):
        if len(trace) == 0:
            raise TraceError("empty trace")
        self.trace = trace
        self.link = link
        self.rng = rng
        self.t = 0
        self.history: list[float] = [self._measure(trace[0]) for _ in range(link.history_len)]

    def _measure(self, capacity: float) -> float:
        return shaped_throughput(capacity, math.inf, _noise(self.rng, self.link.noise_kbps),
                                 self.link.efficiency)

    @property
    def done(self) -> bool:
        return self.t >= len(self.trace)

    def window(self, n: int | None = None) -> list[float]:
        n = self.link.history_len if n is None else n
        return self.history[-n:]

    def step(self, action: ShapingAction) -> LinkState:
        capacity = self.trace[self.t]
        eps = _noise(self.rng, self.link.noise_kbps)
        observed = shaped_throughput(capacity, action.rate_kbps, eps, self.link.efficiency)
        self.history.append(shaped_throughput(capacity, math.inf, eps, self.link.efficiency))
        self.t += 1
        return LinkState(self.t - 1, capacity, action.rate_kbps, observed)


def run_episode(trace: BandwidthTrace, policy: Policy, goal, *, seed=0,
                link: LinkConfig = LinkConfig(), label: str = "ID") -> Episode:
    """Drive ``policy`` over the whole trace and record every step."""
    env = LinkEnv(trace, link, np.random.default_rng(seed))
    episode = Episode(trace, goal_kbps(goal), label)
    while not env.done:
        decision = policy(env.window())
        state = env.step(decision.action)
        episode.steps.append(Step(state, decision.action,
                                  reward(state.observed_kbps, goal), decision.predicted_kbps))
    return episode


def fixed_rate_policy(action: ShapingAction) -> Policy:
    return lambda history: Decision(action)


def write_trace_csv(trace: BandwidthTrace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for t, c in enumerate(trace.samples):
            w.writerow([t, repr(c)])


def read_trace_csv(path, bounds: tuple[float, float] | None = None) -> BandwidthTrace:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != TRACE_HEADER:
        raise TraceError(f"{path}: expected header {','.join(TRACE_HEADER)}")
    samples = tuple(float(r[1]) for r in rows[1:])
    if not samples:
        raise TraceError(f"{path}: no samples")
    if bounds is None:
        bounds = (min(samples), max(samples))
    return BandwidthTrace(samples, None, bounds)


def write_episode_csv(episode: Episode, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(EPISODE_HEADER)
        for s in episode.steps:
            st = s.state
            w.writerow([st.t, repr(st.capacity_kbps), s.action.id, repr(st.shaped_rate_kbps),
                        repr(st.observed_kbps), repr(s.predicted_kbps), s.reward,
                        delta(st.observed_kbps, episode.goal_kbps)])


def read_episode_rows(path) -> list[dict[str, float]]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != EPISODE_HEADER:
            raise TraceError(f"{path}: expected header {','.join(EPISODE_HEADER)}")
        return [{k: float(v) for k, v in row.items()} for row in reader]
