"""Tabular Q-learning over discretized predicted bandwidth.

The state is the bin of the predicted next-step bandwidth, the actions are
traffic-shaping rates, and the reward is +1/-1 depending on whether the
realized bandwidth meets the intent goal.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .netsim import (BandwidthTrace, Decision, LinkConfig, LinkEnv, ShapingAction,
                     make_actions)
from .objective import reward

log = logging.getLogger(__name__)

QTABLE_MAGIC = "NILEZTN-QTABLE v1"


class QTableFormatError(ValueError):
    pass


def n_bins(bin_width: float, cap_max: float) -> int:
    return max(1, math.ceil(cap_max / bin_width))


def discretize(predicted_kbps: float, bin_width: float, cap_max: float) -> int:
    """``floor(predicted / bin_width)``; the last bin absorbs ``cap_max``."""
    if not 0.0 <= predicted_kbps <= cap_max:
        log.warning("predicted bandwidth %.3f outside [0, %.3f]; clamping", predicted_kbps, cap_max)
        predicted_kbps = min(max(predicted_kbps, 0.0), cap_max)
    return min(int(predicted_kbps // bin_width), n_bins(bin_width, cap_max) - 1)


@dataclass
class QTable:
    values: np.ndarray
    alpha: float = 0.1
    gamma: float = 0.9
    bin_width: float = 50.0
    cap_max: float = 560.0
    epsilon: float = 1.0
    epsilon_decay: float = 0.99
    epsilon_min: float = 0.05
    visits: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.visits is None:
            self.visits = np.zeros(self.values.shape, dtype=np.int64)
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")

    @classmethod
    def zeros(cls, n_states: int, n_actions: int, **kw) -> QTable:
        return cls(np.zeros((n_states, n_actions)), **kw)

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def n_actions(self) -> int:
        return self.values.shape[1]

    def copy(self) -> QTable:
        return QTable(self.values.copy(), self.alpha, self.gamma, self.bin_width, self.cap_max,
                      self.epsilon, self.epsilon_decay, self.epsilon_min, self.visits.copy())

    def decay_epsilon(self) -> None:
        self.epsilon = max(self.epsilon_min, self.epsilon * self.epsilon_decay)

    def greedy_policy(self) -> np.ndarray:
        return np.array([greedy(self.values[s]) for s in range(self.n_states)])


def greedy(row) -> int:
    """Argmax with ties going to the lowest action id."""
    return int(np.argmax(row))


def select_action(q: QTable, s: int, explore: bool, rng: np.random.Generator) -> int:
    if explore and rng.random() < q.epsilon:
        return int(rng.integers(q.n_actions))
    return greedy(q.values[s])


def update(q: QTable, s: int, a: int, r: float, s_next: int) -> float:
    """One Bellman backup of ``Q[s, a]``; returns the new value."""
    target = r + q.gamma * q.values[s_next].max()
    q.values[s, a] += q.alpha * (target - q.values[s, a])
    q.visits[s, a] += 1
    return q.values[s, a]


class Environment(Protocol):
    def reset(self) -> int: ...

    def step(self, action: int) -> tuple[int, float, bool]: ...


@dataclass(frozen=True)
class AgentConfig:
    episodes: int = 400
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon: float = 1.0
    epsilon_decay: float = 0.99
    epsilon_min: float = 0.05
    bin_width: float = 50.0
    seed: int = 0


@dataclass
class TrainingRun:
    """Final table plus the table as it stood after every episode."""

    final: QTable
    snapshots: list[QTable] = field(default_factory=list)
    episode_returns: list[float] = field(default_factory=list)

    @property
    def episodes(self) -> int:
        return len(self.snapshots) - 1


def q_learn(q: QTable, make_env: Callable[[int], Environment], episodes: int,
            rng: np.random.Generator) -> TrainingRun:
    """Epsilon-greedy Q-learning; epsilon decays once per finished episode.

    ``snapshots[k]`` is a copy of the table after ``k`` episodes.
    """
    run = TrainingRun(q, [q.copy()])
    for k in range(episodes):
        env = make_env(k)
        s = env.reset()
        total, done = 0.0, False
        while not done:
            a = select_action(q, s, True, rng)
            s_next, r, done = env.step(a)
            update(q, s, a, r, s_next)
            total += r
            s = s_next
        q.decay_epsilon()
        run.snapshots.append(q.copy())
        run.episode_returns.append(total)
    return run


class ClosedLoopEnv:
    """Link episode seen through the predictor: states are predicted-bandwidth bins."""

    def __init__(self, trace: BandwidthTrace, predictor: Callable[[Sequence[float]], float],
                 actions: Sequence[ShapingAction], goal, bin_width: float, cap_max: float,
                 link: LinkConfig, rng: np.random.Generator):
        self.trace = trace
        self.predictor = predictor
        self.actions = actions
        self.goal = goal
        self.bin_width = bin_width
        self.cap_max = cap_max
        self.link = link
        self.rng = rng
        self.env = None

    def _state(self) -> int:
        return discretize(self.predictor(self.env.window()), self.bin_width, self.cap_max)

    def reset(self) -> int:
        self.env = LinkEnv(self.trace, self.link, self.rng)
        return self._state()

    def step(self, action: int):
        st = self.env.step(self.actions[action])
        return self._state(), reward(st.observed_kbps, self.goal), self.env.done


def train_agent_run(traces: Sequence[BandwidthTrace], predictor, goal, config: AgentConfig,
                    actions: Sequence[ShapingAction] | None = None,
                    link: LinkConfig = LinkConfig(), cap_max: float | None = None) -> TrainingRun:
    """Online training over ``config.episodes`` closed-loop episodes.

    Episode ``k`` runs on ``traces[k % len(traces)]``.
    """
    if not traces and config.episodes > 0:
        raise ValueError("at least one training trace is required")
    actions = make_actions() if actions is None else actions
    cap_max = predictor.cap_max if cap_max is None else cap_max
    q = QTable.zeros(n_bins(config.bin_width, cap_max), len(actions), alpha=config.alpha,
                     gamma=config.gamma, bin_width=config.bin_width, cap_max=cap_max,
                     epsilon=config.epsilon, epsilon_decay=config.epsilon_decay,
                     epsilon_min=config.epsilon_min)
    rng = np.random.default_rng(config.seed)

    def make_env(k):
        return ClosedLoopEnv(traces[k % len(traces)], predictor, actions, goal,
                             config.bin_width, cap_max, link, rng)

    return q_learn(q, make_env, config.episodes, rng)


def train_agent(traces, predictor, goal, config: AgentConfig, actions=None,
                link: LinkConfig = LinkConfig(), cap_max=None) -> QTable:
    return train_agent_run(traces, predictor, goal, config, actions, link, cap_max).final


def snapshot_suboptimal(run: TrainingRun, fraction: float = 0.1) -> QTable:
    """Table after ``ceil(fraction * N)`` of the ``N`` training episodes."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    return run.snapshots[math.ceil(fraction * run.episodes)].copy()


def q_controller(q: QTable, predictor, actions: Sequence[ShapingAction], explore: bool = False,
                 rng: np.random.Generator | None = None):
    """Frozen-table policy for ``netsim.run_episode``.

    With ``explore`` the table's own epsilon is used, as an agent still in
    online training would act.
    """
    if explore and rng is None:
        raise ValueError("an rng is required when exploring")

    def policy(window):
        predicted = predictor(window)
        s = discretize(predicted, q.bin_width, q.cap_max)
        return Decision(actions[select_action(q, s, explore, rng)], predicted)

    return policy


# --- table file ---------------------------------------------------------------

def save_qtable(q: QTable, path) -> None:
    lines = [QTABLE_MAGIC, f"dims {q.n_states} {q.n_actions}",
             f"alpha {q.alpha!r}", f"gamma {q.gamma!r}", f"bin_width {q.bin_width!r}",
             f"cap_max {q.cap_max!r}", f"epsilon {q.epsilon!r}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in q.values]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_qtable(path) -> QTable:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != QTABLE_MAGIC:
        raise QTableFormatError(f"{path}: missing '{QTABLE_MAGIC}' header")
    try:
        _, rows, cols = lines[1].split()
        rows, cols = int(rows), int(cols)
        meta = dict(ln.split() for ln in lines[2:7])
        values = np.array([[float(v) for v in ln.split()] for ln in lines[7:7 + rows]])
        if values.shape != (rows, cols) or len(lines) != 7 + rows:
            raise QTableFormatError(f"{path}: expected a {rows}x{cols} matrix")
        return QTable(values, alpha=float(meta["alpha"]), gamma=float(meta["gamma"]),
                      bin_width=float(meta["bin_width"]), cap_max=float(meta["cap_max"]),
                      epsilon=float(meta["epsilon"]))
    except (KeyError, ValueError) as exc:
        if isinstance(exc, QTableFormatError):
            raise
        raise QTableFormatError(f"{path}: malformed table ({exc})") from exc
