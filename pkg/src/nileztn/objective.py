"""Per-step intent signals shared by the agent and the evaluator.

Both signals compare the realized post-action bandwidth against the goal with
an inclusive bound, so ``reward == +1`` exactly when ``delta == 1``.
Goals may be passed as a plain kbps number or as anything carrying a
``beta_target`` attribute (a ``BandwidthGoal``).
"""

from __future__ import annotations


def goal_kbps(goal) -> float:
    return float(getattr(goal, "beta_target", goal))


def reward(observed_kbps: float, goal) -> int:
    """+1 when the realized bandwidth meets or exceeds the goal, else -1."""
    return 1 if observed_kbps >= goal_kbps(goal) else -1


def delta(observed_kbps: float, goal) -> int:
    """Satisfaction indicator: 1 when the goal is met, else 0."""
    return 1 if observed_kbps >= goal_kbps(goal) else 0


def deviation(observed_kbps: float, goal) -> float:
    return abs(goal_kbps(goal) - observed_kbps)
