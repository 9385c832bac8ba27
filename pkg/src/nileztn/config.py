"""Flat ``key = value`` run configuration.

One assignment per line; lines starting with ``#`` are comments. Absent keys
take the defaults below; unknown keys and out-of-range values are rejected
with the offending line number.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

from .agent import AgentConfig
from .netsim import DEFAULT_CAP_BOUNDS, DEFAULT_RATES_KBPS, LinkConfig, make_actions
from .predictor import BiLSTMConfig, BoostConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    # seeds
    trace_seed: int = 0
    train_seed: int = 0
    eval_seed: int = 0
    # simulator
    trace_length: int = 300
    cap_min: float = DEFAULT_CAP_BOUNDS[0]
    cap_max: float = DEFAULT_CAP_BOUNDS[1]
    hold: int = 5
    efficiency: float = 0.97
    noise_kbps: float = 5.0
    actions: tuple[float, ...] = tuple(float(r) for r in DEFAULT_RATES_KBPS)
    # predictor
    window: int = 10
    hidden: int = 16
    epochs: int = 200
    learning_rate: float = 0.01
    clip_norm: float = 1.0
    n_trees: int = 50
    shrinkage: float = 0.1
    max_depth: int = 3
    # agent
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon: float = 1.0
    epsilon_decay: float = 0.99
    epsilon_min: float = 0.05
    episodes: int = 400
    train_episode_length: int = 30
    bin_width: float = 50.0
    suboptimal_fraction: float = 0.1
    # goals come from the intents unless overridden
    id_intent: str = "I need at most 300 kbps from cn to ue1"
    ood_intent: str = "Limit streaming to 450 kbps"
    corpus: str = ""
    goal_id_kbps: float | None = None
    goal_ood_kbps: float | None = None
    # evaluation
    eval_length: int = 148
    mc_episodes: int = 30
    mc_length: int = 20
    mc_constrained: bool = True
    out_dir: str = "out"

    def __post_init__(self):
        for f in fields(self):
            check = _RANGES.get(f.name)
            if check is not None:
                ok, what = check
                if not ok(getattr(self, f.name)):
                    raise ConfigError(f"{f.name} must be {what}, got {getattr(self, f.name)!r}",
                                      key=f.name)
        if self.cap_min > self.cap_max:
            raise ConfigError("cap_min must not exceed cap_max", key="cap_min")
        if not self.id_intent.strip() or not self.ood_intent.strip():
            raise ConfigError("intents must be non-empty", key="id_intent")

    # --- derived component configs ---------------------------------------------

    def link(self) -> LinkConfig:
        return LinkConfig(self.efficiency, self.noise_kbps, self.window)

    def action_set(self):
        return make_actions(self.actions)

    def lstm(self) -> BiLSTMConfig:
        return BiLSTMConfig(self.window, self.hidden, self.epochs, self.learning_rate,
                            self.clip_norm, self.train_seed)

    def boosting(self) -> BoostConfig:
        return BoostConfig(self.n_trees, self.shrinkage, self.max_depth, 1.0, self.train_seed)

    def agent(self) -> AgentConfig:
        return AgentConfig(self.episodes, self.alpha, self.gamma, self.epsilon,
                           self.epsilon_decay, self.epsilon_min, self.bin_width, self.train_seed)

    def with_seed(self, seed: int) -> RunConfig:
        return replace(self, trace_seed=seed, train_seed=seed, eval_seed=seed)

    def snapshot(self) -> dict:
        d = asdict(self)
        d["actions"] = list(self.actions)
        return d


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)


_RANGES = {
    "trace_length": (lambda v: v >= 2, ">= 2"),
    "cap_min": (lambda v: _finite(v) and v >= 0, "finite and >= 0"),
    "cap_max": (lambda v: _finite(v) and v > 0, "finite and > 0"),
    "hold": (lambda v: v >= 1, ">= 1"),
    "efficiency": (lambda v: 0 < v <= 1, "in (0, 1]"),
    "noise_kbps": (lambda v: _finite(v) and v >= 0, ">= 0"),
    "actions": (lambda v: len(v) >= 1 and all(_finite(r) and r > 0 for r in v),
                "a non-empty list of positive rates"),
    "window": (lambda v: v >= 1, ">= 1"),
    "hidden": (lambda v: v >= 1, ">= 1"),
    "epochs": (lambda v: v >= 0, ">= 0"),
    "learning_rate": (lambda v: _finite(v) and v > 0, "> 0"),
    "clip_norm": (lambda v: _finite(v) and v > 0, "> 0"),
    "n_trees": (lambda v: v >= 0, ">= 0"),
    "shrinkage": (lambda v: 0 < v <= 1, "in (0, 1]"),
    "max_depth": (lambda v: v >= 0, ">= 0"),
    "alpha": (lambda v: 0 < v <= 1, "in (0, 1]"),
    "gamma": (lambda v: 0 <= v < 1, "in [0, 1)"),
    "epsilon": (lambda v: 0 <= v <= 1, "in [0, 1]"),
    "epsilon_decay": (lambda v: 0 < v <= 1, "in (0, 1]"),
    "epsilon_min": (lambda v: 0 <= v <= 1, "in [0, 1]"),
    "episodes": (lambda v: v >= 1, ">= 1"),
    "train_episode_length": (lambda v: v >= 1, ">= 1"),
    "bin_width": (lambda v: _finite(v) and v > 0, "> 0"),
    "suboptimal_fraction": (lambda v: 0 < v < 1, "in (0, 1)"),
    "goal_id_kbps": (lambda v: v is None or (_finite(v) and v > 0), "> 0"),
    "goal_ood_kbps": (lambda v: v is None or (_finite(v) and v > 0), "> 0"),
    "eval_length": (lambda v: v >= 1, ">= 1"),
    "mc_episodes": (lambda v: v >= 2, ">= 2"),
    "mc_length": (lambda v: v >= 1, ">= 1"),
    "trace_seed": (lambda v: v >= 0, ">= 0"),
    "train_seed": (lambda v: v >= 0, ">= 0"),
    "eval_seed": (lambda v: v >= 0, ">= 0"),
}

_FIELDS = {f.name: f for f in fields(RunConfig)}
_OPTIONAL_FLOAT = {"goal_id_kbps", "goal_ood_kbps"}


def _parse_value(key: str, raw: str):
    kind = _FIELDS[key].type
    if key == "actions":
        return tuple(float(x) for x in raw.split(",") if x.strip())
    if key in _OPTIONAL_FLOAT:
        return None if raw == "" else float(raw)
    if kind == "bool":
        if raw.lower() not in ("true", "false"):
            raise ValueError(raw)
        return raw.lower() == "true"
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def _format_value(key: str, value) -> str:
    if key == "actions":
        return ", ".join(_num(r) for r in value)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return _num(value)
    return str(value)


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


def parse_config(text: str) -> RunConfig:
    values, lines = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError(f"expected 'key = value', found {s!r}", lineno)
        key, raw = (p.strip() for p in s.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", lineno, key)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", lineno, key)
        try:
            values[key] = _parse_value(key, raw)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}", lineno, key) from None
        lines[key] = lineno
    try:
        return RunConfig(**values)
    except ConfigError as exc:
        if exc.key in lines:
            raise ConfigError(exc.args[0], lines[exc.key], exc.key) from None
        raise


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format_value(f.name, getattr(cfg, f.name))}\n"
                   for f in fields(cfg))


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))


DEFAULT_CONFIG = RunConfig()
__all__ = ["ConfigError", "RunConfig", "DEFAULT_CONFIG", "parse_config", "load_config",
           "format_config", "save_config"]
