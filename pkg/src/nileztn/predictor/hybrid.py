"""BiLSTM prediction corrected by a boosted residual ensemble, plus model files."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bilstm import (PARAM_NAMES, BiLSTMConfig, BiLSTMParams, bilstm_forward,
                     bilstm_forward_batch, bilstm_train, make_windows)
from .boosting import BoostConfig, RegressionTree, ResidualEnsemble, boost

MODEL_MAGIC = "NILEZTN-MODEL v1"


class ModelFormatError(ValueError):
    pass


def booster_features(windows_kbps: np.ndarray, raw_kbps: np.ndarray, cap_max: float) -> np.ndarray:
    """Normalized window values followed by the normalized raw BiLSTM prediction."""
    W = np.atleast_2d(np.asarray(windows_kbps, dtype=float))
    return np.column_stack([W / cap_max, np.asarray(raw_kbps, dtype=float) / cap_max])


@dataclass
class HybridPredictor:
    bilstm: BiLSTMParams
    booster: ResidualEnsemble
    staged_mse: list[float] = field(default_factory=list, compare=False)
    bilstm_losses: list[float] = field(default_factory=list, compare=False)

    @property
    def cap_max(self) -> float:
        return self.bilstm.cap_max

    @property
    def window(self) -> int:
        return self.bilstm.window

    def correction(self, window) -> float:
        raw = bilstm_forward(self.bilstm, window)
        x = booster_features(window, [raw], self.cap_max)[0]
        return self.booster.predict_one(x)

    def predict_unclamped(self, windows) -> np.ndarray:
        W = np.atleast_2d(np.asarray(windows, dtype=float))
        raw = bilstm_forward_batch(self.bilstm, W)
        return raw + self.booster.predict(booster_features(W, raw, self.cap_max))

    def __call__(self, window) -> float:
        return hybrid_predict(self, window)


def hybrid_predict(predictor: HybridPredictor, window) -> float:
    """Next-step bandwidth estimate in kbps, clamped to ``[0, cap_max]``."""
    raw = bilstm_forward(predictor.bilstm, window)
    if predictor.booster.trees:
        x = booster_features(window, [raw], predictor.cap_max)[0]
        raw += predictor.booster.predict_one(x)
    return min(max(raw, 0.0), predictor.cap_max)


def fit_residual_ensemble(X_kbps, y_kbps, bilstm: BiLSTMParams, config: BoostConfig):
    """Boost on ``y - bilstm(X)``; returns the ensemble and per-stage training MSE."""
    X = np.asarray(X_kbps, dtype=float)
    raw = bilstm_forward_batch(bilstm, X)
    return boost(booster_features(X, raw, bilstm.cap_max), raw, y_kbps, config)


def train_hybrid(series_kbps, cap_max: float, lstm: BiLSTMConfig = BiLSTMConfig(),
                 boosting: BoostConfig = BoostConfig()) -> HybridPredictor:
    X, y = make_windows(series_kbps, lstm.window)
    fit = bilstm_train(X, y, lstm, cap_max)
    ensemble, staged = fit_residual_ensemble(X, y, fit.params, boosting)
    return HybridPredictor(fit.params, ensemble, staged, fit.losses)


# --- model file -------------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def save_model(predictor: HybridPredictor, path) -> None:
    p = predictor.bilstm
    lines = [MODEL_MAGIC, "[normalization]", f"cap_max {p.cap_max!r}", f"window {p.window}",
             "[bilstm]", f"hidden {p.hidden}"]
    for name in PARAM_NAMES:
        arr = getattr(p, name)
        shape = arr.shape if arr.ndim == 2 else (1, arr.shape[0])
        lines.append(f"matrix {name} {shape[0]} {shape[1]}")
        lines.extend(_fmt(row) for row in arr.reshape(shape))
    lines += ["[booster]", f"shrinkage {predictor.booster.shrinkage!r}",
              f"trees {len(predictor.booster.trees)}"]
    for tree in predictor.booster.trees:
        lines.append(f"tree {len(tree)}")
        lines.extend(f"{f} {thr!r} {val!r}" for f, thr, val in tree.preorder())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> HybridPredictor:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: missing '{MODEL_MAGIC}' header")
    pos = 1

    def take(prefix):
        nonlocal pos
        if pos >= len(lines) or not lines[pos].startswith(prefix):
            found = lines[pos] if pos < len(lines) else "end of file"
            raise ModelFormatError(f"{path}: line {pos + 1}: expected '{prefix}', found '{found}'")
        parts = lines[pos].split()
        pos += 1
        return parts

    try:
        take("[normalization]")
        cap_max = float(take("cap_max")[1])
        window = int(take("window")[1])
        take("[bilstm]")
        hidden = int(take("hidden")[1])
        arrays = {}
        for name in PARAM_NAMES:
            _, got, rows, cols = take("matrix")
            if got != name:
                raise ModelFormatError(f"{path}: expected matrix {name}, found {got}")
            rows, cols = int(rows), int(cols)
            data = [[float(v) for v in lines[pos + r].split()] for r in range(rows)]
            pos += rows
            arr = np.array(data, dtype=float).reshape(rows, cols)
            arrays[name] = arr if name.startswith("W") else arr.reshape(-1)
        params = BiLSTMParams(**arrays, cap_max=cap_max, window=window)
        if params.hidden != hidden:
            raise ModelFormatError(f"{path}: hidden size {hidden} does not match matrices")
        take("[booster]")
        shrinkage = float(take("shrinkage")[1])
        n_trees = int(take("trees")[1])
        trees = []
        for _ in range(n_trees):
            n_nodes = int(take("tree")[1])
            nodes = [lines[pos + k].split() for k in range(n_nodes)]
            pos += n_nodes
            trees.append(RegressionTree.from_preorder(
                [(int(f), float(t), float(v)) for f, t, v in nodes]))
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: malformed model file ({exc})") from exc
    return HybridPredictor(params, ResidualEnsemble(trees, shrinkage))
