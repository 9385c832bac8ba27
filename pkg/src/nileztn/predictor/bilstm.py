"""Bidirectional LSTM regressor for next-step bandwidth, written against numpy.

Inputs are 1-d windows normalized by ``cap_max``. Each direction runs a single
LSTM layer; the forward direction's last hidden state and the backward
direction's last hidden state (the one produced at window position 0) are
concatenated and mapped through a linear head to a normalized prediction.

Gate layout inside every ``W`` (shape ``(1 + h, 4h)``) and ``b`` (shape ``(4h,)``)
is input, forget, output, candidate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PARAM_NAMES = ("W_fwd", "b_fwd", "W_bwd", "b_bwd", "w_out", "b_out")


class ShapeError(ValueError):
    pass


@dataclass
class BiLSTMParams:
    W_fwd: np.ndarray
    b_fwd: np.ndarray
    W_bwd: np.ndarray
    b_bwd: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray  # shape (1,)
    cap_max: float
    window: int

    @property
    def hidden(self) -> int:
        return self.b_fwd.shape[0] // 4

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> BiLSTMParams:
        return BiLSTMParams(**{k: v.copy() for k, v in self.arrays().items()},
                            cap_max=self.cap_max, window=self.window)

    @classmethod
    def init(cls, hidden: int, window: int, cap_max: float, seed: int = 0) -> BiLSTMParams:
        rng = np.random.default_rng(seed)
        s = 1.0 / np.sqrt(hidden)

        def gates():
            W = rng.uniform(-s, s, size=(1 + hidden, 4 * hidden))
            b = np.zeros(4 * hidden)
            b[hidden:2 * hidden] = 1.0  # forget-gate bias
            return W, b

        W_fwd, b_fwd = gates()
        W_bwd, b_bwd = gates()
        w_out = rng.uniform(-s, s, size=2 * hidden)
        return cls(W_fwd, b_fwd, W_bwd, b_bwd, w_out, np.zeros(1), float(cap_max), window)

    @classmethod
    def zeros(cls, hidden: int, window: int, cap_max: float) -> BiLSTMParams:
        return cls(np.zeros((1 + hidden, 4 * hidden)), np.zeros(4 * hidden),
                   np.zeros((1 + hidden, 4 * hidden)), np.zeros(4 * hidden),
                   np.zeros(2 * hidden), np.zeros(1), float(cap_max), window)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _run_direction(W, b, columns):
    """Run one LSTM over ``columns`` (list of (B,) arrays, in processing order)."""
    batch = columns[0].shape[0]
    h = b.shape[0] // 4
    h_prev = np.zeros((batch, h))
    c_prev = np.zeros((batch, h))
    cache = []
    for x in columns:
        z = np.concatenate([x[:, None], h_prev], axis=1)
        a = z @ W + b
        i = _sigmoid(a[:, :h])
        f = _sigmoid(a[:, h:2 * h])
        o = _sigmoid(a[:, 2 * h:3 * h])
        g = np.tanh(a[:, 3 * h:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        cache.append((z, i, f, o, g, c_prev, tc))
        h_prev, c_prev = o * tc, c
    return h_prev, cache


def _backprop_direction(W, cache, dh_last):
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[1])
    dh = dh_last
    dc = np.zeros_like(dh_last)
    for z, i, f, o, g, c_prev, tc in reversed(cache):
        do = dh * tc
        dct = dc + dh * o * (1.0 - tc * tc)
        da = np.concatenate([
            dct * g * i * (1.0 - i),
            dct * c_prev * f * (1.0 - f),
            do * o * (1.0 - o),
            dct * i * (1.0 - g * g),
        ], axis=1)
        dc = dct * f
        dW += z.T @ da
        db += da.sum(axis=0)
        dh = (da @ W.T)[:, 1:]
    return dW, db


def forward_normalized(params: BiLSTMParams, X: np.ndarray):
    """Batch forward on normalized windows ``X`` of shape (B, n); returns (y, cache)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.window:
        raise ShapeError(f"expected windows of length {params.window}, got shape {X.shape}")
    cols = [X[:, t] for t in range(X.shape[1])]
    h_f, cache_f = _run_direction(params.W_fwd, params.b_fwd, cols)
    h_b, cache_b = _run_direction(params.W_bwd, params.b_bwd, cols[::-1])
    H = np.concatenate([h_f, h_b], axis=1)
    y = H @ params.w_out + params.b_out[0]
    return y, (H, cache_f, cache_b)


def backward_normalized(params: BiLSTMParams, cache, dy: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given ``dy = dL/dy`` for every window."""
    H, cache_f, cache_b = cache
    h = params.hidden
    dH = dy[:, None] * params.w_out[None, :]
    dW_f, db_f = _backprop_direction(params.W_fwd, cache_f, dH[:, :h])
    dW_b, db_b = _backprop_direction(params.W_bwd, cache_b, dH[:, h:])
    return {
        "W_fwd": dW_f, "b_fwd": db_f, "W_bwd": dW_b, "b_bwd": db_b,
        "w_out": H.T @ dy, "b_out": np.array([dy.sum()]),
    }


def mse_loss_and_grads(params: BiLSTMParams, X: np.ndarray, y: np.ndarray):
    """Mean squared error on normalized data, with full BPTT gradients."""
    pred, cache = forward_normalized(params, X)
    err = pred - y
    loss = float(np.mean(err * err))
    grads = backward_normalized(params, cache, 2.0 * err / err.shape[0])
    return loss, grads


def bilstm_forward(params: BiLSTMParams, window) -> float:
    """Predicted next-step bandwidth in kbps for a single window of kbps values."""
    w = np.asarray(window, dtype=float).reshape(1, -1) / params.cap_max
    y, _ = forward_normalized(params, w)
    return float(y[0] * params.cap_max)


def bilstm_forward_batch(params: BiLSTMParams, windows) -> np.ndarray:
    y, _ = forward_normalized(params, np.asarray(windows, dtype=float) / params.cap_max)
    return y * params.cap_max


@dataclass(frozen=True)
class BiLSTMConfig:
    window: int = 10
    hidden: int = 16
    epochs: int = 200
    learning_rate: float = 0.01
    clip_norm: float = 1.0
    seed: int = 0


@dataclass
class TrainResult:
    params: BiLSTMParams
    losses: list[float] = field(default_factory=list)


def bilstm_train(X_kbps, y_kbps, config: BiLSTMConfig, cap_max: float) -> TrainResult:
    """Full-batch training with Adam on the MSE of normalized targets.

    Gradients are clipped to a global norm of ``config.clip_norm`` before each update.
    ``losses[k]`` is the loss evaluated before the k-th update.
    """
    X = np.asarray(X_kbps, dtype=float)
    y = np.asarray(y_kbps, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if X.ndim != 2 or X.shape[1] != config.window or y.shape != (X.shape[0],):
        raise ShapeError(f"bad training shapes {X.shape}, {y.shape}")
    Xn, yn = X / cap_max, y / cap_max
    params = BiLSTMParams.init(config.hidden, config.window, cap_max, config.seed)
    names = PARAM_NAMES
    m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    v = {k: np.zeros_like(a) for k, a in params.arrays().items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    losses = []
    for epoch in range(1, config.epochs + 1):
        loss, grads = mse_loss_and_grads(params, Xn, yn)
        losses.append(loss)
        norm = np.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in names))
        scale = config.clip_norm / norm if norm > config.clip_norm else 1.0
        for k in names:
            g = grads[k] * scale
            m[k] = beta1 * m[k] + (1 - beta1) * g
            v[k] = beta2 * v[k] + (1 - beta2) * g * g
            m_hat = m[k] / (1 - beta1 ** epoch)
            v_hat = v[k] / (1 - beta2 ** epoch)
            getattr(params, k)[...] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    losses.append(mse_loss_and_grads(params, Xn, yn)[0])
    return TrainResult(params, losses)


def make_windows(series, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Sliding windows ``series[t-n:t]`` with targets ``series[t]``."""
    s = np.asarray(series, dtype=float)
    if len(s) <= n:
        raise ValueError(f"series of length {len(s)} too short for window {n}")
    X = np.lib.stride_tricks.sliding_window_view(s[:-1], n).copy()
    return X, s[n:].copy()
