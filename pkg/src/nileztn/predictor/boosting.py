"""Gradient-boosted regression trees on squared-error residuals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LEAF = -1


@dataclass
class RegressionTree:
    """Binary tree stored in preorder.

    ``feature[k] == LEAF`` marks a leaf holding ``value[k]``; an internal node
    sends ``x[feature] <= threshold`` to the subtree starting at ``k + 1`` and the
    rest to ``right[k]``.
    """

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    right: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        out = np.empty(X.shape[0])
        self._fill(0, X, np.arange(X.shape[0]), out)
        return out

    def _fill(self, k, X, idx, out):
        if self.feature[k] == LEAF:
            out[idx] = self.value[k]
            return
        go_left = X[idx, self.feature[k]] <= self.threshold[k]
        self._fill(k + 1, X, idx[go_left], out)
        self._fill(self.right[k], X, idx[~go_left], out)

    def predict_one(self, x) -> float:
        k = 0
        while self.feature[k] != LEAF:
            k = k + 1 if x[self.feature[k]] <= self.threshold[k] else self.right[k]
        return self.value[k]

    def preorder(self) -> list[tuple[int, float, float]]:
        return list(zip(self.feature, self.threshold, self.value))

    @classmethod
    def from_preorder(cls, nodes) -> RegressionTree:
        tree = cls()
        pos = 0

        def build():
            nonlocal pos
            f, thr, val = nodes[pos]
            k = len(tree.feature)
            tree.feature.append(int(f))
            tree.threshold.append(float(thr))
            tree.value.append(float(val))
            tree.right.append(LEAF)
            pos += 1
            if int(f) != LEAF:
                build()
                tree.right[k] = len(tree.feature)
                build()

        build()
        if pos != len(nodes):
            raise ValueError("trailing nodes after a complete tree")
        return tree


def _best_split(X, r):
    """Exhaustive search for the split with the largest SSE reduction."""
    n = r.shape[0]
    total = r.sum()
    base = total * total / n
    best = (0.0, None, None)
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, rs = X[order, j], r[order]
        csum = np.cumsum(rs)[:-1]
        counts = np.arange(1, n)
        valid = xs[:-1] < xs[1:]
        if not valid.any():
            continue
        gain = csum ** 2 / counts + (total - csum) ** 2 / (n - counts) - base
        gain = np.where(valid, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[0] + 1e-12:
            best = (float(gain[k]), j, 0.5 * (xs[k] + xs[k + 1]))
    return best[1], best[2]


def fit_tree(X: np.ndarray, r: np.ndarray, max_depth: int) -> RegressionTree:
    tree = RegressionTree()

    def grow(idx, depth):
        k = len(tree.feature)
        tree.feature.append(LEAF)
        tree.threshold.append(0.0)
        tree.value.append(float(r[idx].mean()))
        tree.right.append(LEAF)
        if depth >= max_depth or idx.shape[0] < 2:
            return
        j, thr = _best_split(X[idx], r[idx])
        if j is None:
            return
        tree.feature[k] = j
        tree.threshold[k] = float(thr)
        left = X[idx, j] <= thr
        grow(idx[left], depth + 1)
        tree.right[k] = len(tree.feature)
        grow(idx[~left], depth + 1)

    grow(np.arange(X.shape[0]), 0)
    return tree


@dataclass
class ResidualEnsemble:
    trees: list[RegressionTree]
    shrinkage: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        out = np.zeros(X.shape[0])
        for tree in self.trees:
            out += self.shrinkage * tree.predict(X)
        return out

    def predict_one(self, x) -> float:
        return self.shrinkage * sum(t.predict_one(x) for t in self.trees)


@dataclass(frozen=True)
class BoostConfig:
    n_trees: int = 50
    shrinkage: float = 0.1
    max_depth: int = 3
    subsample: float = 1.0
    seed: int = 0


def boost(X: np.ndarray, base: np.ndarray, y: np.ndarray, config: BoostConfig):
    """Fit trees to the residuals of ``base`` predictions.

    Returns the ensemble and the training MSE after 0, 1, ..., M trees.
    With ``subsample < 1`` each tree sees a seeded random subset of rows.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    F = np.asarray(base, dtype=float).copy()
    staged = [float(np.mean((y - F) ** 2))]
    trees = []
    for _ in range(config.n_trees):
        if config.subsample < 1.0:
            size = max(1, int(round(config.subsample * X.shape[0])))
            rows = np.sort(rng.choice(X.shape[0], size=size, replace=False))
        else:
            rows = np.arange(X.shape[0])
        tree = fit_tree(X[rows], (y - F)[rows], config.max_depth)
        trees.append(tree)
        F += config.shrinkage * tree.predict(X)
        staged.append(float(np.mean((y - F) ** 2)))
    return ResidualEnsemble(trees, config.shrinkage), staged
