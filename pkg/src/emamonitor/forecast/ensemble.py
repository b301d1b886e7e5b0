"""Random forests and gradient-boosted regression trees built on `fit_tree`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tree import RegressionTree, fit_tree

LOSSES = ("huber", "squared_error")


# -- losses ---------------------------------------------------------------


def squared_loss(residual: np.ndarray) -> np.ndarray:
    return 0.5 * np.asarray(residual, dtype=float) ** 2


def squared_negative_gradient(residual: np.ndarray) -> np.ndarray:
    return np.asarray(residual, dtype=float)


def huber_loss(residual: np.ndarray, delta: float) -> np.ndarray:
    r = np.abs(np.asarray(residual, dtype=float))
    return np.where(r <= delta, 0.5 * r**2, delta * (r - 0.5 * delta))


def huber_negative_gradient(residual: np.ndarray, delta: float) -> np.ndarray:
    """d/dF of the loss at prediction F, negated: r if |r| <= delta else delta*sign(r)."""
    r = np.asarray(residual, dtype=float)
    return np.where(np.abs(r) <= delta, r, delta * np.sign(r))


def huber_location(values: np.ndarray, delta: float) -> float:
    """Exact minimiser of sum(huber(values - g)) over g.

    The score sum(clip(values - g, -delta, delta)) is piecewise linear and
    non-increasing in g, so the root lies between two adjacent breakpoints.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return 0.0
    if delta <= 0:
        return float(np.median(v))
    bp = np.unique(np.concatenate([v - delta, v + delta]))
    score = np.clip(v[None, :] - bp[:, None], -delta, delta).sum(axis=1)
    zero = np.flatnonzero(score == 0.0)
    if zero.size:
        return float(0.5 * (bp[zero[0]] + bp[zero[-1]]))
    k = int(np.flatnonzero(score > 0)[-1])
    lo, hi = bp[k], bp[k + 1]
    s_lo, s_hi = score[k], score[k + 1]
    return float(lo + s_lo * (hi - lo) / (s_lo - s_hi))


# -- random forest --------------------------------------------------------


@dataclass
class TreeEnsemble:
    """Prediction = init + sum_k weight * tree_k(x), or the mean of trees when averaging."""

    trees: list[RegressionTree]
    init: float = 0.0
    learning_rate: float = 1.0
    average: bool = False
    train_loss: list[float] = field(default_factory=list)
    stage_deltas: list[float] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.trees:
            return np.full(X.shape[0], self.init)
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict(X)
        if self.average:
            return total / len(self.trees)
        return self.init + self.learning_rate * total

    def to_dict(self) -> dict:
        return {
            "init": self.init,
            "learning_rate": self.learning_rate,
            "average": self.average,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        return cls(
            trees=[RegressionTree.from_dict(t) for t in d["trees"]],
            init=float(d["init"]),
            learning_rate=float(d["learning_rate"]),
            average=bool(d["average"]),
        )


def fit_forest(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int = 10,
    max_depth: int | None = 5,
    min_split: int = 2,
    min_leaf: int = 1,
    bootstrap: bool = True,
    seed: int = 0,
) -> TreeEnsemble:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(seed)
    n = len(y)
    trees = []
    for _ in range(int(n_trees)):
        idx = rng.integers(0, n, n) if bootstrap else np.arange(n)
        trees.append(fit_tree(X[idx], y[idx], max_depth, min_split, min_leaf))
    return TreeEnsemble(trees, init=float(y.mean()) if n else 0.0, average=True)


# -- gradient boosting ----------------------------------------------------


class BoostingError(RuntimeError):
    pass


def fit_gbrt(
    X: np.ndarray,
    y: np.ndarray,
    loss: str = "huber",
    learning_rate: float = 0.1,
    n_stages: int = 100,
    max_depth: int | None = 3,
    min_leaf: int = 1,
    min_split: int = 2,
    huber_alpha: float = 0.9,
    seed: int = 0,
) -> TreeEnsemble:
    """Stagewise boosting of depth-bounded trees on negative loss gradients.

    For the Huber loss the transition ``delta`` is re-set every stage to the
    ``huber_alpha`` quantile of absolute residuals and each leaf takes the
    exact Huber location of its residuals. ``seed`` is accepted for interface
    symmetry; the fit itself uses no randomness.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    init = float(np.median(y)) if loss == "huber" else float(y.mean())
    F = np.full(len(y), init)
    trees: list[RegressionTree] = []
    losses: list[float] = []
    deltas: list[float] = []
    for stage in range(int(n_stages)):
        r = y - F
        if loss == "huber":
            delta = float(np.quantile(np.abs(r), huber_alpha))
            grad = huber_negative_gradient(r, delta)
        else:
            delta = 0.0
            grad = squared_negative_gradient(r)
        tree = fit_tree(X, grad, max_depth, min_split, min_leaf)
        leaves = tree.apply(X)
        if loss == "huber":
            for leaf in np.unique(leaves):
                tree.value[leaf] = huber_location(r[leaves == leaf], delta)
        F = F + learning_rate * tree.value[leaves]
        r = y - F
        current = huber_loss(r, delta) if loss == "huber" else squared_loss(r)
        value = float(current.mean())
        if not np.isfinite(value):
            raise BoostingError(f"non-finite training loss at stage {stage}")
        trees.append(tree)
        losses.append(value)
        deltas.append(delta)
    return TreeEnsemble(trees, init=init, learning_rate=learning_rate, train_loss=losses, stage_deltas=deltas)
