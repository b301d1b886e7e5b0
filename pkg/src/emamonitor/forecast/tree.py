"""CART regression tree with exhaustive variance-reduction split search."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF = -1


@dataclass
class RegressionTree:
    """Flat-array binary tree; node 0 is the root and ``feature == LEAF`` marks leaves."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.feature[node] != LEAF:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max()) if self.n_nodes else 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            active = feat != LEAF
            if not active.any():
                return node
            r = rows[active]
            n = node[active]
            go_left = X[r, feat[active]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
        )


def best_split(
    X: np.ndarray, y: np.ndarray, min_leaf: int
) -> tuple[int, float, float] | None:
    """Exhaustive search over midpoints of sorted unique values of every feature.

    Returns ``(feature, threshold, sse_reduction)`` or None when no admissible
    split reduces the squared error. Ties go to the lowest feature index,
    then the lowest threshold.
    """
    m, d = X.shape
    if m < 2 * min_leaf or d == 0:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ys = y[order]
    csum = np.cumsum(ys, axis=0)[:-1]
    total = float(y.sum())
    n_left = np.arange(1, m, dtype=float)[:, None]
    n_right = m - n_left
    # SSE = sum(y^2) - [S_l^2/n_l + S_r^2/n_r]; maximise the bracket.
    score = csum**2 / n_left + (total - csum) ** 2 / n_right
    valid = xs[1:] > xs[:-1]
    valid &= (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    flat = score.T.ravel()
    k = int(np.argmax(flat))
    feat, pos = divmod(k, m - 1)
    gain = flat[k] - total**2 / m
    if not gain > 1e-12 * max(1.0, float(np.dot(y, y))):
        return None
    threshold = 0.5 * (xs[pos, feat] + xs[pos + 1, feat])
    return feat, float(threshold), float(gain)


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    max_depth: int | None = None,
    min_split: int = 2,
    min_leaf: int = 1,
) -> RegressionTree:
    """Grow a regression tree depth-first; leaf values are target means."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    min_split = max(int(min_split), 2)
    min_leaf = max(int(min_leaf), 1)
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node(val: float) -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(val)
        return len(feature) - 1

    root = new_node(float(y.mean()) if len(y) else 0.0)
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if len(idx) < min_split or (max_depth is not None and depth >= max_depth):
            continue
        yn = y[idx]
        if np.ptp(yn) == 0:
            continue
        split = best_split(X[idx], yn, min_leaf)
        if split is None:
            continue
        feat, thr, _ = split
        mask = X[idx, feat] <= thr
        li, ri = idx[mask], idx[~mask]
        lnode = new_node(float(y[li].mean()))
        rnode = new_node(float(y[ri].mean()))
        feature[node] = feat
        threshold[node] = thr
        left[node] = lnode
        right[node] = rnode
        # push right first so the left subtree is numbered first
        stack.append((rnode, ri, depth + 1))
        stack.append((lnode, li, depth + 1))

    return RegressionTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=float),
    )
