"""Hyper-parameter grids, forward cross-validation and rolling-origin evaluation."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from ..core import Block, DataError, build_lag_features
from .model import FAMILIES, fit_model, forecast

_PCT = [k / 100 for k in range(1, 100)]

# Full search space per family.
FULL_GRID: dict[str, dict[str, list]] = {
    "mean": {},
    "lasso": {"alpha": _PCT},
    "elastic_net": {
        "alpha": [0.00001, 0.0001, 0.001, 0.01, 0.1, 0.0, 0.5, 1.0, 10.0, 100.0],
        "l1_ratio": _PCT,
    },
    "random_forest": {
        "bootstrap": [True, False],
        "max_depth": [5, 10, 20, 50, 100],
        "n_trees": [5, 10, 50, 100, 500, 1000],
        "min_split": [1, 2, 5],
        "min_leaf": [1, 3, 5],
    },
    "gbrt": {
        "loss": ["huber", "squared_error"],
        "learning_rate": [0.001, 0.01, 0.05, 0.1, 0.2, 1.0],
        "n_stages": [5, 10, 50, 100, 500, 1000],
        "max_depth": [2, 3, 5, 10],
        "min_leaf": [1, 5, 10, 20],
        "min_split": [2, 5, 10, 20],
    },
}

# A desk-scale subset of FULL_GRID used by default in cohort runs.
COMPACT_GRID: dict[str, dict[str, list]] = {
    "mean": {},
    "lasso": {"alpha": [0.01, 0.1, 0.25, 0.5, 0.74, 0.99]},
    "elastic_net": {"alpha": [0.01, 0.1, 0.5, 1.0, 10.0], "l1_ratio": [0.14, 0.5, 0.9]},
    "random_forest": {
        "bootstrap": [True],
        "max_depth": [5, 10],
        "n_trees": [10, 50],
        "min_split": [2],
        "min_leaf": [1, 3, 5],
    },
    "gbrt": {
        "loss": ["huber", "squared_error"],
        "learning_rate": [0.01, 0.05, 0.1],
        "n_stages": [10, 50],
        "max_depth": [2, 3],
        "min_leaf": [5],
        "min_split": [5],
    },
}


@dataclass(frozen=True)
class HyperGrid:
    family: str
    params: Mapping[str, Sequence[Any]]

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        allowed = FULL_GRID[self.family]
        for name, values in self.params.items():
            if name not in allowed:
                raise ValueError(f"{self.family} has no hyper-parameter {name!r}")
            bad = [v for v in values if not any(_same(v, a) for a in allowed[name])]
            if bad:
                raise ValueError(f"{self.family}.{name} values outside the search space: {bad}")

    def points(self) -> list[dict[str, Any]]:
        names = sorted(self.params)
        combos = itertools.product(*(self.params[n] for n in names))
        return [dict(zip(names, c)) for c in combos]

    def __len__(self) -> int:
        return math.prod(len(v) for v in self.params.values())

    @classmethod
    def full(cls, family: str) -> "HyperGrid":
        return cls(family, FULL_GRID[family])

    @classmethod
    def compact(cls, family: str) -> "HyperGrid":
        return cls(family, COMPACT_GRID[family])


def _same(a: Any, b: Any) -> bool:
    if isinstance(a, (bool, str)) or isinstance(b, (bool, str)):
        return a == b and type(a) is type(b)
    return math.isclose(float(a), float(b), rel_tol=1e-12, abs_tol=1e-15)


def complexity_key(family: str, params: Mapping[str, Any]) -> tuple:
    """Smaller sorts first: fewer stages/trees, shallower trees, stronger regularisation."""
    if family in ("lasso", "elastic_net"):
        return (-float(params.get("alpha", 0.0)), -float(params.get("l1_ratio", 1.0)))
    if family == "random_forest":
        return (params.get("n_trees", 0), params.get("max_depth") or 10**9,
                -params.get("min_leaf", 1), -params.get("min_split", 2))
    if family == "gbrt":
        return (params.get("n_stages", 0), params.get("max_depth") or 10**9,
                params.get("learning_rate", 0.0), -params.get("min_leaf", 1), -params.get("min_split", 2),
                params.get("loss", ""))
    return ()


def mae(y: Sequence[float], y_hat: Sequence[float]) -> float:
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape or y.size == 0:
        raise ValueError("mae needs two non-empty arrays of equal shape")
    return float(np.mean(np.abs(y - y_hat)))


def bootstrap_ci(
    values: Sequence[float], n_resamples: int = 1000, level: float = 0.95, seed: int = 0
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return (float("nan"), float("nan"))
    mean = float(v.mean())
    if v.size < 2:
        return (mean, mean)
    rng = np.random.default_rng(seed)
    means = v[rng.integers(0, v.size, size=(n_resamples, v.size))].mean(axis=1)
    tail = 100 * (1 - level) / 2
    low, high = np.percentile(means, [tail, 100 - tail])
    return (min(float(low), mean), max(float(high), mean))


# -- forward cross-validation ---------------------------------------------


@dataclass(frozen=True)
class Fold:
    train_end: int  # block index; training targets are [n_lags, train_end)
    valid_end: int  # validation targets are [train_end, valid_end)
    train_max_t: float
    valid_min_t: float


def forward_folds(block: Block, k_folds: int = 5, min_train: int = 15) -> tuple[list[Fold], bool]:
    """Expanding-origin folds: fold j trains on the first min_train + j*s points.

    Returns the folds and whether the fold count had to be reduced.
    """
    n = len(block)
    k = k_folds
    reduced = False
    while k >= 2 and (n - min_train) // k < 1:
        k -= 1
        reduced = True
    if k < 2:
        raise DataError(f"block {block.block_id} too short for 2 forward folds ({n} points)")
    s = (n - min_train) // k
    t = block.times
    folds = []
    for j in range(k):
        a = min_train + j * s
        b = a + s
        folds.append(Fold(a, b, float(t[a - 1]), float(t[a])))
    return folds, reduced


@dataclass
class CVRow:
    params: dict[str, Any]
    fold_maes: list[float]
    mean_mae: float
    n_folds: int
    reduced_folds: bool


def _cv_point(block, family, params, folds, feature_set, n_lags, seed) -> list[float]:
    fm = build_lag_features(block, n_lags, feature_set)
    out = []
    for f in folds:
        tr = slice(0, f.train_end - n_lags)
        va = slice(f.train_end - n_lags, f.valid_end - n_lags)
        model = fit_model(fm.rows(tr), family, params, seed=seed)
        out.append(mae(fm.y[va], model.predict(fm.X[va])))
    return out


def grid_search(
    block: Block,
    grid: HyperGrid,
    k_folds: int = 5,
    *,
    feature_set: str = "all_emas",
    n_lags: int = 3,
    seed: int = 0,
    threads: int = 1,
) -> tuple[dict[str, Any], list[CVRow]]:
    """Exhaustive search scored by mean validation MAE over forward folds.

    ``block`` should be the chronological training side only. Exact MAE ties
    go to the smaller model (see `complexity_key`).
    """
    folds, reduced = forward_folds(block, k_folds)
    points = grid.points()

    def run(p):
        return _cv_point(block, grid.family, p, folds, feature_set, n_lags, seed)

    if threads > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, points))
    else:
        results = [run(p) for p in points]
    table = [CVRow(p, r, float(np.mean(r)), len(folds), reduced) for p, r in zip(points, results)]
    best = min(table, key=lambda row: (row.mean_mae, complexity_key(grid.family, row.params)))
    return dict(best.params), table


# -- rolling origin -------------------------------------------------------


@dataclass
class OriginResult:
    origin: int
    train_max_t: float
    test_min_t: float
    y_true: list[float]
    y_pred: list[float]
    mae: float


@dataclass
class EvalResult:
    fold_maes: list[float]
    mean_mae: float
    ci: tuple[float, float, float]  # (low, high, level)
    origins: list[OriginResult] = field(default_factory=list)


def rolling_origins(n: int, min_train: int = 12, horizon: int = 3) -> list[int]:
    return list(range(min_train, n - horizon + 1, horizon))


def rolling_origin_evaluate(
    block: Block,
    family: str,
    hyperparams: Mapping[str, Any] | None = None,
    H: int = 3,
    min_train: int = 12,
    *,
    feature_set: str = "all_emas",
    n_lags: int = 3,
    seed: int = 0,
    start: int | None = None,
) -> EvalResult:
    """Refit on points [0, o) and score the H-step forecast of [o, o+H) for each origin.

    ``start`` optionally skips origins below a point index (e.g. to score only
    the held-out 20%); the training set still begins at the block start.
    """
    n = len(block)
    if n < min_train + H:
        raise DataError(f"block {block.block_id} has {n} points; need {min_train + H}")
    y = block.scores
    t = block.times
    results = []
    for o in rolling_origins(n, min_train, H):
        if start is not None and o < start:
            continue
        history = block.head(o)
        model = fit_model(build_lag_features(history, n_lags, feature_set), family, hyperparams, seed=seed)
        pred = forecast(model, history, H)
        results.append(OriginResult(o, float(t[o - 1]), float(t[o]), y[o:o + H].tolist(), pred.tolist(),
                                    mae(y[o:o + H], pred)))
    maes = [r.mae for r in results]
    if not maes:
        raise DataError(f"block {block.block_id}: no evaluation origins")
    low, high = bootstrap_ci(maes, seed=seed)
    return EvalResult(maes, float(np.mean(maes)), (low, high, 0.95), results)
