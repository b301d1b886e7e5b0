"""Counterfactual explanations for alerted forecasts.

A counterfactual is an input ``x_cf`` inside the plausible/feasible box whose
clipped model prediction falls in a desired range, found by random
sampling, nearest valid historical instances, or a genetic search.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .changepoint import ChangePoint
from .core import MAX_SCORE, Block, DataError, FeatureMatrix, build_lag_features
from .forecast import FittedModel, forecast_inputs

METHODS = ("genetic", "kdtree", "random")


@dataclass(frozen=True)
class CfQuery:
    """x, the model f, the desired output interval and the box P ∩ F(x).

    ``lower``/``upper``/``integer`` describe plausibility (domain) bounds;
    ``feasible_lower``/``feasible_upper`` optionally tighten them per
    instance. ``ranges`` scale the distance and default to the domain width.
    """

    x: np.ndarray
    model: FittedModel
    desired: tuple[float, float]
    lower: np.ndarray
    upper: np.ndarray
    integer: np.ndarray
    k: int = 5
    feasible_lower: np.ndarray | None = None
    feasible_upper: np.ndarray | None = None
    ranges: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        for name in ("lower", "upper"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "integer", np.asarray(self.integer, dtype=bool))
        if self.ranges is None:
            object.__setattr__(self, "ranges", self.upper - self.lower)
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(self.model.feature_names))
        lo, hi = self.desired
        if not lo <= hi:
            raise ValueError(f"empty desired range {self.desired}")
        if not (len(x) == len(self.lower) == len(self.upper) == len(self.integer)):
            raise ValueError("query vectors have inconsistent dimensions")
        blo, bhi = self.box
        if np.any(x < blo - 1e-9) or np.any(x > bhi + 1e-9):
            raise ValueError("query instance lies outside its plausible/feasible box")

    @property
    def d(self) -> int:
        return len(self.x)

    @property
    def box(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.lower, self.upper
        if self.feasible_lower is not None:
            lo = np.maximum(lo, self.feasible_lower)
        if self.feasible_upper is not None:
            hi = np.minimum(hi, self.feasible_upper)
        return lo, hi

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.clip(self.model.predict(np.atleast_2d(X)), 0.0, MAX_SCORE)

    def is_valid(self, preds: np.ndarray) -> np.ndarray:
        lo, hi = self.desired
        return (preds >= lo) & (preds <= hi)

    def hinge(self, preds: np.ndarray) -> np.ndarray:
        lo, hi = self.desired
        return np.maximum(lo - preds, 0.0) + np.maximum(preds - hi, 0.0)


@dataclass(frozen=True)
class FeatureDelta:
    name: str
    before: float
    after: float
    change: float


@dataclass(frozen=True)
class Counterfactual:
    x_cf: np.ndarray
    predicted: float
    deltas: tuple[FeatureDelta, ...]

    @property
    def changed(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.deltas)


@dataclass(frozen=True)
class CfMetrics:
    validity: float
    redundancy: float
    sparsity: float
    proximity: float
    diversity: float


@dataclass
class CfResult:
    method: str
    counterfactuals: list[Counterfactual]
    shortfall: bool = False
    requested: int = 0


# -- distance and change detection ---------------------------------------


def distance(x, x_cf, feature_ranges) -> float:
    """Mean over features of |x_i - x_cf,i| / range_i.

    A zero-range feature contributes 0 when unchanged and 1 otherwise.
    """
    return float(distances(np.asarray(x_cf, dtype=float)[None, :], x, feature_ranges)[0])


def distances(rows: np.ndarray, x, feature_ranges) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    x = np.asarray(x, dtype=float)
    r = np.asarray(feature_ranges, dtype=float)
    diff = np.abs(rows - x[None, :])
    zero = r <= 0
    safe = np.where(zero, 1.0, r)
    per = np.where(zero[None, :], (diff > 0).astype(float), diff / safe[None, :])
    return per.sum(axis=1) / rows.shape[1]


def changed_mask(x, x_cf, integer) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    x_cf = np.asarray(x_cf, dtype=float)
    integer = np.asarray(integer, dtype=bool)
    diff = np.abs(x_cf - x)
    return np.where(integer, np.rint(x_cf) != np.rint(x), diff > 1e-9)


def make_counterfactual(q: CfQuery, x_cf: np.ndarray, predicted: float) -> Counterfactual:
    mask = changed_mask(q.x, x_cf, q.integer)
    deltas = tuple(
        FeatureDelta(q.feature_names[i], float(q.x[i]), float(x_cf[i]), float(x_cf[i] - q.x[i]))
        for i in np.flatnonzero(mask)
    )
    return Counterfactual(np.asarray(x_cf, dtype=float), float(predicted), deltas)


# -- metrics ---------------------------------------------------------------


def _jaccard(a: set, b: set) -> float:
    union = a | b
    return 1.0 if not union else len(a & b) / len(union)


def score_set(x, cfs: Sequence[Counterfactual], q: CfQuery) -> CfMetrics:
    """Validity, redundancy, sparsity, proximity and diversity of a counterfactual set.

    Validity re-predicts every ``x_cf`` rather than trusting stored values.
    """
    if not cfs:
        raise ValueError("score_set needs at least one counterfactual")
    X = np.stack([c.x_cf for c in cfs])
    validity = float(q.is_valid(q.predict(X)).mean())
    proximity = float(distances(X, x, q.ranges).mean())
    masks = [changed_mask(x, row, q.integer) for row in X]
    sparsity = float(np.mean([m.mean() for m in masks]))
    if len(cfs) < 2:
        return CfMetrics(validity, 0.0, sparsity, proximity, 0.0)
    sets = [set(np.flatnonzero(m).tolist()) for m in masks]
    pairs = list(itertools.combinations(range(len(cfs)), 2))
    diversity = float(np.mean([distances(X[a][None, :], X[b], q.ranges)[0] for a, b in pairs]))
    redundancy = float(np.mean([_jaccard(sets[a], sets[b]) for a, b in pairs]))
    return CfMetrics(validity, redundancy, sparsity, proximity, diversity)


# -- random ----------------------------------------------------------------


def _uniform(q: CfQuery, rng: np.random.Generator, n: int) -> np.ndarray:
    lo, hi = q.box
    out = rng.uniform(lo, hi, size=(n, q.d))
    ints = q.integer
    if ints.any():
        ilo = np.ceil(lo[ints] - 1e-9)
        ihi = np.floor(hi[ints] + 1e-9)
        out[:, ints] = rng.integers(ilo.astype(int), ihi.astype(int) + 1, size=(n, int(ints.sum())))
    return out


def generate_random(q: CfQuery, seed: int = 0, budget: int = 10_000) -> CfResult:
    """Uniform samples in the box; the ``k`` closest valid ones are kept."""
    if budget < q.k:
        raise ValueError("budget must be at least k")
    rng = np.random.default_rng(seed)
    X = _uniform(q, rng, budget)
    preds = q.predict(X)
    valid = np.flatnonzero(q.is_valid(preds))
    d = distances(X[valid], q.x, q.ranges)
    order = valid[np.lexsort((valid, d))][: q.k]
    cfs = [make_counterfactual(q, X[i], preds[i]) for i in order]
    return CfResult("random", cfs, shortfall=len(cfs) < q.k, requested=q.k)


# -- nearest valid instances ----------------------------------------------


class KDTree:
    """Exact k-nearest-neighbour search under the range-normalised L1 distance.

    Ties are broken by the reference row index, so results match a sorted
    linear scan exactly.
    """

    def __init__(self, points: np.ndarray, ranges: np.ndarray, leaf_size: int = 8):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.ranges = np.asarray(ranges, dtype=float)
        self.leaf_size = leaf_size
        n, d = self.points.shape
        self._nodes: list[tuple] = []
        self._root = self._build(np.arange(n)) if n else None

    def _build(self, idx: np.ndarray) -> int:
        pts = self.points[idx]
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        node_id = len(self._nodes)
        self._nodes.append(None)  # placeholder
        spread = hi - lo
        if len(idx) <= self.leaf_size or not np.any(spread > 0):
            self._nodes[node_id] = ("leaf", lo, hi, idx)
            return node_id
        dim = int(np.argmax(spread))
        order = idx[np.argsort(self.points[idx, dim], kind="stable")]
        mid = len(order) // 2
        left = self._build(order[:mid])
        right = self._build(order[mid:])
        self._nodes[node_id] = ("inner", lo, hi, (left, right))
        return node_id

    def _box_bound(self, x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
        gap = np.maximum(np.maximum(lo - x, x - hi), 0.0)
        zero = self.ranges <= 0
        safe = np.where(zero, 1.0, self.ranges)
        per = np.where(zero, (gap > 0).astype(float), gap / safe)
        return float(per.sum() / len(x))

    def query(self, x, k: int) -> list[tuple[float, int]]:
        """Sorted ``(distance, row index)`` of the k nearest rows."""
        x = np.asarray(x, dtype=float)
        if self._root is None or k <= 0:
            return []
        heap: list[tuple[float, int]] = []  # max-heap via negation

        def kth() -> float:
            return -heap[0][0] if len(heap) == k else np.inf

        def visit(node_id: int) -> None:
            kind, lo, hi, payload = self._nodes[node_id]
            if self._box_bound(x, lo, hi) > kth() + 1e-12:
                return
            if kind == "leaf":
                d = distances(self.points[payload], x, self.ranges)
                for dist, i in zip(d, payload):
                    item = (-float(dist), -int(i))
                    if len(heap) < k:
                        heapq.heappush(heap, item)
                    elif item > heap[0]:
                        heapq.heapreplace(heap, item)
                return
            left, right = payload
            bl = self._box_bound(x, *self._nodes[left][1:3])
            br = self._box_bound(x, *self._nodes[right][1:3])
            first, second = (left, right) if bl <= br else (right, left)
            visit(first)
            visit(second)

        visit(self._root)
        return sorted((-nd, -ni) for nd, ni in heap)


def nearest_linear(points: np.ndarray, x, ranges, k: int) -> list[tuple[float, int]]:
    """Brute-force counterpart of `KDTree.query`."""
    d = distances(points, x, ranges)
    idx = np.arange(len(d))
    order = np.lexsort((idx, d))[:k]
    return [(float(d[i]), int(i)) for i in order]


def generate_kdtree(q: CfQuery, reference: FeatureMatrix | np.ndarray, seed: int = 0,
                    use_index: bool = True) -> CfResult:
    """The k nearest reference instances whose prediction lies in the desired range."""
    R = reference.X if isinstance(reference, FeatureMatrix) else np.atleast_2d(np.asarray(reference, dtype=float))
    if R.size == 0:
        raise ValueError("reference set is empty")
    preds = q.predict(R)
    lo, hi = q.box
    inside = np.all((R >= lo - 1e-9) & (R <= hi + 1e-9), axis=1)
    valid = np.flatnonzero(q.is_valid(preds) & inside)
    if valid.size == 0:
        return CfResult("kdtree", [], shortfall=True, requested=q.k)
    if use_index:
        hits = KDTree(R[valid], q.ranges).query(q.x, q.k)
    else:
        hits = nearest_linear(R[valid], q.x, q.ranges, q.k)
    cfs = [make_counterfactual(q, R[valid[i]], preds[valid[i]]) for _, i in hits]
    return CfResult("kdtree", cfs, shortfall=len(cfs) < q.k, requested=q.k)


# -- genetic ----------------------------------------------------------------


@dataclass(frozen=True)
class GeneticConfig:
    population: int = 50
    generations: int = 100
    crossover: float = 0.8
    mutation: float = 0.2
    proximity_weight: float = 0.5
    diversity_weight: float = 1.0
    sparsity_weight: float = 0.1
    tournament: int = 3
    elite: int = 2
    sigma: float = 0.1  # Gaussian mutation scale as a fraction of the range
    shortlist: int = 100


def _mutate(child: np.ndarray, q: CfQuery, rng: np.random.Generator, sigma: float) -> None:
    j = int(rng.integers(0, q.d))
    lo, hi = q.box
    if rng.random() < 0.5:
        child[j] = q.x[j]
    elif q.integer[j]:
        child[j] = float(rng.integers(int(np.ceil(lo[j] - 1e-9)), int(np.floor(hi[j] + 1e-9)) + 1))
    else:
        width = hi[j] - lo[j]
        child[j] = float(np.clip(child[j] + rng.normal(0.0, sigma * max(width, 1e-12)), lo[j], hi[j]))


def generate_genetic(
    q: CfQuery,
    seed: int = 0,
    population: int = 50,
    generations: int = 100,
    crossover: float = 0.8,
    mutation: float = 0.2,
    config: GeneticConfig | None = None,
) -> CfResult:
    """Evolve candidates in the box, then pick a diverse set of k.

    Individual fitness is hinge(f(x_cf), desired) + w_p * distance + w_s *
    fraction changed. The returned set is chosen greedily from the best
    distinct individuals seen, each pick minimising fitness minus w_d times
    its mean distance to the picks so far.
    """
    cfg = config or GeneticConfig(population=population, generations=generations,
                                  crossover=crossover, mutation=mutation)
    if cfg.population < 2 or cfg.generations < 0:
        raise ValueError("population must be >= 2 and generations >= 0")
    rng = np.random.default_rng(seed)
    lo, hi = q.box
    x = np.clip(q.x, lo, hi)
    d = q.d

    def fitness(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        preds = q.predict(P)
        changed = np.array([changed_mask(x, row, q.integer).mean() for row in P])
        fit = q.hinge(preds) + cfg.proximity_weight * distances(P, x, q.ranges) + cfg.sparsity_weight * changed
        return fit, preds

    pop = np.tile(x, (cfg.population, 1))
    uni = _uniform(q, rng, cfg.population)
    for i in range(1, cfg.population):
        m = int(rng.integers(1, max(2, d // 4 + 1)))
        cols = rng.choice(d, size=min(m, d), replace=False)
        pop[i, cols] = uni[i, cols]

    archive: dict[bytes, tuple[float, int, np.ndarray, float]] = {}
    counter = itertools.count()

    def remember(P, fit, preds):
        for row, f, p in zip(P, fit, preds):
            key = row.tobytes()
            if key not in archive:
                archive[key] = (float(f), next(counter), row.copy(), float(p))

    fit, preds = fitness(pop)
    remember(pop, fit, preds)
    for _ in range(cfg.generations):
        order = np.argsort(fit, kind="stable")
        nxt = [pop[i].copy() for i in order[: cfg.elite]]
        while len(nxt) < cfg.population:
            parents = []
            for _ in range(2):
                cand = rng.integers(0, cfg.population, cfg.tournament)
                parents.append(pop[cand[np.argmin(fit[cand])]])
            child = parents[0].copy()
            if rng.random() < cfg.crossover:
                take = rng.random(d) < 0.5
                child[take] = parents[1][take]
            if rng.random() < cfg.mutation:
                _mutate(child, q, rng, cfg.sigma)
            nxt.append(child)
        pop = np.stack(nxt)
        fit, preds = fitness(pop)
        remember(pop, fit, preds)

    ranked = sorted(archive.values(), key=lambda e: (e[0], e[1]))[: max(cfg.shortlist, q.k)]
    chosen: list[tuple[float, int, np.ndarray, float]] = [ranked[0]]
    rest = ranked[1:]
    while len(chosen) < q.k and rest:
        sel = np.stack([c[2] for c in chosen])
        scores = [
            e[0] - cfg.diversity_weight * float(distances(sel, e[2], q.ranges).mean())
            for e in rest
        ]
        j = int(np.argmin(scores))
        chosen.append(rest.pop(j))
    cfs = [make_counterfactual(q, row, p) for _, _, row, p in chosen]
    return CfResult("genetic", cfs, shortfall=len(cfs) < q.k, requested=q.k)


def generate(method: str, q: CfQuery, seed: int = 0, reference: FeatureMatrix | None = None,
             genetic: GeneticConfig | None = None, budget: int = 10_000) -> CfResult:
    if method == "random":
        return generate_random(q, seed, budget)
    if method == "kdtree":
        if reference is None:
            raise ValueError("kdtree method needs a reference feature matrix")
        return generate_kdtree(q, reference, seed)
    if method == "genetic":
        return generate_genetic(q, seed, config=genetic)
    raise ValueError(f"unknown counterfactual method {method!r}; choose from {METHODS}")


# -- alert explanations ----------------------------------------------------


@dataclass
class ExplanationReport:
    block_id: str
    alert_index: int
    step_index: int
    method: str
    k: int
    desired_range: tuple[float, float]
    original_prediction: float
    metrics: CfMetrics | None
    counterfactuals: list[Counterfactual]
    shortfall: bool
    feature_names: tuple[str, ...] = field(default=(), repr=False)

    @property
    def changed_features(self) -> list[str]:
        seen: dict[str, None] = {}
        for cf in self.counterfactuals:
            for name in cf.changed:
                seen.setdefault(name, None)
        return list(seen)

    def to_dict(self) -> dict[str, Any]:
        m = self.metrics
        return {
            "block_id": self.block_id,
            "alert_index": self.alert_index,
            "step_index": self.step_index,
            "method": self.method,
            "k": self.k,
            "desired_range": list(self.desired_range),
            "original_prediction": self.original_prediction,
            "shortfall": self.shortfall,
            "metrics": None if m is None else m.__dict__.copy(),
            "counterfactuals": [
                {
                    "predicted": c.predicted,
                    "deltas": [d.__dict__.copy() for d in c.deltas],
                }
                for c in self.counterfactuals
            ],
        }

    def delta_rows(self) -> list[dict[str, Any]]:
        rows = []
        for n, c in enumerate(self.counterfactuals):
            for d in c.deltas:
                rows.append({"block_id": self.block_id, "alert_index": self.alert_index, "method": self.method,
                             "cf": n, "feature": d.name, "before": d.before, "after": d.after,
                             "change": d.change, "original_prediction": self.original_prediction,
                             "cf_prediction": c.predicted})
        return rows


def build_query(block: Block, model: FittedModel, alert_cp: ChangePoint, k: int = 5,
                slack: float = 0.5, horizon: int = 3) -> tuple[CfQuery, int, float]:
    """Query at the first predicted step at or after the change point.

    Returns the query, the absolute index of that step and its prediction.
    """
    X_future, preds = forecast_inputs(model, block, horizon)
    n = len(block)
    h = int(np.clip(alert_cp.index - n, 0, horizon - 1))
    fm = build_lag_features(block, model.n_lags, model.feature_set)
    lo = max(alert_cp.pre_mean - slack, 0.0)
    q = CfQuery(
        x=X_future[h],
        model=model,
        desired=(min(lo, MAX_SCORE), MAX_SCORE),
        lower=np.minimum(fm.lower, X_future[h]),
        upper=np.maximum(fm.upper, X_future[h]),
        integer=fm.integer,
        k=k,
        feature_names=fm.feature_names,
    )
    return q, n + h, float(preds[h])


def explain_alert(block: Block, model: FittedModel, alert_cp: ChangePoint, method: str = "genetic",
                  k: int = 5, *, seed: int = 0, slack: float = 0.5, horizon: int = 3,
                  genetic: GeneticConfig | None = None, budget: int = 10_000) -> ExplanationReport:
    """Counterfactuals that bring the alerted forecast back to the pre-change level.

    ``block`` is the observed history the model was fitted on; the desired
    range is [pre-change mean - slack, 30].
    """
    q, step, pred = build_query(block, model, alert_cp, k, slack, horizon)
    reference = build_lag_features(block, model.n_lags, model.feature_set)
    if reference.d != q.d:
        raise DataError("model and block feature layouts differ")
    res = generate(method, q, seed=seed, reference=reference, genetic=genetic, budget=budget)
    metrics = score_set(q.x, res.counterfactuals, q) if res.counterfactuals else None
    return ExplanationReport(
        block_id=block.block_id,
        alert_index=alert_cp.index,
        step_index=step,
        method=method,
        k=k,
        desired_range=q.desired,
        original_prediction=pred,
        metrics=metrics,
        counterfactuals=res.counterfactuals,
        shortfall=res.shortfall,
        feature_names=q.feature_names,
    )
