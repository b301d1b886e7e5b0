"""The weekly predict -> detect -> explain loop and the cohort-level analyses.

Each block is an independent task. Within a block, weekly origins are
processed in order; the model at origin ``o`` is fitted on observations
``[0, o)`` only, and the detector sees those observations plus the three
predictions for ``[o, o + 3)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence, TypeVar

import numpy as np

from .changepoint import (
    DECREASE,
    DETECTORS,
    ChangePoint,
    DetectionEval,
    MonitorConfig,
    evaluate_detection,
    monitor_sliding,
    pool,
)
from .core import Block, DataError, build_lag_features, segment_blocks, split_block, variance_filter
from .counterfactual import ExplanationReport, GeneticConfig, explain_alert
from .forecast import (
    COMPACT_GRID,
    FittedModel,
    HyperGrid,
    bootstrap_ci,
    fit_model,
    forecast,
    grid_search,
    mae,
    rolling_origin_evaluate,
    rolling_origins,
)
from .synthcohort import CohortConfig, GroundTruth, generate_cohort

HORIZON = 3
MIN_HISTORY = 12

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class ModelConfig:
    family: str = "gbrt"
    params: dict[str, Any] | None = None  # None: tuned defaults
    feature_set: str = "all_emas"
    n_lags: int = 3
    tune: bool = False  # grid search once per block on its 80% training side
    k_folds: int = 5
    seed: int = 0


@dataclass(frozen=True)
class CfConfig:
    enabled: bool = True
    method: str = "genetic"
    k: int = 5
    slack: float = 0.5
    budget: int = 10_000
    genetic: GeneticConfig = field(default_factory=GeneticConfig)
    seed: int = 0


@dataclass
class WeeklyStep:
    week: int
    origin: int
    predictions: list[float]
    change_points: list[ChangePoint]
    alert: bool
    alert_cp: ChangePoint | None = None
    explanation: ExplanationReport | None = None
    observed: list[float] = field(default_factory=list)
    mae: float | None = None
    train_max_t: float = float("nan")
    test_min_t: float = float("nan")

    def __post_init__(self) -> None:
        if len(self.predictions) != HORIZON:
            raise ValueError(f"a weekly step holds {HORIZON} predictions")


@dataclass
class MonitoringReport:
    block_id: str
    steps: list[WeeklyStep] = field(default_factory=list)
    skipped: str | None = None
    params: dict[str, Any] = field(default_factory=dict)

    @property
    def n_alerts(self) -> int:
        return sum(s.alert for s in self.steps)

    @property
    def n_change_points(self) -> int:
        return sum(len(s.change_points) for s in self.steps)

    @property
    def n_explanations(self) -> int:
        return sum(s.explanation is not None for s in self.steps)

    def alert_indices(self) -> list[int]:
        return sorted({s.alert_cp.index for s in self.steps if s.alert_cp is not None})

    def to_dict(self) -> dict[str, Any]:
        return {
            "block_id": self.block_id,
            "skipped": self.skipped,
            "params": self.params,
            "totals": {
                "weeks": len(self.steps),
                "alerts": self.n_alerts,
                "change_points": self.n_change_points,
                "explanations": self.n_explanations,
            },
            "steps": [
                {
                    "week": s.week,
                    "origin": s.origin,
                    "predictions": s.predictions,
                    "observed": s.observed,
                    "mae": s.mae,
                    "alert": s.alert,
                    "alert_index": None if s.alert_cp is None else s.alert_cp.index,
                    "change_points": [_cp_dict(cp) for cp in s.change_points],
                    "explanation": None if s.explanation is None else s.explanation.to_dict(),
                }
                for s in self.steps
            ],
        }


def _cp_dict(cp: ChangePoint) -> dict[str, Any]:
    return {
        "index": cp.index,
        "pre_mean": cp.pre_mean,
        "post_mean": cp.post_mean,
        "statistic": cp.statistic,
        "significant": cp.significant,
        "direction": cp.direction,
    }


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    """Order-preserving map; ``threads`` caps the worker count."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# -- per-block loop ---------------------------------------------------------


@dataclass
class BlockForecasts:
    """Weekly models and forecasts for one block; reusable across detectors."""

    block: Block
    params: dict[str, Any]
    origins: list[int]
    models: list[FittedModel]
    predictions: list[np.ndarray]


def weekly_origins(n: int) -> list[int]:
    return rolling_origins(n, MIN_HISTORY, HORIZON)


def block_params(block: Block, cfg: ModelConfig) -> dict[str, Any] | None:
    """Hyper-parameters frozen for the whole block."""
    if not cfg.tune or cfg.family == "mean":
        return cfg.params
    train, _ = split_block(block)
    grid = HyperGrid(cfg.family, COMPACT_GRID[cfg.family])
    best, _ = grid_search(train, grid, cfg.k_folds, feature_set=cfg.feature_set, n_lags=cfg.n_lags,
                          seed=cfg.seed)
    return best


def block_forecasts(block: Block, cfg: ModelConfig = ModelConfig()) -> BlockForecasts:
    n = len(block)
    if n < MIN_HISTORY + HORIZON:
        raise DataError(f"block {block.block_id} has {n} points; monitoring needs {MIN_HISTORY + HORIZON}")
    params = block_params(block, cfg)
    origins = weekly_origins(n)
    models, preds = [], []
    for o in origins:
        history = block.head(o)
        model = fit_model(build_lag_features(history, cfg.n_lags, cfg.feature_set), cfg.family, params,
                          seed=cfg.seed)
        if model.train_end_t >= block.times[o]:
            raise AssertionError(f"look-ahead at origin {o} of {block.block_id}")
        models.append(model)
        preds.append(forecast(model, history, HORIZON))
    used = dict(models[0].params) if models else dict(params or {})
    return BlockForecasts(block, used, origins, models, preds)


def run_monitoring(
    block: Block,
    model_cfg: ModelConfig = ModelConfig(),
    monitor_cfg: MonitorConfig = MonitorConfig(),
    cf_cfg: CfConfig = CfConfig(),
    *,
    detector: str = "cusum_sliding",
    forecasts: BlockForecasts | None = None,
) -> MonitoringReport:
    """Simulate weekly monitoring of one block.

    Later weeks see the true observations, never earlier predictions, as
    history. Blocks too short to monitor come back with ``skipped`` set.
    """
    try:
        fc = forecasts if forecasts is not None else block_forecasts(block, model_cfg)
    except DataError as exc:
        return MonitoringReport(block.block_id, skipped=str(exc))
    y = block.scores
    t = block.times
    report = MonitoringReport(block.block_id, params=fc.params)
    for w, (o, model, pred) in enumerate(zip(fc.origins, fc.models, fc.predictions)):
        history = block.head(o)
        cps, alert, cp = monitor_sliding(y[:o], pred, monitor_cfg, detector)
        explanation = None
        if alert and cf_cfg.enabled:
            explanation = explain_alert(
                history, model, cp, cf_cfg.method, cf_cfg.k,
                seed=cf_cfg.seed, slack=cf_cfg.slack, horizon=HORIZON,
                genetic=cf_cfg.genetic, budget=cf_cfg.budget,
            )
        observed = y[o:o + HORIZON]
        report.steps.append(
            WeeklyStep(
                week=w,
                origin=o,
                predictions=[float(v) for v in pred],
                change_points=cps,
                alert=alert,
                alert_cp=cp,
                explanation=explanation,
                observed=[float(v) for v in observed],
                mae=mae(observed, pred),
                train_max_t=float(t[o - 1]),
                test_min_t=float(t[o]),
            )
        )
    return report


# -- cohorts ----------------------------------------------------------------


@dataclass
class Cohort:
    blocks: list[Block]
    truth: GroundTruth | None = None


def cohort_from_config(cfg: CohortConfig, min_std: float = 0.5) -> Cohort:
    """Generate, segment and variance-filter a synthetic cohort."""
    emas, sensors, truth = generate_cohort(cfg)
    blocks = segment_blocks(emas, cadence_days=cfg.cadence_days, sensors=sensors)
    return Cohort(variance_filter(blocks, min_std), truth)


def shift_cohort_config(seed: int = 0, n_patients: int = 44) -> CohortConfig:
    """A cohort whose forecasts face sizeable level shifts (distribution-shift analysis)."""
    return CohortConfig(n_patients=n_patients, magnitude=3.0, seed=seed)


@dataclass
class ScoreRow:
    name: str
    mean_mae: float
    ci_low: float
    ci_high: float
    n_blocks: int
    n_origins: int


def _test_evaluation(block: Block, family: str, params, feature_set: str, n_lags: int, seed: int):
    start = int(math.floor(0.8 * len(block)))
    try:
        return rolling_origin_evaluate(block, family, params, HORIZON, MIN_HISTORY, feature_set=feature_set,
                                       n_lags=n_lags, seed=seed, start=start)
    except DataError:
        return None


def _score_row(name: str, results, seed: int) -> ScoreRow:
    results = [r for r in results if r is not None]
    block_means = [r.mean_mae for r in results]
    if not block_means:
        return ScoreRow(name, float("nan"), float("nan"), float("nan"), 0, 0)
    low, high = bootstrap_ci(block_means, seed=seed)
    return ScoreRow(name, float(np.mean(block_means)), low, high, len(block_means),
                    sum(len(r.origins) for r in results))


def compare_models(
    cohort: Cohort | Sequence[Block],
    families: Iterable[str] = ("mean", "lasso", "elastic_net", "random_forest", "gbrt"),
    feature_set: str = "all_emas",
    *,
    params: dict[str, dict[str, Any]] | None = None,
    n_lags: int = 3,
    seed: int = 0,
    threads: int = 1,
) -> list[ScoreRow]:
    """Mean test MAE per family over rolling origins in each block's last 20%.

    The interval is a bootstrap over per-block mean MAEs.
    """
    blocks = cohort.blocks if isinstance(cohort, Cohort) else list(cohort)
    rows = []
    for fam in families:
        p = (params or {}).get(fam)
        res = parallel_map(lambda b: _test_evaluation(b, fam, p, feature_set, n_lags, seed), blocks, threads)
        rows.append(_score_row(fam, res, seed))
    return rows


def compare_features(
    cohort: Cohort | Sequence[Block],
    model: str = "gbrt",
    feature_sets: Iterable[str] = ("all_emas", "sum_score", "sensors"),
    *,
    params: dict[str, Any] | None = None,
    n_lags: int = 3,
    seed: int = 0,
    threads: int = 1,
) -> list[ScoreRow]:
    blocks = cohort.blocks if isinstance(cohort, Cohort) else list(cohort)
    rows = []
    for fs in feature_sets:
        res = parallel_map(lambda b: _test_evaluation(b, model, params, fs, n_lags, seed), blocks, threads)
        rows.append(_score_row(fs, res, seed))
    return rows


@dataclass
class DetectorRow:
    detector: str
    recall: float
    precision: float
    f1: float
    matched: int
    n_truth: int
    n_predicted: int
    alert_recall: float = float("nan")
    alert_precision: float = float("nan")


def detection_indices(report: MonitoringReport) -> list[int]:
    """The most recent significant decrease of each weekly run, as distinct indices."""
    out = set()
    for s in report.steps:
        dec = [cp.index for cp in s.change_points if cp.significant and cp.direction == DECREASE]
        if dec:
            out.add(max(dec))
    return sorted(out)


def compare_detectors(
    cohort: Cohort,
    detectors: Iterable[str] = tuple(DETECTORS),
    model_cfg: ModelConfig = ModelConfig(),
    monitor_cfg: MonitorConfig = MonitorConfig(),
    *,
    delay_tolerance: int = 2,
    threads: int = 1,
    forecasts: dict[str, BlockForecasts] | None = None,
) -> list[DetectorRow]:
    """Detected decreases versus true decreases, micro-pooled over blocks.

    Each week contributes its most recent significant decrease, wherever it
    lies; ``alert_*`` columns score only the change points that raised alerts.
    """
    if cohort.truth is None:
        raise ValueError("compare_detectors needs ground truth")
    fcs = forecasts if forecasts is not None else cohort_forecasts(cohort, model_cfg, threads)
    off = CfConfig(enabled=False)
    rows = []
    for det in detectors:
        evals: list[DetectionEval] = []
        alert_evals: list[DetectionEval] = []
        for block in cohort.blocks:
            fc = fcs.get(block.block_id)
            if fc is None:
                continue
            rep = run_monitoring(block, model_cfg, monitor_cfg, off, detector=det, forecasts=fc)
            truth = cohort.truth.decreases(block.block_id)
            evals.append(evaluate_detection(detection_indices(rep), truth, delay_tolerance))
            alert_evals.append(evaluate_detection(rep.alert_indices(), truth, delay_tolerance))
        e, a = pool(evals), pool(alert_evals)
        rows.append(DetectorRow(det, e.recall, e.precision, e.f1, e.matched, e.n_truth, e.n_predicted,
                                a.recall, a.precision))
    return rows


def cohort_forecasts(cohort: Cohort | Sequence[Block], model_cfg: ModelConfig = ModelConfig(),
                     threads: int = 1) -> dict[str, BlockForecasts]:
    """Weekly forecasts for every monitorable block, keyed by block id."""
    blocks = cohort.blocks if isinstance(cohort, Cohort) else list(cohort)

    def one(b: Block) -> BlockForecasts | None:
        try:
            return block_forecasts(b, model_cfg)
        except DataError:
            return None

    out = parallel_map(one, blocks, threads)
    return {b.block_id: fc for b, fc in zip(blocks, out) if fc is not None}


# -- distribution shift -------------------------------------------------------

INF_BUCKET = "inf"


@dataclass
class ShiftRow:
    weeks_to_change: int | str
    mean_mae: float
    n: int


def weeks_to_change(origin: int, change_indices: Sequence[int]) -> int | str:
    """Whole weeks (3 points) from the origin to the nearest true change at or after it."""
    future = [c for c in change_indices if c >= origin]
    if not future:
        return INF_BUCKET
    return (min(future) - origin) // HORIZON


def distribution_shift_analysis(reports: Iterable[MonitoringReport], truth: GroundTruth) -> list[ShiftRow]:
    """Mean weekly MAE by distance to the next true change point (any direction).

    Rows are sorted by descending distance with the ``"inf"`` bucket first.
    """
    buckets: dict[int | str, list[float]] = {}
    for rep in reports:
        changes = truth.indices(rep.block_id)
        for s in rep.steps:
            if s.mae is None:
                continue
            buckets.setdefault(weeks_to_change(s.origin, changes), []).append(s.mae)
    keys = sorted(buckets, key=lambda k: (k != INF_BUCKET, -(k if isinstance(k, int) else 0)))
    return [ShiftRow(k, float(np.mean(buckets[k])), len(buckets[k])) for k in keys]


def shift_effect(rows: Sequence[ShiftRow], near: int = 1, far: int = 4) -> tuple[float, float]:
    """Pooled mean MAE for weeks <= ``near`` and for weeks >= ``far`` (incl. no future change)."""

    def pooled(sel):
        n = sum(r.n for r in sel)
        return sum(r.mean_mae * r.n for r in sel) / n if n else float("nan")

    near_rows = [r for r in rows if isinstance(r.weeks_to_change, int) and r.weeks_to_change <= near]
    far_rows = [r for r in rows if not isinstance(r.weeks_to_change, int) or r.weeks_to_change >= far]
    return pooled(near_rows), pooled(far_rows)


def monitor_cohort(
    cohort: Cohort | Sequence[Block],
    model_cfg: ModelConfig = ModelConfig(),
    monitor_cfg: MonitorConfig = MonitorConfig(),
    cf_cfg: CfConfig = CfConfig(),
    *,
    detector: str = "cusum_sliding",
    threads: int = 1,
) -> list[MonitoringReport]:
    blocks = cohort.blocks if isinstance(cohort, Cohort) else list(cohort)
    return parallel_map(lambda b: run_monitoring(b, model_cfg, monitor_cfg, cf_cfg, detector=detector),
                        blocks, threads)
