"""Domain model: EMA records, sum scores, blocks and lag features.

All types are frozen dataclasses; every operation here is a pure function.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

ITEM_NAMES: tuple[str, ...] = (
    "calm",
    "social",
    "sleeping",
    "hopeful",
    "think",
    "harm",
    "voices",
    "stressed",
    "seeing_things",
    "depressed",
)
POSITIVE_ITEMS: tuple[int, ...] = (0, 1, 2, 3, 4)
NEGATIVE_ITEMS: tuple[int, ...] = (5, 6, 7, 8, 9)
N_ITEMS = len(ITEM_NAMES)
MAX_ANSWER = 3
MAX_SCORE = float(N_ITEMS * MAX_ANSWER)

SENSOR_FEATURES: tuple[str, ...] = (
    "activity_duration",
    "conversation_duration",
    "call_count",
    "sms_count",
    "sleep_duration",
    "location_count",
    "unlock_duration",
    "light_level",
    "sound_level",
)
# Features that may legitimately be negative (e.g. light/sound in log units).
SIGNED_SENSOR_FEATURES: frozenset[str] = frozenset()
EPOCHS: tuple[str, ...] = ("morning", "afternoon", "evening", "night")

FEATURE_SETS: tuple[str, ...] = ("all_emas", "sum_score", "sensors", "emas_sensors")

DEFAULT_CADENCE_DAYS = 2.5


class DataError(ValueError):
    """Raised for input data that violates a domain invariant."""


@dataclass(frozen=True)
class EmaRecord:
    patient_id: str
    t: float
    answers: tuple[int, ...]

    def __post_init__(self) -> None:
        answers = tuple(int(a) for a in self.answers)
        if len(answers) != N_ITEMS:
            raise DataError(f"expected {N_ITEMS} answers, got {len(answers)}")
        if any(a < 0 or a > MAX_ANSWER for a in answers):
            raise DataError(f"answers must lie in 0..{MAX_ANSWER}: {answers}")
        if not math.isfinite(self.t) or self.t < 0:
            raise DataError(f"invalid observation time {self.t!r}")
        object.__setattr__(self, "answers", answers)


@dataclass(frozen=True)
class SensorEpochRecord:
    patient_id: str
    t: float
    epoch: str
    features: Mapping[str, float]

    def __post_init__(self) -> None:
        if self.epoch not in EPOCHS:
            raise DataError(f"unknown epoch {self.epoch!r}")
        for name, value in self.features.items():
            if not math.isfinite(value):
                raise DataError(f"non-finite sensor value for {name}")
            if value < 0 and name not in SIGNED_SENSOR_FEATURES:
                raise DataError(f"negative value {value} for sensor feature {name}")


def sum_score(record: EmaRecord) -> float:
    """Positives count as answered, negatives are reverse-coded (3 - answer)."""
    a = record.answers
    return float(
        sum(a[q] for q in POSITIVE_ITEMS) + sum(MAX_ANSWER - a[q] for q in NEGATIVE_ITEMS)
    )


def sum_scores(answers: np.ndarray) -> np.ndarray:
    """Vectorised `sum_score` over an (n, 10) answer matrix."""
    answers = np.asarray(answers, dtype=float)
    pos = answers[..., list(POSITIVE_ITEMS)].sum(axis=-1)
    neg = (MAX_ANSWER - answers[..., list(NEGATIVE_ITEMS)]).sum(axis=-1)
    return pos + neg


@dataclass(frozen=True)
class BlockPoint:
    t: float
    record: EmaRecord
    sensors: tuple[float, ...] | None
    score: float


@dataclass(frozen=True)
class Block:
    """A gap-bounded run of one patient's observations.

    Views returned by `split_block` or `Block.head` are also Blocks; only
    `segment_blocks` enforces the minimum length.
    """

    patient_id: str
    block_id: str
    points: tuple[BlockPoint, ...]

    def __len__(self) -> int:
        return len(self.points)

    @property
    def times(self) -> np.ndarray:
        return np.array([p.t for p in self.points], dtype=float)

    @property
    def scores(self) -> np.ndarray:
        return np.array([p.score for p in self.points], dtype=float)

    @property
    def answers(self) -> np.ndarray:
        return np.array([p.record.answers for p in self.points], dtype=float).reshape(-1, N_ITEMS)

    @property
    def has_sensors(self) -> bool:
        return any(p.sensors is not None for p in self.points)

    def sensor_matrix(self) -> np.ndarray:
        """Aligned sensor features, missing entries filled with this block's median."""
        raw = np.full((len(self.points), len(SENSOR_FEATURES)), np.nan)
        for i, p in enumerate(self.points):
            if p.sensors is not None:
                raw[i] = p.sensors
        return impute_median(raw)

    def head(self, n: int) -> "Block":
        return Block(self.patient_id, self.block_id, self.points[:n])

    def tail_from(self, start: int) -> "Block":
        return Block(self.patient_id, self.block_id, self.points[start:])


def impute_median(raw: np.ndarray) -> np.ndarray:
    out = np.array(raw, dtype=float, copy=True)
    for j in range(out.shape[1]):
        col = out[:, j]
        missing = ~np.isfinite(col)
        if missing.any():
            observed = col[~missing]
            col[missing] = float(np.median(observed)) if observed.size else 0.0
    return out


@dataclass(frozen=True)
class FeatureMatrix:
    """Lagged design matrix.

    ``X`` is stored samples-first, shape (n, d); ``X[i]`` is the lag window
    used to predict ``y[i]`` observed at ``t_index[i]``.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    t_index: np.ndarray
    feature_set: str = "all_emas"
    n_lags: int = 3
    lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    integer: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DataError(f"X rows {X.shape} do not match y length {y.shape}")
        if X.shape[1] != len(self.feature_names):
            raise DataError("feature_names length does not match X columns")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError("feature matrix contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t_index", np.asarray(self.t_index, dtype=float))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def rows(self, index) -> "FeatureMatrix":
        """Row subset (slice or index array) keeping feature metadata."""
        return FeatureMatrix(
            X=self.X[index],
            y=self.y[index],
            feature_names=self.feature_names,
            t_index=self.t_index[index],
            feature_set=self.feature_set,
            n_lags=self.n_lags,
            lower=self.lower,
            upper=self.upper,
            integer=self.integer,
        )


# --------------------------------------------------------------------------
# segmentation


def _blocks_for_patient(
    records: Sequence[EmaRecord],
    min_len: int,
    max_gap_points: int,
    max_gap_days: float,
    cadence_days: float,
) -> list[list[EmaRecord]]:
    runs: list[list[EmaRecord]] = []
    current: list[EmaRecord] = []
    for rec in records:
        if current:
            dt = rec.t - current[-1].t
            if dt <= 0:
                raise DataError(
                    f"patient {rec.patient_id}: times not strictly increasing at t={rec.t}"
                )
            missed = max(int(round(dt / cadence_days)) - 1, 0)
            excess_days = dt - cadence_days
            if missed > max_gap_points or excess_days > max_gap_days:
                runs.append(current)
                current = []
        current.append(rec)
    if current:
        runs.append(current)
    return [r for r in runs if len(r) >= min_len]


def _aligned_sensors(
    times: np.ndarray, sensors: Sequence[SensorEpochRecord], cadence_days: float
) -> list[tuple[float, ...] | None]:
    """Mean of each feature over the epoch records in (t_prev, t]."""
    if not sensors:
        return [None] * len(times)
    st = np.array([s.t for s in sensors], dtype=float)
    order = np.argsort(st, kind="stable")
    st = st[order]
    vals = np.array(
        [[s.features.get(f, np.nan) for f in SENSOR_FEATURES] for s in sensors], dtype=float
    )[order]
    out: list[tuple[float, ...] | None] = []
    for k, t in enumerate(times):
        lo = times[k - 1] if k > 0 else t - cadence_days
        a = np.searchsorted(st, lo, side="right")
        b = np.searchsorted(st, t, side="right")
        if b <= a:
            out.append(None)
            continue
        window = vals[a:b]
        with np.errstate(all="ignore"):
            counts = np.isfinite(window).sum(axis=0)
            means = np.where(counts > 0, np.nansum(window, axis=0) / np.maximum(counts, 1), np.nan)
        out.append(tuple(float(v) for v in means))
    return out


def segment_blocks(
    records: Iterable[EmaRecord],
    min_len: int = 15,
    max_gap_points: int = 6,
    max_gap_days: float = 15.0,
    *,
    cadence_days: float = DEFAULT_CADENCE_DAYS,
    sensors: Iterable[SensorEpochRecord] | None = None,
) -> list[Block]:
    """Split each patient's records into maximal gap-bounded blocks.

    A gap breaks a block when more than ``max_gap_points`` cadence slots are
    missed, or when the absence beyond one cadence step exceeds
    ``max_gap_days``. Runs shorter than ``min_len`` are dropped.
    """
    by_patient: dict[str, list[EmaRecord]] = defaultdict(list)
    for rec in records:
        by_patient[rec.patient_id].append(rec)
    sensors_by_patient: dict[str, list[SensorEpochRecord]] = defaultdict(list)
    for s in sensors or ():
        sensors_by_patient[s.patient_id].append(s)

    blocks: list[Block] = []
    for pid in sorted(by_patient):
        recs = sorted(by_patient[pid], key=lambda r: r.t)
        runs = _blocks_for_patient(recs, min_len, max_gap_points, max_gap_days, cadence_days)
        for b, run in enumerate(runs):
            times = np.array([r.t for r in run])
            aligned = _aligned_sensors(times, sensors_by_patient.get(pid, []), cadence_days)
            points = tuple(
                BlockPoint(t=r.t, record=r, sensors=s, score=sum_score(r))
                for r, s in zip(run, aligned)
            )
            blocks.append(Block(pid, f"{pid}-b{b}", points))
    return blocks


def block_records(block: Block) -> list[EmaRecord]:
    return [p.record for p in block.points]


def variance_filter(blocks: Iterable[Block], min_std: float = 0.5) -> list[Block]:
    """Keep blocks whose sum-score sample standard deviation exceeds ``min_std``."""
    kept = []
    for block in blocks:
        scores = block.scores
        std = float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0
        if std > min_std:
            kept.append(block)
    return kept


# --------------------------------------------------------------------------
# lag features


@dataclass(frozen=True)
class BaseFeatures:
    """Per-observation feature values (before lagging) plus their domains."""

    values: np.ndarray  # (n, p)
    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    integer: np.ndarray


def base_features(block: Block, feature_set: str) -> BaseFeatures:
    if feature_set == "all_emas":
        return BaseFeatures(
            block.answers,
            ITEM_NAMES,
            np.zeros(N_ITEMS),
            np.full(N_ITEMS, float(MAX_ANSWER)),
            np.ones(N_ITEMS, dtype=bool),
        )
    if feature_set == "sum_score":
        # sum-score lags may hold fed-back predictions, so they are not integral
        return BaseFeatures(
            block.scores.reshape(-1, 1),
            ("score",),
            np.zeros(1),
            np.full(1, MAX_SCORE),
            np.zeros(1, dtype=bool),
        )
    if feature_set == "sensors":
        values = block.sensor_matrix()
        lower = values.min(axis=0) if len(values) else np.zeros(len(SENSOR_FEATURES))
        upper = values.max(axis=0) if len(values) else np.zeros(len(SENSOR_FEATURES))
        return BaseFeatures(
            values, SENSOR_FEATURES, lower, upper, np.zeros(len(SENSOR_FEATURES), dtype=bool)
        )
    if feature_set == "emas_sensors":
        e = base_features(block, "all_emas")
        s = base_features(block, "sensors")
        return BaseFeatures(
            np.hstack([e.values, s.values]),
            e.names + s.names,
            np.concatenate([e.lower, s.lower]),
            np.concatenate([e.upper, s.upper]),
            np.concatenate([e.integer, s.integer]),
        )
    raise ValueError(f"unknown feature set {feature_set!r}; expected one of {FEATURE_SETS}")


def lag_names(names: Sequence[str], n_lags: int) -> tuple[str, ...]:
    return tuple(f"{name}_lag{lag}" for lag in range(1, n_lags + 1) for name in names)


def lag_window(values: np.ndarray, end: int, n_lags: int) -> np.ndarray:
    """Concatenate rows end-1, end-2, ..., end-n_lags (most recent first)."""
    return values[end - n_lags : end][::-1].ravel()


def build_lag_features(block: Block, n_lags: int = 3, feature_set: str = "all_emas") -> FeatureMatrix:
    """Design matrix whose row for step i holds the ``n_lags`` previous observations."""
    n = len(block)
    if n <= n_lags:
        raise DataError(f"block {block.block_id} has {n} points; need more than {n_lags}")
    base = base_features(block, feature_set)
    X = np.stack([lag_window(base.values, i, n_lags) for i in range(n_lags, n)])
    return FeatureMatrix(
        X=X,
        y=block.scores[n_lags:],
        feature_names=lag_names(base.names, n_lags),
        t_index=block.times[n_lags:],
        feature_set=feature_set,
        n_lags=n_lags,
        lower=np.tile(base.lower, n_lags),
        upper=np.tile(base.upper, n_lags),
        integer=np.tile(base.integer, n_lags),
    )


def split_block(block: Block, train_fraction: float = 0.8, min_train: int = 15) -> tuple[Block, Block]:
    """Chronological train/test split with ``floor(train_fraction * n)`` training points."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n_train = int(math.floor(train_fraction * len(block)))
    if n_train < min_train:
        raise DataError(
            f"block {block.block_id}: train side has {n_train} points, need {min_train}"
        )
    return block.head(n_train), block.tail_from(n_train)
