"""Synthetic patient cohorts with known change points.

Each block follows a latent well-being state: an AR(1) fluctuation with
stationary standard deviation ``noise_std`` plus injected level shifts.
EMA answers discretise item loadings of that state into 0..3; one
"causal" item per patient carries a much larger loading than the rest, so
it drives every shift. Sensor features are noisy linear mixtures of the
same latent state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .core import (
    EPOCHS,
    MAX_ANSWER,
    N_ITEMS,
    POSITIVE_ITEMS,
    SENSOR_FEATURES,
    EmaRecord,
    SensorEpochRecord,
)

DECREASE = "decrease"
INCREASE = "increase"

# (baseline, scale, loading sign) per sensor feature; loading is on the latent state.
_SENSOR_SHAPE = {
    "activity_duration": (120.0, 30.0, 1.0),
    "conversation_duration": (90.0, 25.0, 1.0),
    "call_count": (4.0, 1.0, 1.0),
    "sms_count": (8.0, 2.0, 1.0),
    "sleep_duration": (420.0, 40.0, 1.0),
    "location_count": (5.0, 1.2, 1.0),
    "unlock_duration": (150.0, 35.0, -1.0),
    "light_level": (60.0, 12.0, 1.0),
    "sound_level": (45.0, 6.0, 1.0),
}


@dataclass(frozen=True)
class CohortConfig:
    n_patients: int = 44
    cadence_days: float = 2.5
    len_min: int = 26
    len_max: int = 165
    len_mean: float = 91.0
    second_block_prob: float = 0.15
    ar_min: float = 0.3
    ar_max: float = 0.7
    noise_std: float = 0.6
    item_noise_std: float = 0.25
    intercept_jitter: float = 0.15
    causal_loading: float = 1.0
    other_loading: tuple[float, float] = (0.05, 0.25)
    events_per_100: float = 2.0
    magnitude: float = 2.0  # shift size in units of the patient's sum-score noise std
    recoveries: bool = True
    flat_fraction: float = 0.0
    sensor_noise_std: float = 0.5
    missing_epoch_prob: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.len_min <= self.len_mean <= self.len_max:
            raise ValueError("block lengths need len_min <= len_mean <= len_max")
        if self.len_min < 15 + 4:
            raise ValueError("len_min must leave room for change points at >= 15")
        if self.magnitude <= 0:
            raise ValueError("magnitude must be positive")
        if not 0 <= self.flat_fraction <= 1:
            raise ValueError("flat_fraction must lie in [0, 1]")
        if self.n_patients < 0:
            raise ValueError("n_patients must be non-negative")


@dataclass(frozen=True)
class TruthEvent:
    block_id: str
    index: int
    direction: str
    magnitude: float
    causal_item: int


@dataclass
class GroundTruth:
    events: dict[str, list[TruthEvent]] = field(default_factory=dict)
    causal_item: dict[str, int] = field(default_factory=dict)
    flat_blocks: set[str] = field(default_factory=set)

    def indices(self, block_id: str, direction: str | None = None) -> list[int]:
        return [
            e.index for e in self.events.get(block_id, []) if direction is None or e.direction == direction
        ]

    def decreases(self, block_id: str) -> list[int]:
        return self.indices(block_id, DECREASE)

    def all_events(self) -> list[TruthEvent]:
        return [e for bid in sorted(self.events) for e in self.events[bid]]


def inject_changepoint(series, index: int, magnitude: float, direction: str = DECREASE) -> np.ndarray:
    """Add a level shift of ``magnitude`` from ``index`` onwards (negative for decreases)."""
    s = np.array(series, dtype=float, copy=True)
    if not 0 < index < len(s):
        raise IndexError(f"change index {index} not interior to a series of length {len(s)}")
    if direction not in (DECREASE, INCREASE):
        raise ValueError(f"direction must be {DECREASE!r} or {INCREASE!r}")
    s[index:] += magnitude if direction == INCREASE else -magnitude
    return s


def ar1(n: int, phi: float, std: float, rng: np.random.Generator) -> np.ndarray:
    """Stationary AR(1) path with marginal standard deviation ``std``."""
    out = np.empty(n)
    innov = std * np.sqrt(1.0 - phi**2)
    out[0] = rng.normal(0.0, std)
    eps = rng.normal(0.0, innov, n)
    for k in range(1, n):
        out[k] = phi * out[k - 1] + eps[k]
    return out


def _block_length(cfg: CohortConfig, rng: np.random.Generator) -> int:
    span = cfg.len_max - cfg.len_min
    m = (cfg.len_mean - cfg.len_min) / span if span else 0.0
    if span == 0 or m <= 0 or m >= 1:
        return int(round(cfg.len_mean))
    a = 2.0
    b = a * (1 - m) / m
    return int(round(cfg.len_min + span * rng.beta(a, b)))


def _place_events(n: int, cfg: CohortConfig, rng: np.random.Generator) -> list[tuple[int, str]]:
    events: list[tuple[int, str]] = []
    if cfg.events_per_100 <= 0:
        return events
    mean_wait = 100.0 / cfg.events_per_100
    pos = 15
    while True:
        d = pos + int(rng.integers(0, max(int(2 * mean_wait), 1)))
        if d > n - 4:
            break
        events.append((d, DECREASE))
        if not cfg.recoveries:
            pos = d + 15
            continue
        r = d + int(rng.integers(12, 25))
        if r > n - 4:
            break
        events.append((r, INCREASE))
        pos = r + 15
    return events


def _item_answers(
    latent: np.ndarray,
    intercept: np.ndarray,
    loading: np.ndarray,
    noise_std: float,
    rng: np.random.Generator,
) -> np.ndarray:
    raw = intercept[None, :] + latent[:, None] * loading[None, :]
    raw = raw + rng.normal(0.0, noise_std, raw.shape)
    return np.clip(np.rint(raw), 0, MAX_ANSWER).astype(int)


def _patient_items(rng: np.random.Generator, cfg: CohortConfig) -> tuple[int, np.ndarray, np.ndarray]:
    causal = int(rng.integers(0, N_ITEMS))
    sign = np.array([1.0 if q in POSITIVE_ITEMS else -1.0 for q in range(N_ITEMS)])
    magnitude = rng.uniform(*cfg.other_loading, N_ITEMS)
    magnitude[causal] = cfg.causal_loading
    # non-causal items sit near an answer level so rounding rarely flips them
    level = np.where(sign > 0, rng.integers(1, 3, N_ITEMS), rng.integers(0, 2, N_ITEMS))
    intercept = level + rng.uniform(-cfg.intercept_jitter, cfg.intercept_jitter, N_ITEMS)
    # causal item starts mid-range so a shift has room to show
    intercept[causal] = 2.0 if sign[causal] > 0 else 1.0
    return causal, intercept, sign * magnitude


_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(40)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


def _item_moments(mean: np.ndarray, noise_std: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of clip(round(mean + noise), 0, 3) for Gaussian noise."""
    edges = np.arange(MAX_ANSWER) + 0.5
    cdf = ndtr((edges[None, ...] - mean[..., None]) / noise_std)
    probs = np.diff(np.concatenate([np.zeros(mean.shape + (1,)), cdf, np.ones(mean.shape + (1,))], axis=-1),
                    axis=-1)
    values = np.arange(MAX_ANSWER + 1, dtype=float)
    m1 = probs @ values
    m2 = probs @ values**2
    return m1, m2 - m1**2


def _score_moments(intercept, loading, cfg: CohortConfig, shift: float = 0.0) -> tuple[float, float]:
    """Mean and variance of the sum score when the latent state is N(shift, noise_std^2)."""
    latent = shift + cfg.noise_std * _GH_NODES
    raw = intercept[None, :] + latent[:, None] * loading[None, :]
    m, v = _item_moments(raw, cfg.item_noise_std)
    sign = np.array([1.0 if q in POSITIVE_ITEMS else -1.0 for q in range(N_ITEMS)])
    cond_mean = (np.where(sign > 0, m, MAX_ANSWER - m)).sum(axis=1)
    cond_var = v.sum(axis=1)
    mean = float(_GH_WEIGHTS @ cond_mean)
    var = float(_GH_WEIGHTS @ cond_var + _GH_WEIGHTS @ (cond_mean - mean) ** 2)
    return mean, var


def score_noise_std(intercept, loading, cfg: CohortConfig) -> float:
    """Within-regime standard deviation of the sum score (latent at its marginal)."""
    return float(np.sqrt(_score_moments(np.asarray(intercept), np.asarray(loading), cfg)[1]))


def latent_shift_for(intercept, loading, cfg: CohortConfig) -> float:
    """Latent shift that lowers the expected sum score by ``magnitude`` score stds."""
    intercept, loading = np.asarray(intercept, float), np.asarray(loading, float)
    base, var = _score_moments(intercept, loading, cfg)
    target = cfg.magnitude * np.sqrt(var)
    lo, hi = 0.0, 1.0
    while base - _score_moments(intercept, loading, cfg, -hi)[0] < target and hi < 64:
        hi *= 2
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if base - _score_moments(intercept, loading, cfg, -mid)[0] < target:
            lo = mid
        else:
            hi = mid
    return hi


def _sensor_records(pid: str, times: np.ndarray, latent: np.ndarray, cfg: CohortConfig,
                    rng: np.random.Generator) -> list[SensorEpochRecord]:
    out = []
    for t, w in zip(times, latent):
        for epoch in EPOCHS:
            noise = rng.normal(0.0, cfg.sensor_noise_std, len(SENSOR_FEATURES))
            if rng.random() < cfg.missing_epoch_prob:
                continue
            feats = {}
            for f, e in zip(SENSOR_FEATURES, noise):
                base, scale, sgn = _SENSOR_SHAPE[f]
                feats[f] = round(max(float(base + scale * (sgn * w + e)), 0.0), 4)
            out.append(SensorEpochRecord(pid, float(t), epoch, feats))
    return out


def generate_patient(idx: int, cfg: CohortConfig, flat: bool):
    """One patient's records and truth, from its own RNG stream."""
    rng = np.random.default_rng([cfg.seed, idx])
    pid = f"P{idx:03d}"
    causal, intercept, loading = _patient_items(rng, cfg)
    n_blocks = 2 if rng.random() < cfg.second_block_prob else 1
    t0 = round(float(rng.uniform(0.0, 30.0)), 1)
    slot = 0
    emas: list[EmaRecord] = []
    sensors: list[SensorEpochRecord] = []
    truth_events: dict[str, list[TruthEvent]] = {}
    causal_items: dict[str, int] = {}
    flat_ids: set[str] = set()
    for b in range(n_blocks):
        n = _block_length(cfg, rng)
        block_id = f"{pid}-b{b}"
        phi = float(rng.uniform(cfg.ar_min, cfg.ar_max))
        latent = ar1(n, phi, cfg.noise_std, rng)
        events = [] if flat else _place_events(n, cfg, rng)
        size = latent_shift_for(intercept, loading, cfg)
        for index, direction in events:
            latent = inject_changepoint(latent, index, size, direction)
        if flat:
            answers = np.tile(np.clip(np.rint(intercept), 0, MAX_ANSWER).astype(int), (n, 1))
            flat_ids.add(block_id)
        else:
            answers = _item_answers(latent, intercept, loading, cfg.item_noise_std, rng)
        times = np.round(t0 + (slot + np.arange(n)) * cfg.cadence_days, 3)
        emas.extend(EmaRecord(pid, float(t), tuple(int(a) for a in row)) for t, row in zip(times, answers))
        sensors.extend(_sensor_records(pid, times, latent, cfg, rng))
        truth_events[block_id] = [
            TruthEvent(block_id, i, d, cfg.magnitude, causal) for i, d in events
        ]
        causal_items[block_id] = causal
        slot += n + int(rng.integers(10, 20))
    return emas, sensors, truth_events, causal_items, flat_ids


def generate_cohort(cfg: CohortConfig) -> tuple[list[EmaRecord], list[SensorEpochRecord], GroundTruth]:
    """EMA records, sensor epoch records and ground truth; deterministic in ``cfg.seed``."""
    n_flat = int(round(cfg.flat_fraction * cfg.n_patients))
    order = np.random.default_rng([cfg.seed, 10**9]).permutation(cfg.n_patients)
    flat = set(int(k) for k in order[:n_flat])
    emas: list[EmaRecord] = []
    sensors: list[SensorEpochRecord] = []
    truth = GroundTruth()
    for idx in range(cfg.n_patients):
        e, s, ev, ci, fl = generate_patient(idx, cfg, idx in flat)
        emas.extend(e)
        sensors.extend(s)
        truth.events.update(ev)
        truth.causal_item.update(ci)
        truth.flat_blocks |= fl
    return emas, sensors, truth


def inject_missingness(
    records: Sequence[EmaRecord],
    gaps: Sequence[int | tuple[int, int]],
    seed: int = 0,
    margin: int = 1,
) -> list[EmaRecord]:
    """Remove runs of consecutive records from one patient's series.

    Each gap is either a size (position drawn from ``seed``) or an explicit
    ``(start, size)``. At least ``margin`` records are kept between gaps and
    at both ends.
    """
    recs = sorted(records, key=lambda r: r.t)
    n = len(recs)
    rng = np.random.default_rng(seed)
    taken = np.zeros(n, dtype=bool)
    blocked = np.zeros(n, dtype=bool)
    for g in gaps:
        if isinstance(g, tuple):
            start, size = g
        else:
            size = int(g)
            free = [
                s for s in range(margin, n - margin - size + 1)
                if not blocked[max(0, s - margin): s + size + margin].any()
            ]
            if not free:
                raise ValueError(f"no room for a gap of {size} records")
            start = int(free[int(rng.integers(0, len(free)))])
        if size <= 0 or start < margin or start + size > n - margin:
            raise ValueError(f"gap ({start}, {size}) does not fit in {n} records")
        if blocked[max(0, start - margin): start + size + margin].any():
            raise ValueError(f"gap ({start}, {size}) overlaps another gap")
        taken[start:start + size] = True
        blocked[start:start + size] = True
    return [r for r, drop in zip(recs, taken) if not drop]
