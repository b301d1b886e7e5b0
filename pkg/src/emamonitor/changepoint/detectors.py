"""Window-based detectors sharing one interface and one alert rule.

Every detector maps a 1-D series to a list of ChangePoints. Sliding
detectors place windows of ``hist_window + scan_window`` points anchored at
the end of the series and stepping backwards, so results depend only on the
trailing ``window + (n_placements - 1) * step`` points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .bocpd import NIGPrior, bocpd
from .cusum import DECREASE, INCREASE, ChangePoint, Segment, cusum_iterate


@dataclass(frozen=True)
class MonitorConfig:
    hist_window: int = 12
    scan_window: int = 6
    step: int = 1
    alert_window: int = 6
    alpha: float = 0.05
    max_iterations: int = 10
    n_placements: int | None = 6  # None slides over the whole series
    hazard_lambda: float = 30.0
    robust_median_width: int = 5
    robust_k: float = 3.5
    bocpd_rule: str = "drop"  # "drop": MAP-drop emission; "segmentation": MAP path from the last step

    def __post_init__(self) -> None:
        for name in ("hist_window", "scan_window", "step", "alert_window", "max_iterations"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.alert_window > self.hist_window:
            raise ValueError("alert_window must not exceed hist_window")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.bocpd_rule not in ("drop", "segmentation"):
            raise ValueError("bocpd_rule must be 'drop' or 'segmentation'")

    @property
    def window(self) -> int:
        return self.hist_window + self.scan_window


def window_starts(length: int, cfg: MonitorConfig) -> list[int]:
    """Start offsets of window placements, earliest first."""
    w = cfg.window
    if length <= w:
        return [0]
    last = length - w
    starts = list(range(last, -1, -cfg.step))
    if cfg.n_placements is not None:
        starts = starts[: cfg.n_placements]
    return sorted(starts)


def _dedupe(cps: Sequence[ChangePoint]) -> list[ChangePoint]:
    """One change point per index; significant beats non-significant, then larger statistic."""
    best: dict[int, ChangePoint] = {}
    for cp in cps:
        cur = best.get(cp.index)
        if cur is None or (cp.significant, cp.statistic) > (cur.significant, cur.statistic):
            best[cp.index] = cp
    return [best[k] for k in sorted(best)]


def _with(cp: ChangePoint, **kw) -> ChangePoint:
    fields = {**cp.__dict__, **kw}
    return ChangePoint(**fields)


def cusum_windows(series, cfg: MonitorConfig = MonitorConfig()) -> list[ChangePoint]:
    """Iterated CUSUM + likelihood-ratio test on every window placement."""
    z = np.asarray(series, dtype=float)
    if len(z) < 5:
        return []
    found = []
    for s in window_starts(len(z), cfg):
        seg = Segment(z[s : s + cfg.window], i=s)
        found.append(_with(cusum_iterate(seg, cfg.max_iterations, cfg.alpha), detector="cusum_sliding"))
    return _dedupe(found)


def cusum_single(series, cfg: MonitorConfig = MonitorConfig()) -> list[ChangePoint]:
    """One CUSUM search over the trailing window only (no sliding)."""
    z = np.asarray(series, dtype=float)
    if len(z) < 5:
        return []
    s = max(len(z) - cfg.window, 0)
    cp = cusum_iterate(Segment(z[s:], i=s), cfg.max_iterations, cfg.alpha)
    return [_with(cp, detector="cusum")]


def running_median(values, width: int = 5) -> np.ndarray:
    """Centred running median; windows are truncated at the series edges."""
    v = np.asarray(values, dtype=float)
    half = width // 2
    return np.array([np.median(v[max(0, k - half) : k + half + 1]) for k in range(len(v))])


def hampel_filter(values, width: int = 5, k: float = 3.5) -> np.ndarray:
    """Replace points further than ``k`` robust std from their running median by that median.

    The scale is 1.4826 * MAD of the whole input (the std if the MAD vanishes),
    so ordinary noise passes through untouched and isolated spikes are removed.
    """
    v = np.asarray(values, dtype=float)
    scale = 1.4826 * float(np.median(np.abs(v - np.median(v))))
    if scale <= 0:
        scale = float(np.std(v))
    if scale <= 0:
        return v.copy()
    med = running_median(v, width)
    out = v.copy()
    bad = np.abs(v - med) > k * scale
    out[bad] = med[bad]
    return out


def robust_detect(series, cfg: MonitorConfig = MonitorConfig()) -> list[ChangePoint]:
    """Sliding CUSUM on a Hampel-filtered copy of each window.

    Reported means are in the original units.
    """
    z = np.asarray(series, dtype=float)
    if len(z) < 5:
        return []
    found = []
    for s in window_starts(len(z), cfg):
        raw = z[s : s + cfg.window]
        clean = hampel_filter(raw, cfg.robust_median_width, cfg.robust_k)
        if np.ptp(clean) == 0:
            continue
        cp = cusum_iterate(Segment(clean, i=s), cfg.max_iterations, cfg.alpha)
        k = cp.index - s
        pre, post = float(raw[:k].mean()), float(raw[k:].mean())
        found.append(_with(cp, pre_mean=pre, post_mean=post, detector="robust"))
    return _dedupe(found)


def baseline_zero(series, cfg: MonitorConfig = MonitorConfig()) -> list[ChangePoint]:
    """Fires when the scan-window mean drops below (historical mean - 1 historical std).

    The reported index is the first scan point below that threshold; the
    statistic is the drop in units of the historical std (threshold 1).
    """
    z = np.asarray(series, dtype=float)
    found = []
    for s in window_starts(len(z), cfg):
        win = z[s : s + cfg.window]
        if len(win) <= cfg.hist_window:
            continue
        hist, scan = win[: cfg.hist_window], win[cfg.hist_window :]
        h_mean = float(hist.mean())
        h_std = float(np.std(hist, ddof=1))
        level = h_mean - h_std
        s_mean = float(scan.mean())
        if not s_mean < level:
            continue
        stat = (h_mean - s_mean) / h_std if h_std > 0 else float("inf")
        below = np.flatnonzero(scan < level)
        idx = s + cfg.hist_window + int(below[0] if below.size else 0)
        found.append(
            ChangePoint(
                index=idx,
                pre_mean=h_mean,
                post_mean=float(z[idx : s + len(win)].mean()),
                statistic=stat,
                significant=True,
                direction=DECREASE,
                threshold=1.0,
                detector="baseline_zero",
            )
        )
    return _dedupe(found)


def bocpd_detect(series, cfg: MonitorConfig = MonitorConfig()) -> list[ChangePoint]:
    """Change points from `bocpd`, with pre/post means around each run start.

    With the "drop" rule the statistic is the MAP run-length ratio across the
    drop (threshold 2). With the "segmentation" rule the change points are the
    run starts of the final MAP path, the means are those of the adjacent
    segments and the statistic is their difference in pooled-std units.
    """
    z = np.asarray(series, dtype=float)
    if len(z) < 2:
        return []
    prior = NIGPrior.from_window(z[: max(2, min(cfg.hist_window, len(z)))])
    res = bocpd(z, cfg.hazard_lambda, prior)
    found = []
    if cfg.bocpd_rule == "segmentation":
        starts = res.map_segmentation()
        bounds = [0] + starts + [len(z)]
        sd = float(np.std(z)) or 1.0
        for a, s, b in zip(bounds, bounds[1:], bounds[2:]):
            pre_mean, post_mean = float(z[a:s].mean()), float(z[s:b].mean())
            found.append(
                ChangePoint(
                    index=int(s),
                    pre_mean=pre_mean,
                    post_mean=post_mean,
                    statistic=abs(pre_mean - post_mean) / sd,
                    significant=True,
                    direction=DECREASE if post_mean < pre_mean else INCREASE,
                    detector="bocpd",
                )
            )
        return found
    for start, t in zip(res.change_points, res.emitted_at):
        if start <= 0:
            continue
        before = res.map_run_length[t - 1]
        after = res.map_run_length[t]
        pre = z[max(0, start - cfg.hist_window) : start]
        post = z[start:]
        pre_mean, post_mean = float(pre.mean()), float(post.mean())
        found.append(
            ChangePoint(
                index=int(start),
                pre_mean=pre_mean,
                post_mean=post_mean,
                statistic=float(before / after),
                significant=True,
                direction=DECREASE if post_mean < pre_mean else INCREASE,
                threshold=2.0,
                detector="bocpd",
            )
        )
    return _dedupe(found)


Detector = Callable[[Sequence[float], MonitorConfig], list[ChangePoint]]

DETECTORS: dict[str, Detector] = {
    "baseline_zero": baseline_zero,
    "cusum": cusum_single,
    "cusum_sliding": cusum_windows,
    "bocpd": bocpd_detect,
    "robust": robust_detect,
}


def get_detector(name: str) -> Detector:
    try:
        return DETECTORS[name]
    except KeyError:
        raise ValueError(f"unknown detector {name!r}; choose from {sorted(DETECTORS)}") from None


def alert_decision(
    cps: Sequence[ChangePoint], length: int, cfg: MonitorConfig = MonitorConfig()
) -> tuple[bool, ChangePoint | None]:
    """Alert iff the most recent significant decrease lies in the final ``alert_window`` points."""
    decreases = [cp for cp in cps if cp.significant and cp.direction == DECREASE]
    if not decreases:
        return False, None
    latest = max(decreases, key=lambda cp: cp.index)
    if latest.index >= length - cfg.alert_window:
        return True, latest
    return False, None


def monitor_sliding(
    history: Sequence[float],
    predictions: Sequence[float],
    cfg: MonitorConfig = MonitorConfig(),
    detector: str = "cusum_sliding",
) -> tuple[list[ChangePoint], bool, ChangePoint | None]:
    """Run a detector over history + predictions and apply the alert rule."""
    if len(history) < cfg.hist_window:
        raise ValueError(f"need at least {cfg.hist_window} historical points, got {len(history)}")
    z = np.concatenate([np.asarray(history, dtype=float), np.asarray(predictions, dtype=float)])
    cps = get_detector(detector)(z, cfg)
    alert, cp = alert_decision(cps, len(z), cfg)
    return cps, alert, cp
