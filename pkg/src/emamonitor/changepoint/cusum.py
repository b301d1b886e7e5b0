"""CUSUM change-point location and the Gaussian likelihood-ratio test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

DECREASE = "decrease"
INCREASE = "increase"


@dataclass(frozen=True)
class Segment:
    """Values y[i..j] (inclusive) of a longer series; ``i`` is the absolute offset."""

    values: np.ndarray
    i: int = 0

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or len(v) < 5:
            raise ValueError("a segment needs at least 5 points (j - i >= 4)")
        object.__setattr__(self, "values", v)

    @property
    def j(self) -> int:
        return self.i + len(self.values) - 1

    @property
    def reference(self) -> int:
        """Local index of the last point of the first half."""
        return (len(self.values) - 1) // 2

    def half_means(self, split: int | None = None) -> tuple[float, float]:
        k = self.reference if split is None else split
        return float(self.values[: k + 1].mean()), float(self.values[k + 1 :].mean())


@dataclass(frozen=True)
class ChangePoint:
    """A detected mean shift.

    ``index`` is the absolute index of the first observation after the shift.
    ``significant`` implies ``statistic >= threshold``; what the statistic
    measures depends on the detector that produced it.
    """

    index: int
    pre_mean: float
    post_mean: float
    statistic: float
    significant: bool
    direction: str
    threshold: float = float("nan")
    detector: str = "cusum"
    iterations: int = 0
    stable: bool = True

    @property
    def llr_statistic(self) -> float:
        return self.statistic


def cusum_path(values: np.ndarray, center: float) -> np.ndarray:
    """C[N] = sum_{k=1..N} (y[k] - center) for local N = 1..len-1 (C[0] unused, = 0)."""
    inc = np.asarray(values, dtype=float) - center
    inc[0] = 0.0
    return np.cumsum(inc)


def cusum_locate(seg: Segment, split: int | None = None) -> int:
    """Absolute index N in (i, j] maximising |sum_{k=i+1..N} (y[k] - m)|.

    ``m`` is the midpoint of the two half means around ``split`` (default: the
    segment's middle). Ties resolve to the earliest N.
    """
    mu_a, mu_b = seg.half_means(split)
    center = 0.5 * (mu_a + mu_b)
    c = np.abs(cusum_path(seg.values, center)[1:])
    # values within rounding of the max count as ties
    tol = 1e-9 * max(1.0, float(np.max(np.abs(seg.values))) * len(c))
    return seg.i + 1 + int(np.flatnonzero(c >= c.max() - tol)[0])


def llr_gaussian_test(values, k: int, alpha: float = 0.05) -> tuple[float, bool]:
    """Likelihood ratio for one mean vs two means split at local index ``k``.

    Both hypotheses share a single variance, estimated by maximum likelihood
    under each. The statistic 2*(LL_split - LL_pooled) = n*log(s0^2/s1^2) is
    compared with the chi-square(1) quantile at 1 - alpha.
    """
    v = np.asarray(values, dtype=float)
    n = len(v)
    if not 2 <= k <= n - 2:
        raise ValueError(f"split {k} leaves a half shorter than 2 of {n} points")
    a, b = v[:k], v[k:]
    var0 = float(np.mean((v - v.mean()) ** 2))
    var1 = float((np.sum((a - a.mean()) ** 2) + np.sum((b - b.mean()) ** 2)) / n)
    scale = max(float(np.mean(v * v)), 1e-300)
    if var0 <= 1e-24 * scale:
        stat = 0.0
    elif var1 <= 1e-24 * scale:
        stat = math.inf if a.mean() != b.mean() else 0.0
    else:
        stat = max(n * math.log(var0 / var1), 0.0)
    return stat, bool(stat > llr_threshold(alpha))


def llr_threshold(alpha: float) -> float:
    return float(chi2.ppf(1.0 - alpha, 1))


def cusum_iterate(seg: Segment, max_iterations: int = 10, alpha: float = 0.05) -> ChangePoint:
    """Alternate mean re-estimation and `cusum_locate` until the split repeats.

    Candidates are clamped so each side keeps at least two points.
    """
    v = seg.values
    L = len(v)
    cand = seg.reference
    iterations = 0
    stable = False
    while iterations < max_iterations:
        iterations += 1
        n_abs = cusum_locate(seg, cand)
        nxt = min(max(n_abs - seg.i, 1), L - 3)
        if nxt == cand:
            stable = True
            break
        cand = nxt
    k = cand + 1
    pre, post = float(v[:k].mean()), float(v[k:].mean())
    stat, sig = llr_gaussian_test(v, k, alpha)
    return ChangePoint(
        index=seg.i + k,
        pre_mean=pre,
        post_mean=post,
        statistic=stat,
        significant=sig,
        direction=DECREASE if post < pre else INCREASE,
        threshold=llr_threshold(alpha),
        detector="cusum",
        iterations=iterations,
        stable=stable,
    )
