"""Elastic-net / lasso by cyclic coordinate descent on standardised features.

Objective (standardised design Z, centred target):

    1/(2n) ||y - Z b||^2 + alpha * (l1_ratio ||b||_1 + (1 - l1_ratio)/2 ||b||^2)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOL = 1e-6
DEFAULT_MAX_SWEEPS = 10_000


def soft_threshold(z: float, gamma: float) -> float:
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


@dataclass
class LinearModel:
    coef: np.ndarray  # in standardised units
    intercept: float
    mean: np.ndarray
    scale: np.ndarray
    n_sweeps: int = 0
    gap: float = 0.0
    objective_trace: list[float] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        Z = (np.atleast_2d(np.asarray(X, dtype=float)) - self.mean) / self.scale
        return Z @ self.coef + self.intercept

    def to_dict(self) -> dict:
        return {
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        return cls(
            coef=np.asarray(d["coef"], dtype=float),
            intercept=float(d["intercept"]),
            mean=np.asarray(d["mean"], dtype=float),
            scale=np.asarray(d["scale"], dtype=float),
        )


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Population-std standardisation; constant columns get scale 1 and become all-zero."""
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (X - mean) / scale, mean, scale


def enet_objective(Z, y, coef, alpha, l1_ratio) -> float:
    n = Z.shape[0]
    r = y - Z @ coef
    penalty = alpha * (l1_ratio * np.abs(coef).sum() + 0.5 * (1 - l1_ratio) * coef @ coef)
    return float(0.5 * r @ r / n + penalty)


def duality_gap(Z, y, coef, alpha, l1_ratio) -> float:
    """Elastic-net duality gap, expressed on the 1/(2n) objective scale."""
    n = Z.shape[0]
    l1 = alpha * l1_ratio * n
    l2 = alpha * (1.0 - l1_ratio) * n
    R = y - Z @ coef
    XtA = Z.T @ R - l2 * coef
    dual_norm = float(np.max(np.abs(XtA))) if XtA.size else 0.0
    R_norm2 = float(R @ R)
    if dual_norm > l1:
        const = l1 / dual_norm
        gap = 0.5 * (R_norm2 + R_norm2 * const**2)
    else:
        const = 1.0
        gap = R_norm2
    gap += l1 * np.abs(coef).sum() - const * float(R @ y) + 0.5 * l2 * (1 + const**2) * float(coef @ coef)
    return float(gap) / n


def fit_enet(
    X: np.ndarray,
    y: np.ndarray,
    alpha: float,
    l1_ratio: float = 1.0,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    record_objective: bool = False,
) -> LinearModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite values in design matrix or target")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if not 0.0 <= l1_ratio <= 1.0:
        raise ValueError("l1_ratio must lie in [0, 1]")
    n, d = X.shape
    Z, mean, scale = standardize(X)
    intercept = float(y.mean())
    yc = y - intercept
    coef = np.zeros(d)
    col_sq = (Z**2).sum(axis=0) / n
    l1 = alpha * l1_ratio
    l2 = alpha * (1.0 - l1_ratio)
    resid = yc.copy()
    trace: list[float] = []
    if record_objective:
        trace.append(enet_objective(Z, yc, coef, alpha, l1_ratio))
    # OLS (alpha == 0) has no informative dual; fall back to coefficient change.
    scale_y = max(float(yc @ yc) / max(n, 1), 1e-12)
    gap = np.inf
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        max_change = 0.0
        max_coef = 0.0
        for j in range(d):
            if col_sq[j] == 0.0:
                continue
            old = coef[j]
            rho = float(Z[:, j] @ resid) / n + col_sq[j] * old
            new = soft_threshold(rho, l1) / (col_sq[j] + l2)
            if new != old:
                resid -= Z[:, j] * (new - old)
                coef[j] = new
            max_change = max(max_change, abs(new - old))
            max_coef = max(max_coef, abs(new))
        if record_objective:
            trace.append(enet_objective(Z, yc, coef, alpha, l1_ratio))
        if alpha > 0:
            gap = duality_gap(Z, yc, coef, alpha, l1_ratio)
            if gap <= tol * scale_y:
                break
        elif max_change <= tol * max(max_coef, 1e-12):
            gap = 0.0
            break
    return LinearModel(coef, intercept, mean, scale, sweep, float(gap), trace)
