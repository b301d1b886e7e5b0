"""Bayesian online change-point detection with a Normal-Inverse-Gamma model.

Run length here counts the observations in the current run *including* the
latest one, so after observing x_t the support is 1..t+1 and the current run
starts at index t - run_length + 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln


@dataclass(frozen=True)
class NIGPrior:
    mu: float = 0.0
    kappa: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0

    @classmethod
    def from_window(cls, window, kappa: float = 1.0, alpha: float = 1.0, min_var: float = 1e-6) -> "NIGPrior":
        w = np.asarray(window, dtype=float)
        var = float(np.var(w, ddof=1)) if len(w) > 1 else 1.0
        return cls(mu=float(w.mean()), kappa=kappa, alpha=alpha, beta=max(var, min_var))


@dataclass
class BocpdResult:
    posterior: list[np.ndarray]  # posterior[t][l-1] = P(run length = l | x_0..x_t)
    map_run_length: np.ndarray
    change_points: list[int]  # start indices of new runs
    emitted_at: list[int]  # time step at which each change point was emitted

    def map_segmentation(self) -> list[int]:
        """Run starts found by walking the MAP run length back from the last step."""
        starts = []
        t = len(self.map_run_length) - 1
        while t >= 0:
            s = t - int(self.map_run_length[t]) + 1
            if s <= 0:
                break
            starts.append(s)
            t = s - 1
        return starts[::-1]


def _student_logpdf(x: float, mu, kappa, alpha, beta) -> np.ndarray:
    df = 2.0 * alpha
    scale2 = beta * (kappa + 1.0) / (alpha * kappa)
    z = (x - mu) ** 2 / (df * scale2)
    return (
        gammaln(0.5 * (df + 1.0))
        - gammaln(0.5 * df)
        - 0.5 * np.log(np.pi * df * scale2)
        - 0.5 * (df + 1.0) * np.log1p(z)
    )


def bocpd(
    series,
    hazard_lambda: float = 30.0,
    prior: NIGPrior | None = None,
    prior_window: int = 12,
    drop_ratio: float = 0.5,
) -> BocpdResult:
    """Run-length filtering with constant hazard 1/hazard_lambda.

    A change point is emitted at step t when the MAP run length falls below
    ``drop_ratio`` times its previous value; the reported index is the start
    of the new MAP run. ``prior`` defaults to one fitted on the first
    ``prior_window`` observations.
    """
    x = np.asarray(series, dtype=float)
    T = len(x)
    if T < 2:
        raise ValueError("bocpd needs at least two observations")
    if prior is None:
        prior = NIGPrior.from_window(x[: max(2, min(prior_window, T))])
    log_h = -np.log(hazard_lambda)
    log_1mh = np.log1p(-1.0 / hazard_lambda)

    # Posterior parameters for runs of length 1..t+1 after seeing x_t.
    mu = np.array([(prior.kappa * prior.mu + x[0]) / (prior.kappa + 1.0)])
    kappa = np.array([prior.kappa + 1.0])
    alpha = np.array([prior.alpha + 0.5])
    beta = np.array([prior.beta + prior.kappa * (x[0] - prior.mu) ** 2 / (2.0 * (prior.kappa + 1.0))])
    log_r = np.array([0.0])

    posterior = [np.exp(log_r)]
    map_rl = [1]
    cps: list[int] = []
    emitted: list[int] = []
    for t in range(1, T):
        xt = x[t]
        log_pred_grow = _student_logpdf(xt, mu, kappa, alpha, beta)
        log_pred_new = _student_logpdf(xt, prior.mu, prior.kappa, prior.alpha, prior.beta)
        grow = log_r + log_pred_grow + log_1mh
        new = np.logaddexp.reduce(log_r + log_h) + log_pred_new
        log_r = np.concatenate([[new], grow])
        log_r -= np.logaddexp.reduce(log_r)

        new_mu = np.concatenate([[prior.mu], mu])
        new_kappa = np.concatenate([[prior.kappa], kappa])
        new_alpha = np.concatenate([[prior.alpha], alpha])
        new_beta = np.concatenate([[prior.beta], beta])
        mu = (new_kappa * new_mu + xt) / (new_kappa + 1.0)
        beta = new_beta + new_kappa * (xt - new_mu) ** 2 / (2.0 * (new_kappa + 1.0))
        kappa = new_kappa + 1.0
        alpha = new_alpha + 0.5

        probs = np.exp(log_r)
        probs /= probs.sum()
        posterior.append(probs)
        rl = int(np.argmax(probs)) + 1
        if rl < drop_ratio * map_rl[-1]:
            cps.append(t - rl + 1)
            emitted.append(t)
        map_rl.append(rl)
    return BocpdResult(posterior, np.asarray(map_rl), cps, emitted)
