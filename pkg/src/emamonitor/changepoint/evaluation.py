"""Delay-tolerant scoring of detected change points."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True)
class DetectionEval:
    recall: float
    precision: float
    f1: float
    matched: int
    n_truth: int
    n_predicted: int
    delay_tolerance: int = 2
    truth_empty: bool = False


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def match_count(predicted: Sequence[int], truth: Sequence[int], delay_tolerance: int = 2) -> int:
    """Greedy one-to-one matching: truth t claims the earliest free prediction in [t, t + tol]."""
    preds = sorted(predicted)
    used = [False] * len(preds)
    matched = 0
    for t in sorted(truth):
        for k, p in enumerate(preds):
            if used[k] or p < t:
                continue
            if p > t + delay_tolerance:
                break
            used[k] = True
            matched += 1
            break
    return matched


def from_counts(matched: int, n_truth: int, n_predicted: int, delay_tolerance: int = 2) -> DetectionEval:
    if n_truth == 0:
        # recall is undefined without truth; report 1.0 and flag it
        precision = 1.0 if n_predicted == 0 else 0.0
        return DetectionEval(1.0, precision, f1_score(precision, 1.0), 0, 0, n_predicted, delay_tolerance, True)
    recall = matched / n_truth
    precision = matched / n_predicted if n_predicted else 0.0
    return DetectionEval(recall, precision, f1_score(precision, recall), matched, n_truth, n_predicted,
                         delay_tolerance)


def evaluate_detection(predicted: Iterable[int], truth: Iterable[int], delay_tolerance: int = 2) -> DetectionEval:
    predicted = sorted(set(int(p) for p in predicted))
    truth = sorted(set(int(t) for t in truth))
    m = match_count(predicted, truth, delay_tolerance)
    return from_counts(m, len(truth), len(predicted), delay_tolerance)


def pool(evals: Iterable[DetectionEval]) -> DetectionEval:
    """Micro-average: sum matches and counts across blocks."""
    evals = list(evals)
    tol = evals[0].delay_tolerance if evals else 2
    return from_counts(
        sum(e.matched for e in evals),
        sum(e.n_truth for e in evals),
        sum(e.n_predicted for e in evals),
        tol,
    )
