from __future__ import annotations

import numpy as np
import pytest

from emamonitor.core import EmaRecord, segment_blocks
from emamonitor.synthcohort import CohortConfig
from emamonitor.workflow import cohort_from_config


def answers_for(score: int) -> tuple[int, ...]:
    """Some answer vector with the given integer sum score."""
    score = int(score)
    if not 0 <= score <= 30:
        raise ValueError(score)
    pos = [0] * 5
    neg = [3] * 5
    rest = score
    for q in range(5):
        take = min(3, rest)
        pos[q] = take
        rest -= take
    for q in range(5):
        take = min(3, rest)
        neg[q] = 3 - take
        rest -= take
    return tuple(pos + neg)


def records_from_scores(scores, pid="p", cadence=2.5, t0=0.0) -> list[EmaRecord]:
    return [EmaRecord(pid, t0 + cadence * k, answers_for(int(round(s)))) for k, s in enumerate(scores)]


def block_from_scores(scores, pid="p", cadence=2.5):
    blocks = segment_blocks(records_from_scores(scores, pid, cadence), min_len=1, cadence_days=cadence)
    assert len(blocks) == 1
    return blocks[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cohort():
    return cohort_from_config(CohortConfig(n_patients=6, seed=3))


ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
