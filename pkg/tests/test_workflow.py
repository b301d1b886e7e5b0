import json
import math

import numpy as np
import pytest

from emamonitor.changepoint import DETECTORS, ChangePoint
from emamonitor.core import segment_blocks
from emamonitor.synthcohort import CohortConfig, GroundTruth, TruthEvent
from emamonitor.workflow import (
    INF_BUCKET,
    CfConfig,
    Cohort,
    ModelConfig,
    compare_detectors,
    compare_features,
    compare_models,
    distribution_shift_analysis,
    monitor_cohort,
    run_monitoring,
    shift_effect,
    weeks_to_change,
)

from conftest import block_from_scores

OFF = CfConfig(enabled=False)
FAST = ModelConfig(family="lasso")


def planted_block(n=45, at=30, seed=0, sigmas=3.0):
    """Integer scores around 20 with a drop of ``sigmas`` pre-change std at ``at``."""
    r = np.random.default_rng(seed)
    base = np.rint(20 + r.normal(0, 1, n))
    base[at:] -= sigmas * np.std(base[:at], ddof=1)
    return block_from_scores(np.clip(np.rint(base), 0, 30).astype(int), pid=f"s{seed}")


def near_truth(rep, at=30):
    return any(abs(i - at) <= 2 for i in rep.alert_indices())


@pytest.mark.parametrize("n", [15, 20, 21, 22, 47, 100])
def test_number_of_weeks(n):
    rep = run_monitoring(block_from_scores([(k * 7) % 30 for k in range(n)]), FAST, cf_cfg=OFF)
    assert len(rep.steps) == (n - 12) // 3


def test_short_block_skipped():
    rep = run_monitoring(block_from_scores([10, 12] * 7), FAST, cf_cfg=OFF)
    assert rep.skipped and rep.steps == []


def test_flat_block_never_alerts():
    rep = run_monitoring(block_from_scores([14] * 40), cf_cfg=CfConfig())
    assert rep.n_alerts == 0 and rep.n_explanations == 0


def test_noiseless_step_alerts_at_truth():
    scores = [20, 21] * 15 + [17, 18] * 8
    rep = run_monitoring(block_from_scores(scores), FAST, cf_cfg=OFF)
    assert near_truth(rep)


def test_planted_shift_alert_rate():
    hits = sum(near_truth(run_monitoring(planted_block(seed=s), FAST, cf_cfg=OFF)) for s in range(100))
    assert hits >= 65


@pytest.mark.xfail(strict=True, reason="estimated index can fall 1-2 points before the truth, outside the "
                                       "6-point alert window at the only week where the change is recent")
def test_planted_shift_alerts_every_realization():
    assert all(near_truth(run_monitoring(planted_block(seed=s), FAST, cf_cfg=OFF)) for s in range(20))


def test_explanation_iff_alert_and_counts():
    reports = monitor_cohort([planted_block(seed=s) for s in range(3)], FAST, cf_cfg=CfConfig(k=3))
    assert any(r.n_alerts for r in reports)
    for rep in reports:
        for s in rep.steps:
            assert (s.explanation is not None) == s.alert
            assert len(s.predictions) == 3
        assert rep.n_explanations <= rep.n_alerts <= rep.n_change_points
        d = rep.to_dict()
        assert d["totals"]["alerts"] == sum(s["alert"] for s in d["steps"])


def test_history_is_observed_truth():
    b = planted_block(seed=4)
    rep = run_monitoring(b, FAST, cf_cfg=OFF)
    for s in rep.steps:
        assert s.observed == [float(v) for v in b.scores[s.origin:s.origin + 3]]
        assert s.train_max_t < s.test_min_t


def test_monitoring_deterministic():
    b = planted_block(seed=2)
    a = run_monitoring(b, cf_cfg=CfConfig(k=3))
    c = run_monitoring(b, cf_cfg=CfConfig(k=3))
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(c.to_dict(), sort_keys=True)


# -- model and feature tables -----------------------------------------------------


def test_compare_models_shape(small_cohort):
    fams = ("mean", "lasso")
    rows = compare_models(small_cohort, fams)
    assert [r.name for r in rows] == list(fams)
    for r in rows:
        assert r.ci_low <= r.mean_mae <= r.ci_high and r.n_blocks > 0


def test_baseline_constant_series_zero_mae():
    rows = compare_models([block_from_scores([9] * 40)], ("mean",))
    assert rows[0].mean_mae == 0.0


def test_compare_features_rows_and_determinism(small_cohort):
    a = compare_features(small_cohort, "lasso")
    b = compare_features(small_cohort, "lasso")
    assert [r.name for r in a] == ["all_emas", "sum_score", "sensors"]
    assert a == b


# -- detector comparison --------------------------------------------------------------


def _truth_for(blocks, index):
    t = GroundTruth()
    for b in blocks:
        t.events[b.block_id] = [TruthEvent(b.block_id, index, "decrease", 3.0, 0)]
    return t


def test_perfect_and_silent_detectors(monkeypatch):
    blocks = [planted_block(seed=s) for s in range(3)]

    def oracle(series, cfg):
        return [ChangePoint(index=30, pre_mean=20.0, post_mean=17.0, statistic=9.0, significant=True,
                            direction="decrease")] if len(series) > 30 else []

    monkeypatch.setitem(DETECTORS, "oracle", oracle)
    monkeypatch.setitem(DETECTORS, "silent", lambda series, cfg: [])
    rows = compare_detectors(Cohort(blocks, _truth_for(blocks, 30)), ("oracle", "silent"), FAST)
    perfect, silent = rows
    assert perfect.recall == 1.0 and perfect.precision == 1.0
    assert silent.recall == 0.0 and silent.n_predicted == 0


def test_compare_detectors_needs_truth():
    with pytest.raises(ValueError):
        compare_detectors(Cohort([planted_block()]), ("cusum",), FAST)


# -- distribution shift ------------------------------------------------------------------


@pytest.mark.parametrize("origin,changes,expected", [
    (12, [], INF_BUCKET), (12, [5], INF_BUCKET), (12, [12], 0), (12, [14], 0),
    (12, [15], 1), (12, [30, 24], 4),
])
def test_weeks_to_change(origin, changes, expected):
    assert weeks_to_change(origin, changes) == expected


def test_no_change_points_single_inf_bucket():
    blocks = [block_from_scores([(k * 5) % 30 for k in range(30)], pid="z")]
    reports = monitor_cohort(blocks, FAST, cf_cfg=OFF)
    rows = distribution_shift_analysis(reports, GroundTruth())
    assert [r.weeks_to_change for r in rows] == [INF_BUCKET]
    assert rows[0].n == len(reports[0].steps)


def test_buckets_sorted_descending():
    b = planted_block(n=60, at=45)
    rows = distribution_shift_analysis(monitor_cohort([b], FAST, cf_cfg=OFF), _truth_for([b], 45))
    keys = [r.weeks_to_change for r in rows]
    assert keys[0] == INF_BUCKET
    ints = keys[1:]
    assert ints == sorted(ints, reverse=True)
    near, far = shift_effect(rows)
    assert not math.isnan(near) and not math.isnan(far)


def test_cohort_blocks_are_monitorable():
    from emamonitor.synthcohort import generate_cohort

    emas, sensors, _ = generate_cohort(CohortConfig(n_patients=3, seed=1))
    for b in segment_blocks(emas, sensors=sensors):
        assert len(b) >= 15
