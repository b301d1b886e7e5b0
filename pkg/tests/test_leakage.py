"""Chronology checks: nothing at or after a test point is ever used to fit or predict it."""

import numpy as np
import pytest

from emamonitor.core import build_lag_features, split_block
from emamonitor.forecast import forecast, forward_folds, rolling_origin_evaluate
from emamonitor.workflow import CfConfig, ModelConfig, block_forecasts, run_monitoring

from conftest import block_from_scores

FAMILIES = ("lasso", "gbrt")


def test_forward_folds_chronological(small_cohort):
    violations = 0
    for block in small_cohort.blocks:
        train, _ = split_block(block)
        folds, _ = forward_folds(train)
        fm = build_lag_features(train, 3)
        for f in folds:
            violations += not f.train_max_t < f.valid_min_t
            # row r of the lag matrix predicts block index r + n_lags
            fit_rows = fm.t_index[: f.train_end - 3]
            valid_rows = fm.t_index[f.train_end - 3: f.valid_end - 3]
            violations += not fit_rows.max() < valid_rows.min()
            violations += not fit_rows.max() <= f.train_max_t
    assert violations == 0


@pytest.mark.parametrize("family", FAMILIES)
def test_rolling_origins_chronological(small_cohort, family):
    violations = 0
    for block in small_cohort.blocks:
        res = rolling_origin_evaluate(block, family)
        for o in res.origins:
            violations += not o.train_max_t < o.test_min_t
    assert violations == 0


def test_weekly_monitoring_chronological(small_cohort):
    violations = 0
    for block in small_cohort.blocks:
        fc = block_forecasts(block, ModelConfig(family="lasso"))
        for o, model in zip(fc.origins, fc.models):
            violations += not model.train_end_t < block.times[o]
        rep = run_monitoring(block, cf_cfg=CfConfig(enabled=False), forecasts=fc)
        violations += sum(not s.train_max_t < s.test_min_t for s in rep.steps)
    assert violations == 0


@pytest.mark.parametrize("family", FAMILIES)
def test_future_values_do_not_change_forecasts(rng, family):
    """Scrambling everything after an origin leaves that origin's forecast unchanged."""
    scores = rng.integers(5, 25, 40)
    scrambled = scores.copy()
    scrambled[24:] = rng.integers(0, 31, 16)
    a = block_forecasts(block_from_scores(scores), ModelConfig(family=family))
    b = block_forecasts(block_from_scores(scrambled), ModelConfig(family=family))
    for o, pa, pb in zip(a.origins, a.predictions, b.predictions):
        if o <= 24:
            np.testing.assert_array_equal(pa, pb)


def test_forecast_uses_only_given_history(rng):
    scores = rng.integers(5, 25, 30)
    block = block_from_scores(scores)
    head = block.head(20)
    model_fm = build_lag_features(head, 3)
    from emamonitor.forecast import fit_model

    model = fit_model(model_fm, "lasso")
    assert model.train_end_t == head.times[-1]
    np.testing.assert_array_equal(forecast(model, head, 3), forecast(model, block.head(20), 3))
