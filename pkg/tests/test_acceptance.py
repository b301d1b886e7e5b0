"""Primary acceptance criteria, one test each.

Each test records a PASS/FAIL line with the measured values; the lines are
printed in the terminal summary.
"""

import json
import time

import numpy as np
import pytest

from emamonitor.changepoint import Segment, bocpd, cusum_locate
from emamonitor.cli import main
from emamonitor.core import ITEM_NAMES, build_lag_features, split_block
from emamonitor.counterfactual import (
    KDTree,
    build_query,
    generate_genetic,
    generate_kdtree,
    generate_random,
    nearest_linear,
    score_set,
)
from emamonitor.forecast import (
    fit_enet,
    forward_folds,
    huber_loss,
    huber_negative_gradient,
    rolling_origin_evaluate,
    squared_loss,
    squared_negative_gradient,
)
from emamonitor.synthcohort import CohortConfig
from emamonitor.workflow import (
    CfConfig,
    cohort_forecasts,
    cohort_from_config,
    compare_detectors,
    compare_models,
    distribution_shift_analysis,
    monitor_cohort,
    run_monitoring,
    shift_cohort_config,
    shift_effect,
)

from conftest import ACCEPTANCE
from test_changepoint import brute_locate

START = time.time()


def record(name, ok, detail):
    ACCEPTANCE.append((name, bool(ok), detail))
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def cohort():
    """Default synthetic cohort: 44 patients, 2-sigma planted decreases."""
    return cohort_from_config(CohortConfig(seed=0))


@pytest.fixture(scope="module")
def forecasts(cohort):
    return cohort_forecasts(cohort)


def test_01_cusum_oracle_equivalence():
    rng = np.random.default_rng(1)
    hits = 0
    for _ in range(1000):
        n = int(rng.integers(5, 31))  # segments hold at least 5 points
        y = rng.normal(size=n)
        if rng.random() < 0.5:
            y[int(rng.integers(1, n)):] += rng.normal(0, 3)
        if rng.random() < 0.3:
            y = np.rint(y * 2)
        i = int(rng.integers(0, 50))
        hits += cusum_locate(Segment(y, i)) == brute_locate(y, i)
    record("cusum oracle equivalence", hits == 1000, f"{hits}/1000 exact index matches")


def test_02_bocpd_normalization():
    rng = np.random.default_rng(2)
    z = np.concatenate([rng.normal(0, 1, 250), rng.normal(3, 1, 250)])
    res = bocpd(z)
    err = max(abs(float(p.sum()) - 1.0) for p in res.posterior)
    record("bocpd normalization", err <= 1e-9 and len(res.posterior) == 500, f"max |sum - 1| = {err:.2e}")


def test_03_detector_reproduction(cohort, forecasts):
    rows = {r.detector: r for r in compare_detectors(cohort, ("cusum_sliding", "bocpd"), forecasts=forecasts)}
    sliding, bayes = rows["cusum_sliding"].recall, rows["bocpd"].recall
    ok = sliding >= 0.60 and bayes >= sliding
    record("detector directional reproduction", ok,
           f"sliding recall {sliding:.3f} (>= 0.60: {sliding >= 0.60}), "
           f"bocpd recall {bayes:.3f} (>= sliding: {bayes >= sliding})")


def test_04_forecast_reproduction(cohort):
    mae = {r.name: r.mean_mae for r in compare_models(cohort)}
    beats_baseline = mae["gbrt"] < mae["mean"]
    nonlinear_ok = max(mae["random_forest"], mae["gbrt"]) <= min(mae["lasso"], mae["elastic_net"]) + 0.05
    detail = ", ".join(f"{k} {v:.3f}" for k, v in mae.items())
    record("forecasting directional reproduction", beats_baseline and nonlinear_ok, detail)


def test_05_gradient_checks():
    rng = np.random.default_rng(5)
    h, delta = 1e-6, 1.3
    r = rng.normal(0, 2.5, 400)
    r = r[np.abs(np.abs(r) - delta) > 1e-3][:100]  # keep clear of the Huber kink
    fd_huber = (huber_loss(r + h, delta) - huber_loss(r - h, delta)) / (2 * h)
    fd_sq = (squared_loss(r + h) - squared_loss(r - h)) / (2 * h)
    worst = max(
        float(np.max(np.abs(fd_huber - huber_negative_gradient(r, delta)) / np.maximum(np.abs(fd_huber), 1e-12))),
        float(np.max(np.abs(fd_sq - squared_negative_gradient(r)) / np.maximum(np.abs(fd_sq), 1e-12))),
    )
    record("boosting gradient checks", worst <= 1e-5 and len(r) == 100, f"max relative error {worst:.2e}")


def test_06_lasso_closed_form():
    rng = np.random.default_rng(6)
    lasso_err = ridge_err = 0.0
    for _ in range(100):
        n = int(rng.integers(10, 60))
        x = rng.normal(0, rng.uniform(0.5, 3), n)
        y = 2.0 * x * rng.normal() + rng.normal(0, 1, n)
        alpha = float(rng.uniform(0, 2))
        z = (x - x.mean()) / x.std()
        rho = float(z @ (y - y.mean())) / n
        expected = np.sign(rho) * max(abs(rho) - alpha, 0.0)
        lasso_err = max(lasso_err, abs(fit_enet(x[:, None], y, alpha, 1.0).coef[0] - expected))
        ridge_err = max(ridge_err, abs(fit_enet(x[:, None], y, alpha, 0.0).coef[0] - rho / (1 + alpha)))
    record("lasso/ridge closed form", lasso_err <= 1e-6 and ridge_err <= 1e-6,
           f"lasso max err {lasso_err:.1e}, ridge max err {ridge_err:.1e}")


def _alert_queries(cohort, forecasts, limit=30):
    out = []
    for block in cohort.blocks:
        fc = forecasts.get(block.block_id)
        if fc is None:
            continue
        rep = run_monitoring(block, cf_cfg=CfConfig(enabled=False), forecasts=fc)
        for s, model in zip(rep.steps, fc.models):
            if s.alert:
                history = block.head(s.origin)
                q, _, _ = build_query(history, model, s.alert_cp)
                out.append((q, build_lag_features(history, model.n_lags, model.feature_set)))
        if len(out) >= limit:
            break
    return out[:limit]


def test_07_cfe_metric_properties(cohort, forecasts):
    queries = _alert_queries(cohort, forecasts)
    validity, reachable, rnd_sp, gen_sp = [], 0, [], []
    for n, (q, ref) in enumerate(queries):
        if not generate_kdtree(q, ref).counterfactuals:
            continue  # no historical instance reaches the desired range
        reachable += 1
        rnd = generate_random(q, seed=n).counterfactuals
        gen = generate_genetic(q, seed=n).counterfactuals
        validity.append(score_set(q.x, rnd, q).validity if rnd else 0.0)
        rnd_sp.append(score_set(q.x, rnd, q).sparsity if rnd else 0.0)
        gen_sp.append(score_set(q.x, gen, q).sparsity)
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(100):
        q, ref = queries[int(rng.integers(len(queries)))]
        x = ref.X[int(rng.integers(ref.n))] + rng.integers(-1, 2, ref.d)
        k = int(rng.integers(1, 10))
        ranges = q.ranges
        mismatches += KDTree(ref.X, ranges).query(x, k) != nearest_linear(ref.X, x, ranges, k)
    v, rs, gs = float(np.mean(validity)), float(np.mean(rnd_sp)), float(np.mean(gen_sp))
    ok = reachable >= 10 and v == 1.0 and rs >= gs and mismatches == 0
    record("counterfactual metric properties", ok,
           f"{reachable} reachable alerts; random validity {v:.3f}; sparsity random {rs:.3f} vs genetic {gs:.3f}; "
           f"kd-tree mismatches {mismatches}/100")


def test_08_causal_recovery(cohort, forecasts):
    needed, everything = [], []
    for block in cohort.blocks:
        fc = forecasts.get(block.block_id)
        if fc is None:
            continue
        item = ITEM_NAMES[cohort.truth.causal_item[block.block_id]]
        rep = run_monitoring(block, forecasts=fc)
        for s in rep.steps:
            ex = s.explanation
            if ex is None or not ex.counterfactuals:
                continue
            frac = float(np.mean([any(n.rsplit("_lag", 1)[0] == item for n in cf.changed)
                                  for cf in ex.counterfactuals]))
            everything.append(frac)
            if ex.original_prediction < ex.desired_range[0]:
                needed.append(frac)
    rate = float(np.mean(needed)) if needed else float("nan")
    record("causal item recovery", len(needed) >= 20 and rate >= 0.80,
           f"{rate:.3f} over {len(needed)} alerts whose forecast is outside the desired range "
           f"(all {len(everything)} alerts: {np.mean(everything):.3f})")


def test_09_distribution_shift():
    wins, pairs = 0, []
    for seed in range(20):
        c = cohort_from_config(shift_cohort_config(seed=seed, n_patients=12))
        reports = monitor_cohort(c, cf_cfg=CfConfig(enabled=False))
        near, far = shift_effect(distribution_shift_analysis(reports, c.truth))
        wins += near > far
        pairs.append(f"{near:.2f}/{far:.2f}")
    record("distribution-shift effect", wins >= 19,
           f"near > far in {wins}/20 seeds (near/far MAE: {', '.join(pairs[:5])}, ...)")


def test_10_no_leakage(cohort, forecasts):
    violations = checked = 0
    for block in cohort.blocks:
        try:
            train, _ = split_block(block)
            folds, _ = forward_folds(train)
        except Exception:
            continue
        for f in folds:
            checked += 1
            violations += not f.train_max_t < f.valid_min_t
        for o in rolling_origin_evaluate(block, "lasso").origins:
            checked += 1
            violations += not o.train_max_t < o.test_min_t
        fc = forecasts.get(block.block_id)
        if fc is None:
            continue
        for o, model in zip(fc.origins, fc.models):
            checked += 1
            violations += not model.train_end_t < block.times[o]
    record("no leakage", violations == 0 and checked > 0, f"{violations} violations in {checked} checks")


def test_11_end_to_end_determinism(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"cohort": {"n_patients": 8}}))
    names = ("reports.json", "summary.json", "detections.csv", "weekly_predictions.csv",
             "explanation_deltas.csv", "distribution_shift.csv")
    for d in ("a", "b"):
        assert main(["monitor", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / d)]) == 0
    same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names]
    record("end-to-end determinism", all(same), f"{sum(same)}/{len(names)} output files byte-identical")


def test_12_runtime_budget():
    elapsed = time.time() - START
    assert elapsed < 600, f"acceptance suite took {elapsed:.0f}s"
