import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emamonitor.core import segment_blocks, variance_filter
from emamonitor.io import read_ema_csv, read_truth_csv, write_ema_csv, write_sensor_csv, write_truth_csv
from emamonitor.synthcohort import (
    CohortConfig,
    ar1,
    generate_cohort,
    inject_changepoint,
    inject_missingness,
)

from conftest import records_from_scores


def test_zero_noise_step():
    s = inject_changepoint(np.full(30, 20.0), 15, 3.0)
    np.testing.assert_array_equal(s, [20.0] * 15 + [17.0] * 15)


def test_increase_direction():
    s = inject_changepoint(np.zeros(10), 4, 2.0, "increase")
    assert s[:4].sum() == 0 and np.all(s[4:] == 2.0)


def test_zero_magnitude_is_identity(rng):
    x = rng.normal(size=40)
    np.testing.assert_array_equal(inject_changepoint(x, 20, 0.0), x)


@given(st.integers(1, 39), st.integers(1, 39), st.floats(0, 5), st.floats(0, 5))
def test_injections_add(i, j, a, b):
    x = np.linspace(0, 1, 40)
    both = inject_changepoint(inject_changepoint(x, i, a), j, b)
    expected = x - a * (np.arange(40) >= i) - b * (np.arange(40) >= j)
    np.testing.assert_allclose(both, expected, atol=1e-12)


@pytest.mark.parametrize("index", [0, 30, -1])
def test_injection_outside_series(index):
    with pytest.raises(IndexError):
        inject_changepoint(np.zeros(30), index, 1.0)


def test_input_not_mutated():
    x = np.zeros(10)
    inject_changepoint(x, 5, 1.0)
    assert not x.any()


def test_ar1_marginal_std():
    path = ar1(200_000, 0.6, 1.5, np.random.default_rng(0))
    assert np.std(path) == pytest.approx(1.5, rel=0.02)
    lag1 = np.corrcoef(path[:-1], path[1:])[0, 1]
    assert lag1 == pytest.approx(0.6, abs=0.01)


def test_mean_block_length():
    emas, _, _ = generate_cohort(CohortConfig(n_patients=100, second_block_prob=0.0, seed=2))
    lengths = [len(b) for b in segment_blocks(emas)]
    assert len(lengths) == 100
    assert abs(np.mean(lengths) - 91.0) <= 9.1
    assert min(lengths) >= 26 and max(lengths) <= 165


def test_change_points_interior_and_late():
    emas, _, truth = generate_cohort(CohortConfig(n_patients=30, seed=4))
    lengths = {b.block_id: len(b) for b in segment_blocks(emas)}
    events = truth.all_events()
    assert events
    for e in events:
        assert 15 <= e.index < lengths[e.block_id] - 1


def test_every_block_has_truth_entry():
    emas, _, truth = generate_cohort(CohortConfig(n_patients=10, second_block_prob=0.5, seed=8))
    ids = {b.block_id for b in segment_blocks(emas)}
    assert ids == set(truth.events) == set(truth.causal_item)


@pytest.mark.parametrize("gap,n_blocks", [(7, 2), (6, 1)])
def test_missingness_gap_size(gap, n_blocks):
    recs = records_from_scores([10, 12] * 25)
    thinned = inject_missingness(recs, [(20, gap)])
    assert len(thinned) == 50 - gap
    assert len(segment_blocks(thinned)) == n_blocks


def test_missingness_random_gaps():
    recs = records_from_scores([10] * 60)
    out = inject_missingness(recs, [3, 4, 5], seed=1)
    assert len(out) == 60 - 12
    assert inject_missingness(recs, [3, 4, 5], seed=1) == out


def test_missingness_rejects_bad_gaps():
    recs = records_from_scores([10] * 20)
    with pytest.raises(ValueError):
        inject_missingness(recs, [(0, 3)])
    with pytest.raises(ValueError):
        inject_missingness(recs, [(5, 3), (7, 3)])


def test_deterministic_and_byte_identical(tmp_path):
    cfg = CohortConfig(n_patients=5, seed=13)
    for run in ("a", "b"):
        emas, sensors, truth = generate_cohort(cfg)
        d = tmp_path / run
        d.mkdir()
        write_ema_csv(d / "ema.csv", emas)
        write_sensor_csv(d / "sensors.csv", sensors)
        write_truth_csv(d / "truth.csv", truth)
    for name in ("ema.csv", "sensors.csv", "truth.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_round_trip(tmp_path):
    emas, _, truth = generate_cohort(CohortConfig(n_patients=3, seed=6))
    write_ema_csv(tmp_path / "ema.csv", emas)
    write_truth_csv(tmp_path / "truth.csv", truth)
    assert read_ema_csv(tmp_path / "ema.csv") == emas
    back = read_truth_csv(tmp_path / "truth.csv")
    assert back.all_events() == truth.all_events()


def test_different_seeds_differ():
    a, _, _ = generate_cohort(CohortConfig(n_patients=2, seed=0))
    b, _, _ = generate_cohort(CohortConfig(n_patients=2, seed=1))
    assert a != b


def test_all_flat_cohort_is_filtered():
    emas, _, truth = generate_cohort(CohortConfig(n_patients=8, flat_fraction=1.0, seed=3))
    blocks = segment_blocks(emas)
    assert blocks and variance_filter(blocks, 0.5) == []
    assert truth.all_events() == []


def test_no_patients():
    emas, sensors, truth = generate_cohort(CohortConfig(n_patients=0))
    assert emas == [] and sensors == [] and truth.all_events() == []


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_answers_in_domain(seed):
    emas, sensors, _ = generate_cohort(CohortConfig(n_patients=2, seed=seed))
    A = np.array([r.answers for r in emas])
    assert A.min() >= 0 and A.max() <= 3
    assert all(v >= 0 for s in sensors for v in s.features.values())
