import csv
import json

import pytest

from emamonitor.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from emamonitor.io import read_ema_csv, read_sensor_csv, read_truth_csv


def write_config(tmp_path, **sections):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(sections))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["generate", "--out", str(out), "--seed", "4", "--config", write_config(out, cohort={"n_patients": 5})]) == 0
    return out


def test_generate_round_trip(generated):
    emas = read_ema_csv(generated / "ema.csv")
    assert emas and read_sensor_csv(generated / "sensors.csv")
    assert read_truth_csv(generated / "truth.csv").all_events()


def test_generate_same_seed_identical(tmp_path, capsys):
    cfg = write_config(tmp_path, cohort={"n_patients": 3})
    for d in ("a", "b"):
        assert run(capsys, "generate", "--config", cfg, "--out", str(tmp_path / d), "--seed", "9")[0] == EXIT_OK
    for name in ("ema.csv", "sensors.csv", "truth.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_generate_no_patients_header_only(tmp_path, capsys):
    cfg = write_config(tmp_path, cohort={"n_patients": 0})
    code, out, _ = run(capsys, "generate", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == EXIT_OK and json.loads(out)["ema_records"] == 0
    for name in ("ema.csv", "sensors.csv", "truth.csv"):
        lines = (tmp_path / "o" / name).read_text().splitlines()
        assert len(lines) == 1 and "," in lines[0]


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["monitor", "--detector", "nope"],
    ["monitor", "--cfe-method", "nope"],
    ["monitor", "--threads", "0"],
])
def test_usage_errors(argv, capsys, tmp_path):
    code, _, err = run(capsys, *argv, "--out", str(tmp_path))
    assert code == EXIT_USAGE and "usage" in err


def test_bad_config_section(tmp_path, capsys):
    cfg = write_config(tmp_path, cohort={"n_patiens": 3})
    code, _, err = run(capsys, "generate", "--config", cfg, "--out", str(tmp_path / "o"))
    assert code == EXIT_USAGE and "n_patiens" in err


def test_malformed_csv(tmp_path, capsys):
    ema = tmp_path / "ema.csv"
    header = "patient_id,t_days," + ",".join(f"q{i}" for i in range(1, 11))
    ema.write_text(header + "\np,0.0," + ",".join(["1"] * 10) + "\np,2.5,1,1,banana,1,1,1,1,1,1,1\n")
    cfg = write_config(tmp_path, paths={"ema": str(ema)})
    out = tmp_path / "o"
    code, _, err = run(capsys, "monitor", "--config", cfg, "--out", str(out))
    assert code == EXIT_DATA
    assert ":3" in err
    assert not out.exists() or not any(out.iterdir())


def test_monitor_outputs_and_audit(generated, tmp_path, capsys):
    cfg = write_config(tmp_path, paths={k: str(generated / f"{k}.csv") for k in ("ema", "sensors", "truth")},
                       counterfactual={"k": 3, "genetic": {"generations": 10}})
    out = tmp_path / "o"
    code, stdout, _ = run(capsys, "monitor", "--config", cfg, "--out", str(out))
    assert code == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert json.loads(stdout) == summary
    reports = json.loads((out / "reports.json").read_text())
    assert summary["alerts"] == sum(r["totals"]["alerts"] for r in reports)
    assert summary["explanations"] == sum(r["totals"]["explanations"] for r in reports)
    preds = read_rows(out / "weekly_predictions.csv")
    assert len(preds) == 3 * summary["weeks"]
    alerted = [r for r in read_rows(out / "detections.csv") if r["alert"] == "True"]
    assert len({(r["block_id"], r["index"]) for r in alerted}) <= summary["alerts"]
    assert (out / "distribution_shift.csv").exists()


def test_monitor_deterministic(generated, tmp_path, capsys):
    cfg = write_config(tmp_path, paths={"ema": str(generated / "ema.csv")},
                       counterfactual={"k": 3, "genetic": {"generations": 10}})
    for d in ("a", "b"):
        assert run(capsys, "monitor", "--config", cfg, "--out", str(tmp_path / d))[0] == EXIT_OK
    for name in ("reports.json", "detections.csv", "explanation_deltas.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_flat_cohort_zero_alerts(tmp_path, capsys):
    cfg = write_config(tmp_path, cohort={"n_patients": 4, "flat_fraction": 1.0})
    code, out, _ = run(capsys, "monitor", "--config", cfg, "--out", str(tmp_path / "o"))
    summary = json.loads(out)
    assert code == EXIT_OK and summary["alerts"] == 0 and summary["explanations"] == 0


def test_tune_table_audit(generated, tmp_path, capsys):
    cfg = write_config(tmp_path, paths={"ema": str(generated / "ema.csv")},
                       evaluate={"tune_families": ["lasso", "elastic_net"]})
    out = tmp_path / "o"
    assert run(capsys, "tune", "--config", cfg, "--out", str(out))[0] == EXIT_OK
    best = read_rows(out / "best_params.csv")
    cv = read_rows(out / "cv_table.csv")
    keys = {(r["block_id"], r["family"]) for r in best}
    assert len(keys) == len(best) and {r["family"] for r in best} == {"lasso", "elastic_net"}
    for r in best:
        rows = [c for c in cv if (c["block_id"], c["family"]) == (r["block_id"], r["family"])]
        lowest = min(float(c["mean_mae"]) for c in rows)
        tied = [json.loads(c["params"]) for c in rows if float(c["mean_mae"]) == lowest]
        assert float(r["cv_mae"]) == lowest
        assert json.loads(r["params"]) in tied


def test_evaluate_and_report(generated, tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        paths={k: str(generated / f"{k}.csv") for k in ("ema", "sensors", "truth")},
        evaluate={"families": ["mean", "lasso"], "detectors": ["cusum", "baseline_zero"]},
        model={"family": "lasso"},
        counterfactual={"k": 3, "genetic": {"generations": 10}, "budget": 500},
    )
    out = tmp_path / "o"
    code, stdout, _ = run(capsys, "evaluate", "--config", cfg, "--out", str(out))
    assert code == EXIT_OK
    assert json.loads(stdout)["counterfactual_rows"] == 9
    assert len(read_rows(out / "model_comparison.csv")) == 2
    assert len(read_rows(out / "feature_comparison.csv")) == 3
    assert len(read_rows(out / "detector_comparison.csv")) == 2
    for row in read_rows(out / "counterfactual_metrics.csv"):
        if int(row["explained"]):
            for m in ("validity", "redundancy", "sparsity", "proximity", "diversity"):
                assert 0.0 <= float(row[f"{m}_mean"]) <= 1.0
    assert run(capsys, "report", "--out", str(out))[0] == EXIT_OK
    assert (out / "report.md").read_text().strip()


def test_report_without_results(tmp_path, capsys):
    assert run(capsys, "report", "--out", str(tmp_path))[0] == EXIT_DATA
