"""Command-line entry point: generate | tune | monitor | evaluate | report.

Configuration is a JSON document with one section per module::

    {"seed": 0, "threads": 1,
     "paths": {"ema": null, "sensors": null, "truth": null, "out": "out"},
     "cohort": {...}, "model": {...}, "monitor": {...},
     "counterfactual": {..., "genetic": {...}}, "evaluate": {...}}

Flags override the file. Without input paths the synthetic cohort described
by the ``cohort`` section is used.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import io as eio
from .changepoint import DETECTORS, MonitorConfig
from .core import FEATURE_SETS, DataError, segment_blocks, split_block, variance_filter
from .counterfactual import METHODS, GeneticConfig, explain_alert
from .forecast import COMPACT_GRID, FAMILIES, FULL_GRID, HyperGrid, grid_search
from .synthcohort import CohortConfig, generate_cohort
from .workflow import (
    CfConfig,
    Cohort,
    ModelConfig,
    cohort_forecasts,
    compare_detectors,
    compare_features,
    compare_models,
    distribution_shift_analysis,
    monitor_cohort,
    run_monitoring,
)

log = logging.getLogger("emamonitor")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class Paths:
    ema: str | None = None
    sensors: str | None = None
    truth: str | None = None
    out: str = "out"


@dataclass
class EvaluateConfig:
    families: list[str] = field(default_factory=lambda: list(FAMILIES))
    feature_sets: list[str] = field(default_factory=lambda: ["all_emas", "sum_score", "sensors"])
    detectors: list[str] = field(default_factory=lambda: list(DETECTORS))
    cfe_methods: list[str] = field(default_factory=lambda: ["genetic", "kdtree", "random"])
    cfe_feature_sets: list[str] = field(default_factory=lambda: ["all_emas", "sensors", "emas_sensors"])
    tune_families: list[str] = field(default_factory=lambda: ["lasso", "elastic_net", "random_forest", "gbrt"])
    tune_grid: str = "compact"  # or "full"

    def __post_init__(self) -> None:
        checks = [
            ("families", self.families, FAMILIES),
            ("feature_sets", self.feature_sets, FEATURE_SETS),
            ("detectors", self.detectors, tuple(DETECTORS)),
            ("cfe_methods", self.cfe_methods, METHODS),
            ("cfe_feature_sets", self.cfe_feature_sets, FEATURE_SETS),
            ("tune_families", self.tune_families, FAMILIES),
        ]
        for name, values, allowed in checks:
            bad = [v for v in values if v not in allowed]
            if bad:
                raise ValueError(f"{name}: unknown entries {bad}; choose from {list(allowed)}")
        if self.tune_grid not in ("compact", "full"):
            raise ValueError("tune_grid must be 'compact' or 'full'")


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    paths: Paths = field(default_factory=Paths)
    cohort: CohortConfig = field(default_factory=CohortConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    counterfactual: CfConfig = field(default_factory=CfConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)

    @property
    def out(self) -> Path:
        return Path(self.paths.out)


def _build(cls, data: Any, section: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise UsageError(f"config section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise UsageError(f"unknown keys in config section {section!r}: {unknown}")
    kw = dict(data)
    if cls is CohortConfig and "other_loading" in kw:
        kw["other_loading"] = tuple(kw["other_loading"])
    if cls is CfConfig and "genetic" in kw:
        kw["genetic"] = _build(GeneticConfig, kw["genetic"], "counterfactual.genetic")
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config section {section!r}: {exc}") from None


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    sections = {"paths": Paths, "cohort": CohortConfig, "model": ModelConfig, "monitor": MonitorConfig,
                "counterfactual": CfConfig, "evaluate": EvaluateConfig}
    unknown = sorted(set(data) - set(sections) - {"seed", "threads"})
    if unknown:
        raise UsageError(f"unknown config sections {unknown}")
    kw = {name: _build(cls, data.get(name), name) for name, cls in sections.items()}
    return RunConfig(seed=int(data.get("seed", 0)), threads=int(data.get("threads", 1)), **kw)


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.paths.out = args.out
    if cfg.threads < 1:
        raise UsageError("--threads must be at least 1")
    # the master seed drives every stochastic component
    cfg.cohort = replace(cfg.cohort, seed=cfg.seed)
    cfg.model = replace(cfg.model, seed=cfg.seed)
    cfg.counterfactual = replace(cfg.counterfactual, seed=cfg.seed)
    if args.feature_set is not None:
        if args.feature_set not in FEATURE_SETS:
            raise UsageError(f"unknown feature set {args.feature_set!r}; choose from {FEATURE_SETS}")
        cfg.model = replace(cfg.model, feature_set=args.feature_set)
    if args.cfe_method is not None:
        if args.cfe_method not in METHODS:
            raise UsageError(f"unknown counterfactual method {args.cfe_method!r}; choose from {METHODS}")
        cfg.counterfactual = replace(cfg.counterfactual, method=args.cfe_method)
    if args.detector is not None and args.detector not in DETECTORS:
        raise UsageError(f"unknown detector {args.detector!r}; choose from {sorted(DETECTORS)}")
    return cfg


# -- data --------------------------------------------------------------------


def load_cohort(cfg: RunConfig) -> Cohort:
    p = cfg.paths
    if p.ema:
        emas = eio.read_ema_csv(p.ema)
        sensors = eio.read_sensor_csv(p.sensors) if p.sensors else None
        truth = eio.read_truth_csv(p.truth) if p.truth else None
    else:
        emas, sensors, truth = generate_cohort(cfg.cohort)
    blocks = segment_blocks(emas, cadence_days=cfg.cohort.cadence_days, sensors=sensors)
    return Cohort(variance_filter(blocks), truth)


# -- commands ----------------------------------------------------------------


def cmd_generate(cfg: RunConfig) -> dict[str, Any]:
    emas, sensors, truth = generate_cohort(cfg.cohort)
    out = cfg.out
    eio.write_ema_csv(out / "ema.csv", emas)
    eio.write_sensor_csv(out / "sensors.csv", sensors)
    eio.write_truth_csv(out / "truth.csv", truth)
    return {"ema_records": len(emas), "sensor_records": len(sensors), "events": len(truth.all_events())}


def cmd_tune(cfg: RunConfig) -> dict[str, Any]:
    cohort = load_cohort(cfg)
    ev = cfg.evaluate
    source = COMPACT_GRID if ev.tune_grid == "compact" else FULL_GRID
    best_rows, cv_rows = [], []
    for block in cohort.blocks:
        try:
            train, _ = split_block(block)
        except DataError as exc:
            log.warning("skipping %s: %s", block.block_id, exc)
            continue
        for fam in ev.tune_families:
            grid = HyperGrid(fam, source[fam])
            best, table = grid_search(train, grid, cfg.model.k_folds, feature_set=cfg.model.feature_set,
                                      n_lags=cfg.model.n_lags, seed=cfg.seed, threads=cfg.threads)
            best_mae = min(r.mean_mae for r in table)
            best_rows.append((block.block_id, fam, json.dumps(best, sort_keys=True), best_mae))
            for r in table:
                cv_rows.append((block.block_id, fam, json.dumps(r.params, sort_keys=True),
                                " ".join(eio.fmt(m) for m in r.fold_maes), r.mean_mae, r.n_folds, r.reduced_folds))
    eio.write_csv(cfg.out / "best_params.csv", ("block_id", "family", "params", "cv_mae"), best_rows)
    eio.write_csv(cfg.out / "cv_table.csv",
                  ("block_id", "family", "params", "fold_maes", "mean_mae", "n_folds", "reduced_folds"), cv_rows)
    return {"blocks": len({r[0] for r in best_rows}), "rows": len(cv_rows)}


def _detections(rep, detector: str):
    best: dict[int, Any] = {}
    for s in rep.steps:
        for cp in s.change_points:
            cur = best.get(cp.index)
            if cur is None or (cp.significant, cp.statistic) > (cur.significant, cur.statistic):
                best[cp.index] = cp
    alerted = set(rep.alert_indices())
    for idx in sorted(best):
        cp = best[idx]
        yield (rep.block_id, detector, idx, cp.pre_mean, cp.post_mean, cp.statistic, cp.significant, idx in alerted)


def cmd_monitor(cfg: RunConfig, detector: str = "cusum_sliding") -> dict[str, Any]:
    cohort = load_cohort(cfg)
    reports = monitor_cohort(cohort, cfg.model, cfg.monitor, cfg.counterfactual, detector=detector,
                             threads=cfg.threads)
    out = cfg.out
    det_rows, pred_rows, delta_rows = [], [], []
    for rep, block in zip(reports, cohort.blocks):
        det_rows.extend(_detections(rep, detector))
        t = block.times
        for s in rep.steps:
            for h, (p, o) in enumerate(zip(s.predictions, s.observed)):
                idx = s.origin + h
                pred_rows.append((rep.block_id, s.week, s.origin, idx, float(t[idx]), p, o, s.alert))
            if s.explanation is not None:
                for d in s.explanation.delta_rows():
                    delta_rows.append((rep.block_id, s.week, d["alert_index"], d["method"], d["cf"], d["feature"],
                                       d["before"], d["after"], d["change"], d["original_prediction"],
                                       d["cf_prediction"]))
    summary = {
        "detector": detector,
        "blocks": len(cohort.blocks),
        "monitored_blocks": sum(r.skipped is None for r in reports),
        "weeks": sum(len(r.steps) for r in reports),
        "alerts": sum(r.n_alerts for r in reports),
        "change_points": sum(r.n_change_points for r in reports),
        "explanations": sum(r.n_explanations for r in reports),
        "blocks_with_alerts": sum(r.n_alerts > 0 for r in reports),
    }
    eio.write_json(out / "reports.json", [r.to_dict() for r in reports])
    eio.write_json(out / "summary.json", summary)
    eio.write_csv(out / "detections.csv", eio.DETECTION_COLUMNS, det_rows)
    eio.write_csv(out / "weekly_predictions.csv",
                  ("block_id", "week", "origin", "index", "t_days", "predicted", "observed", "alert"), pred_rows)
    eio.write_csv(out / "explanation_deltas.csv",
                  ("block_id", "week", "alert_index", "method", "cf", "feature", "before", "after", "change",
                   "original_prediction", "cf_prediction"), delta_rows)
    if cohort.truth is not None:
        rows = distribution_shift_analysis(reports, cohort.truth)
        eio.write_csv(out / "distribution_shift.csv", ("weeks_to_change", "mean_mae", "n"),
                      ((r.weeks_to_change, r.mean_mae, r.n) for r in rows))
    return summary


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    return (float(v.mean()), float(v.std())) if v.size else (float("nan"), float("nan"))


def counterfactual_table(cfg: RunConfig, cohort: Cohort) -> list[tuple]:
    """Counterfactual metrics per (method, feature set) over cusum alerts, as mean and std."""
    ev = cfg.evaluate
    rows = []
    off = CfConfig(enabled=False)
    for fs in ev.cfe_feature_sets:
        mcfg = replace(cfg.model, feature_set=fs)
        fcs = cohort_forecasts(cohort, mcfg, cfg.threads)
        alerts = []
        for block in cohort.blocks:
            fc = fcs.get(block.block_id)
            if fc is None:
                continue
            rep = run_monitoring(block, mcfg, cfg.monitor, off, forecasts=fc)
            for s, model in zip(rep.steps, fc.models):
                if s.alert:
                    alerts.append((block.head(s.origin), model, s.alert_cp))
        for method in ev.cfe_methods:
            metrics = []
            for history, model, cp in alerts:
                rep = explain_alert(history, model, cp, method, cfg.counterfactual.k, seed=cfg.seed,
                                    slack=cfg.counterfactual.slack, genetic=cfg.counterfactual.genetic,
                                    budget=cfg.counterfactual.budget)
                if rep.metrics is not None:
                    metrics.append(rep.metrics)
            row: list[Any] = [method, fs, len(alerts), len(metrics)]
            for name in ("validity", "redundancy", "sparsity", "proximity", "diversity"):
                row.extend(_mean_std([getattr(m, name) for m in metrics]))
            rows.append(tuple(row))
    return rows


CF_METRIC_COLUMNS = ("method", "feature_set", "alerts", "explained") + tuple(
    f"{m}_{s}" for m in ("validity", "redundancy", "sparsity", "proximity", "diversity") for s in ("mean", "std")
)


def cmd_evaluate(cfg: RunConfig) -> dict[str, Any]:
    cohort = load_cohort(cfg)
    ev = cfg.evaluate
    out = cfg.out
    score_cols = ("name", "mean_mae", "ci_low", "ci_high", "n_blocks", "n_origins")
    models = compare_models(cohort, ev.families, cfg.model.feature_set, n_lags=cfg.model.n_lags, seed=cfg.seed,
                            threads=cfg.threads)
    eio.write_dict_csv(out / "model_comparison.csv", models, score_cols)
    feats = compare_features(cohort, cfg.model.family, ev.feature_sets, params=cfg.model.params,
                             n_lags=cfg.model.n_lags, seed=cfg.seed, threads=cfg.threads)
    eio.write_dict_csv(out / "feature_comparison.csv", feats, score_cols)
    result: dict[str, Any] = {"models": len(models), "feature_sets": len(feats)}
    if cohort.truth is not None:
        dets = compare_detectors(cohort, ev.detectors, cfg.model, cfg.monitor, threads=cfg.threads)
        eio.write_dict_csv(out / "detector_comparison.csv", dets)
        result["detectors"] = len(dets)
    t3 = counterfactual_table(cfg, cohort)
    eio.write_csv(out / "counterfactual_metrics.csv", CF_METRIC_COLUMNS, t3)
    result["counterfactual_rows"] = len(t3)
    return result


def cmd_report(cfg: RunConfig) -> dict[str, Any]:
    """Collect the tables present in the output directory into report.md."""
    out = cfg.out
    parts = ["# Run report", ""]
    found = []
    summary = out / "summary.json"
    if summary.exists():
        found.append(summary.name)
        parts += ["## Monitoring summary", "", "```", summary.read_text(encoding="utf-8").strip(), "```", ""]
    for name in ("model_comparison.csv", "feature_comparison.csv", "detector_comparison.csv",
                 "counterfactual_metrics.csv", "distribution_shift.csv", "best_params.csv"):
        path = out / name
        if path.exists():
            found.append(name)
            parts += [f"## {name}", "", "```", path.read_text(encoding="utf-8").strip(), "```", ""]
    if not found:
        raise DataError(f"no results found in {out}; run monitor or evaluate first")
    eio.atomic_write_text(out / "report.md", "\n".join(parts))
    return {"sections": found}


# -- entry point -----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors exit with 1
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="emamonitor", description="EMA forecasting, change-point alerts and counterfactual explanations")
    p.add_argument("command", choices=("generate", "tune", "monitor", "evaluate", "report"))
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="maximum worker threads")
    p.add_argument("--out", help="output directory")
    p.add_argument("--detector", help=f"one of {sorted(DETECTORS)}")
    p.add_argument("--cfe-method", dest="cfe_method", help=f"one of {list(METHODS)}")
    p.add_argument("--feature-set", dest="feature_set", help=f"one of {list(FEATURE_SETS)}")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        cfg = apply_overrides(load_config(args.config), args)
        if args.command == "generate":
            result = cmd_generate(cfg)
        elif args.command == "tune":
            result = cmd_tune(cfg)
        elif args.command == "monitor":
            result = cmd_monitor(cfg, args.detector or "cusum_sliding")
        elif args.command == "evaluate":
            result = cmd_evaluate(cfg)
        else:
            result = cmd_report(cfg)
    except UsageError as exc:
        print(f"emamonitor: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"emamonitor: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"emamonitor: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
