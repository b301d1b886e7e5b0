"""CSV/JSON ingestion and emission.

Readers report the offending line number on any malformed row. Writers go
through a temporary file in the target directory and an atomic rename, so
an error never leaves a partial output behind.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .core import EPOCHS, N_ITEMS, SENSOR_FEATURES, DataError, EmaRecord, SensorEpochRecord
from .synthcohort import DECREASE, INCREASE, GroundTruth, TruthEvent

EMA_COLUMNS = ("patient_id", "t_days") + tuple(f"q{k}" for k in range(1, N_ITEMS + 1))
SENSOR_COLUMNS = ("patient_id", "t_days", "epoch") + SENSOR_FEATURES
TRUTH_COLUMNS = ("block_id", "index", "direction", "magnitude", "causal_item")
DETECTION_COLUMNS = ("block_id", "detector", "index", "pre_mean", "post_mean", "statistic", "significant", "alert")


class CsvError(DataError):
    def __init__(self, path: str | Path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def fmt(value: Any) -> str:
    """Stable text form: repr for floats, lower-case booleans, empty for None."""
    if value is None:
        return ""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


# -- atomic writes ------------------------------------------------------------


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    atomic_write_text(path, csv_text(header, rows))


def write_dict_csv(path: str | Path, records: Sequence[dict[str, Any] | Any], header: Sequence[str] | None = None) -> None:
    dicts = [asdict(r) if is_dataclass(r) else dict(r) for r in records]
    if header is None:
        header = list(dicts[0]) if dicts else []
    write_csv(path, header, ([d.get(h) for h in header] for d in dicts))


def _jsonable(obj: Any) -> Any:
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def write_json(path: str | Path, obj: Any) -> None:
    atomic_write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


# -- readers --------------------------------------------------------------------


def _rows(path: str | Path, required: Sequence[str]):
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise CsvError(path, 1, "missing header row")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise CsvError(path, 1, f"missing columns {missing}")
        try:
            for row in reader:
                if None in row:
                    raise CsvError(path, reader.line_num, "too many fields")
                yield reader.line_num, row
        except csv.Error as exc:
            raise CsvError(path, reader.line_num, str(exc)) from None


def _float(path, line, name, text) -> float:
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise CsvError(path, line, f"{name}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise CsvError(path, line, f"{name}: non-finite value {text!r}")
    return v


def read_ema_csv(path: str | Path) -> list[EmaRecord]:
    """EMA rows ``patient_id,t_days,q1..q10``; rows with any empty answer are skipped."""
    out = []
    for line, row in _rows(path, EMA_COLUMNS):
        pid = (row["patient_id"] or "").strip()
        if not pid:
            raise CsvError(path, line, "empty patient_id")
        t = _float(path, line, "t_days", row["t_days"])
        raw = [(row[c] or "").strip() for c in EMA_COLUMNS[2:]]
        if any(v == "" for v in raw):
            continue
        answers = []
        for name, v in zip(EMA_COLUMNS[2:], raw):
            try:
                a = int(v)
            except ValueError:
                raise CsvError(path, line, f"{name}: not an integer answer: {v!r}") from None
            answers.append(a)
        try:
            out.append(EmaRecord(pid, t, tuple(answers)))
        except DataError as exc:
            raise CsvError(path, line, str(exc)) from None
    return out


def read_sensor_csv(path: str | Path) -> list[SensorEpochRecord]:
    """Sensor rows ``patient_id,t_days,epoch,<features>``; empty fields are missing values."""
    out = []
    for line, row in _rows(path, ("patient_id", "t_days", "epoch")):
        pid = (row["patient_id"] or "").strip()
        t = _float(path, line, "t_days", row["t_days"])
        epoch = (row["epoch"] or "").strip()
        if epoch not in EPOCHS:
            raise CsvError(path, line, f"unknown epoch {epoch!r}")
        feats = {}
        for f in SENSOR_FEATURES:
            v = (row.get(f) or "").strip()
            if v:
                feats[f] = _float(path, line, f, v)
        try:
            out.append(SensorEpochRecord(pid, t, epoch, feats))
        except DataError as exc:
            raise CsvError(path, line, str(exc)) from None
    return out


def read_truth_csv(path: str | Path) -> GroundTruth:
    truth = GroundTruth()
    for line, row in _rows(path, TRUTH_COLUMNS):
        bid = (row["block_id"] or "").strip()
        direction = (row["direction"] or "").strip()
        if direction not in (DECREASE, INCREASE):
            raise CsvError(path, line, f"unknown direction {direction!r}")
        try:
            index = int(row["index"])
            item = int(row["causal_item"])
        except (TypeError, ValueError):
            raise CsvError(path, line, "index and causal_item must be integers") from None
        ev = TruthEvent(bid, index, direction, _float(path, line, "magnitude", row["magnitude"]), item)
        truth.events.setdefault(bid, []).append(ev)
        truth.causal_item[bid] = item
    return truth


# -- writers for generated data -------------------------------------------------


def ema_rows(records: Iterable[EmaRecord]):
    for r in records:
        yield (r.patient_id, r.t, *r.answers)


def sensor_rows(records: Iterable[SensorEpochRecord]):
    for r in records:
        yield (r.patient_id, r.t, r.epoch, *(r.features.get(f) for f in SENSOR_FEATURES))


def truth_rows(truth: GroundTruth):
    for ev in truth.all_events():
        yield (ev.block_id, ev.index, ev.direction, ev.magnitude, ev.causal_item)


def write_ema_csv(path, records) -> None:
    write_csv(path, EMA_COLUMNS, ema_rows(records))


def write_sensor_csv(path, records) -> None:
    write_csv(path, SENSOR_COLUMNS, sensor_rows(records))


def write_truth_csv(path, truth: GroundTruth) -> None:
    write_csv(path, TRUTH_COLUMNS, truth_rows(truth))
