"""CSV ingestion and machine-readable outputs.

Loaders accept plain headered CSV. Unparseable or empty cells become NaN
and are then repaired per the data's nature: time-series columns are
forward-filled then back-filled, tabular rows are dropped; either way the
repair count is reported, never silent. All writers are atomic
(write-temp, rename) and format floats with shortest round-trip repr so
identical data yields identical bytes.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .pinn import DischargeProfile
from .sensorcat import SensorSeries


class DataError(Exception):
    pass


def _parse_cell(text: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        return np.nan


def _parse_timestamp(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        try:
            return datetime.fromisoformat(text).timestamp()
        except ValueError as exc:
            raise DataError(f"unparseable timestamp {text!r}") from exc


def _read_csv(path) -> tuple:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    if not rows:
        raise DataError(f"{path}: no data rows")
    return [h.strip() for h in header], rows


def _require(header, columns, path):
    missing = [c for c in columns if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns: {', '.join(missing)}")


@dataclass
class Table:
    """Loaded numeric table plus the repair bookkeeping."""

    X: np.ndarray
    y: np.ndarray
    feature_names: list
    target_names: list
    imputed: int
    dropped: int


def load_table(path, features, targets, kind: str = "tabular") -> Table:
    """Read feature/target columns; repair bad cells per `kind`.

    kind "timeseries" forward-fills then back-fills each column; "tabular"
    drops affected rows.
    """
    if kind not in ("tabular", "timeseries"):
        raise ValueError(f"unknown table kind {kind!r}")
    header, rows = _read_csv(path)
    features, targets = list(features), list(targets)
    _require(header, features + targets, path)
    cols = [header.index(c) for c in features + targets]
    data = np.empty((len(rows), len(cols)))
    for i, row in enumerate(rows):
        for j, c in enumerate(cols):
            data[i, j] = _parse_cell(row[c]) if c < len(row) else np.nan

    bad = ~np.isfinite(data)
    imputed = dropped = 0
    if bad.any():
        if kind == "timeseries":
            imputed = int(bad.sum())
            for j in range(data.shape[1]):
                col = data[:, j]
                mask = np.isfinite(col)
                if not mask.any():
                    raise DataError(f"{path}: column {(features + targets)[j]!r} has no numbers")
                idx = np.where(mask, np.arange(len(col)), -1)
                np.maximum.accumulate(idx, out=idx)
                col[:] = np.where(idx >= 0, col[np.maximum(idx, 0)], np.nan)
                first = np.flatnonzero(np.isfinite(col))[0]
                col[:first] = col[first]
        else:
            keep = ~bad.any(axis=1)
            dropped = int((~keep).sum())
            data = data[keep]
            if len(data) == 0:
                raise DataError(f"{path}: every row has unparseable cells")
    nf = len(features)
    return Table(data[:, :nf], data[:, nf:], features, targets, imputed, dropped)


def load_series(path, columns) -> tuple:
    """A whole numeric time series (all listed columns), forward/back-filled."""
    table = load_table(path, columns, [], kind="timeseries")
    return table.X, table.imputed


def load_sensor_csv(path, prefixes=("TS_", "TF_")) -> dict:
    """Sensor field: first column timestamps, one sensor per further column.

    Returns {prefix: [SensorSeries, ...]} grouped by column-name prefix;
    columns matching no prefix are ignored. NaN cells forward/back-fill.
    """
    header, rows = _read_csv(path)
    if len(header) < 2:
        raise DataError(f"{path}: need a timestamp column plus sensor columns")
    t = np.array([_parse_timestamp(r[0]) for r in rows])
    groups: dict = {p: [] for p in prefixes}
    for j, name in enumerate(header[1:], start=1):
        prefix = next((p for p in prefixes if name.startswith(p)), None)
        if prefix is None:
            continue
        col = np.array([_parse_cell(r[j]) if j < len(r) else np.nan for r in rows])
        mask = np.isfinite(col)
        if not mask.any():
            raise DataError(f"{path}: sensor column {name!r} has no numbers")
        idx = np.where(mask, np.arange(len(col)), -1)
        np.maximum.accumulate(idx, out=idx)
        col = np.where(idx >= 0, col[np.maximum(idx, 0)], np.nan)
        first = np.flatnonzero(np.isfinite(col))[0]
        col[:first] = col[first]
        groups[prefix].append(SensorSeries(name, t, col))
    if all(not v for v in groups.values()):
        raise DataError(f"{path}: no sensor columns matched prefixes {prefixes}")
    return groups


def load_battery_csv(path) -> list:
    """Discharge profiles from rows (discharge, t, current, voltage)."""
    header, rows = _read_csv(path)
    _require(header, ["discharge", "t", "current", "voltage"], path)
    cols = {name: header.index(name) for name in ("discharge", "t", "current", "voltage")}
    by_discharge: dict = {}
    for row in rows:
        key = int(float(row[cols["discharge"]]))
        by_discharge.setdefault(key, []).append(
            (_parse_timestamp(row[cols["t"]]),
             _parse_cell(row[cols["current"]]),
             _parse_cell(row[cols["voltage"]]))
        )
    profiles = []
    for key in sorted(by_discharge):
        recs = sorted(by_discharge[key])
        t, i, v = (np.array(col) for col in zip(*recs))
        if not (np.isfinite(i).all() and np.isfinite(v).all()):
            raise DataError(f"{path}: discharge {key} has unparseable cells")
        profiles.append(DischargeProfile(t, i, v))
    return profiles


# -- writers -------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float) or isinstance(v, np.floating):
        return repr(float(v))
    return str(v)


def write_atomic_text(path, text: str) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as f:
        f.write(text)
    os.replace(tmp, path)


def write_csv(path, header, rows) -> None:
    """Atomic CSV with shortest-round-trip float formatting."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    write_atomic_text(path, "\n".join(lines) + "\n")


def write_json(path, payload) -> None:
    write_atomic_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_rows_csv(path, dict_rows) -> None:
    """CSV from homogeneous dict rows, keys in first-row order."""
    if not dict_rows:
        raise ValueError("no rows to write")
    header = list(dict_rows[0].keys())
    write_csv(path, header, [[row[k] for k in header] for row in dict_rows])


def write_matrix_csv(path, header, matrix) -> None:
    write_csv(path, header, np.asarray(matrix).tolist())


def write_sensor_csv(path, channels) -> None:
    """Sensor field: timestamp column plus one column per channel."""
    t = channels[0].timestamps
    header = ["timestamp"] + [c.sensor_id for c in channels]
    rows = np.column_stack([t] + [c.values for c in channels])
    write_csv(path, header, rows.tolist())


def write_battery_csv(path, profiles) -> None:
    header = ["discharge", "t", "current", "voltage"]
    rows = []
    for k, p in enumerate(profiles):
        for n in range(len(p)):
            rows.append([k, p.t[n], p.current[n], p.voltage[n]])
    write_csv(path, header, rows)
