"""Per-episode / per-epoch measurements and their CSV form."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SchemaError

SCHEMA_LINE = "# schema: uavmeta-metrics/1"
COLUMNS = ("run_id", "phase", "index", "reward", "mean_aoi", "mean_power_w", "meta_loss", "epsilon", "wall_time_s")
# wall time is the only column allowed to differ between identical reruns
NONDETERMINISTIC_COLUMNS = ("wall_time_s",)


@dataclass
class MetricsRecord:
    run_id: str
    phase: str
    index: int
    reward: float
    mean_aoi: float
    mean_power_w: float
    meta_loss: float | None = None
    epsilon: float | None = None
    wall_time_s: float = 0.0


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_float(text: str, row: int, column: str, optional: bool = False):
    if text == "":
        if optional:
            return None
        raise SchemaError(f"row {row}, column {column}: missing value")
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(f"row {row}, column {column}: not a number: {text!r}") from None
    if math.isnan(value) and not optional:
        raise SchemaError(f"row {row}, column {column}: NaN")
    return value


def check_indices(records) -> None:
    """Raise SchemaError unless indices strictly increase within every run_id."""
    last = {}
    for pos, rec in enumerate(records):
        prev = last.get(rec.run_id)
        if prev is not None and rec.index <= prev:
            raise SchemaError(f"row {pos + 2}, column index: {rec.index} does not follow {prev} "
                              f"in run {rec.run_id!r}")
        last[rec.run_id] = rec.index


def records_to_csv(records) -> str:
    records = list(records)
    check_indices(records)
    buf = io.StringIO()
    buf.write(SCHEMA_LINE + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for rec in records:
        writer.writerow([_fmt(getattr(rec, c)) for c in COLUMNS])
    return buf.getvalue()


def write_metrics_csv(path, records) -> Path:
    path = Path(path)
    path.write_text(records_to_csv(records))
    return path


def read_metrics_csv(path) -> list:
    """Parse a metrics file, rejecting unknown schema versions and malformed rows."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != SCHEMA_LINE:
        found = lines[0] if lines else "<empty file>"
        raise SchemaError(f"{path}: row 0: expected {SCHEMA_LINE!r}, found {found!r}")
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header is None or tuple(header) != COLUMNS:
        raise SchemaError(f"{path}: row 1: header must be {','.join(COLUMNS)}")
    records = []
    for i, row in enumerate(reader, start=2):
        if len(row) != len(COLUMNS):
            raise SchemaError(f"{path}: row {i}: expected {len(COLUMNS)} columns, got {len(row)}")
        values = dict(zip(COLUMNS, row))
        try:
            index = int(values["index"])
        except ValueError:
            raise SchemaError(f"{path}: row {i}, column index: not an integer") from None
        records.append(MetricsRecord(
            run_id=values["run_id"],
            phase=values["phase"],
            index=index,
            reward=_parse_float(values["reward"], i, "reward"),
            mean_aoi=_parse_float(values["mean_aoi"], i, "mean_aoi"),
            mean_power_w=_parse_float(values["mean_power_w"], i, "mean_power_w"),
            meta_loss=_parse_float(values["meta_loss"], i, "meta_loss", optional=True),
            epsilon=_parse_float(values["epsilon"], i, "epsilon", optional=True),
            wall_time_s=_parse_float(values["wall_time_s"], i, "wall_time_s"),
        ))
    try:
        check_indices(records)
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    return records


def deterministic_view(csv_text: str) -> str:
    """CSV text with the wall-time column blanked, for byte-level rerun comparisons."""
    lines = csv_text.splitlines()
    out = lines[:2]
    drop = [COLUMNS.index(c) for c in NONDETERMINISTIC_COLUMNS]
    for row in csv.reader(lines[2:]):
        for j in drop:
            if j < len(row):
                row[j] = ""
        out.append(",".join(row))
    return "\n".join(out) + "\n"



def moving_average(values, window: int) -> np.ndarray:
    """Trailing mean over the last ``window`` points (fewer at the start)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return v
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def episodes_to_reach(curve, fraction: float = 0.9, window: int = 5, tail: float = 0.1) -> int:
    """First index at which a reward curve is within ``1 - fraction`` of its final level.

    The final level is the mean of the last ``tail`` share of the raw curve (at
    least one point). The curve is smoothed with a trailing mean of ``window``
    points before the comparison, and "within" is measured relative to the
    magnitude of the final level, so it works for negative rewards. Returns
    ``len(curve)`` if the smoothed curve never gets there.
    """
    c = np.asarray(curve, dtype=float)
    if c.size == 0:
        raise ValueError("empty curve")
    if not 0.0 < fraction <= 1.0 or not 0.0 < tail <= 1.0:
        raise ValueError("need 0 < fraction <= 1 and 0 < tail <= 1")
    final = c[-max(1, int(round(c.size * tail))):].mean()
    smoothed = moving_average(c, window)
    reached = smoothed >= final - (1.0 - fraction) * abs(final)
    return int(np.argmax(reached)) if reached.any() else int(c.size)
