"""Aggregation of attack results: success rate, metric means, operating curves."""
import csv
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .io import FormatError
from .metrics import METRICS, metric_id

CSV_HEADER = ["sample_id", "method", "success", "l2", "cd", "hd", "curv", "smooth", "time_s"]
METRIC_COLUMNS = dict(zip(METRICS, CSV_HEADER[3:8]))
# display scale of each distance column
SCALES = {"L2": 1e-1, "CD": 1e-4, "HD": 1e-2, "Curv": 1e-2, "Smooth": 1e-3}
GRID_POINTS = 200
GRID_HEADROOM = 1.05
ABSENT = "-"


@dataclass
class EvalRecord:
    sample_id: str
    method: str
    success: bool
    l2: float
    cd: float
    hd: float
    curv: float
    smooth: float
    time_s: float
    queries: Optional[int] = None

    def value(self, metric):
        return getattr(self, METRIC_COLUMNS[metric_id(metric)])

    def validate(self):
        vals = [self.l2, self.cd, self.hd, self.curv, self.smooth]
        if self.success and not all(math.isfinite(v) and v >= 0 for v in vals):
            raise ValueError(f"{self.sample_id}: distances must be finite and >= 0")
        if not math.isfinite(self.time_s) or self.time_s < 0:
            raise ValueError(f"{self.sample_id}: time must be finite and >= 0")
        return self


def record_from_result(sample_id, method, result):
    d = result.distances
    return EvalRecord(sample_id, method, bool(result.success), d["L2"], d["CD"], d["HD"],
                      d["Curv"], d["Smooth"], result.wall_time,
                      result.queries if result.queries else None)


def _fmt(x):
    return repr(float(x))


def format_rows(records: Sequence[EvalRecord], with_queries=False):
    head = CSV_HEADER + (["queries"] if with_queries else [])
    lines = [",".join(head)]
    for r in records:
        cells = [r.sample_id, r.method, "1" if r.success else "0",
                 _fmt(r.l2), _fmt(r.cd), _fmt(r.hd), _fmt(r.curv), _fmt(r.smooth), _fmt(r.time_s)]
        if with_queries:
            cells.append(str(r.queries if r.queries is not None else 0))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_results(path, records, with_queries=False):
    with open(path, "w", newline="") as fh:
        fh.write(format_rows(records, with_queries))


def read_results(path) -> List[EvalRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:9] != CSV_HEADER or len(header) > 10:
            raise FormatError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
        has_q = len(header) == 10
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            if row[2] not in ("0", "1"):
                raise FormatError(f"{path}:{lineno}: success must be 0 or 1")
            try:
                nums = [float(v) for v in row[3:9]]
                q = int(row[9]) if has_q else None
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric field") from None
            try:
                out.append(EvalRecord(row[0], row[1], row[2] == "1", *nums, queries=q).validate())
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return out


def success_rate(records):
    if not records:
        raise ValueError("success rate of an empty record set")
    return sum(r.success for r in records) / len(records)


@dataclass
class Curve:
    points: List[tuple]
    empty: bool = False

    def tsv(self):
        return "".join(f"{D!r}\t{P!r}\n" for D, P in self.points)


def default_grid(records, metric, n=GRID_POINTS):
    vals = [r.value(metric) for r in records if r.success]
    top = max(vals) if vals else 0.0
    return np.linspace(0.0, GRID_HEADROOM * top, n)


def operating_characteristic(records, metric, grid=None):
    """Fraction of all attacks that succeeded with distortion at most D.

    Runs from 0 at D = 0 (for strictly positive distances) up to the
    success rate at the largest observed distance.
    """
    if not records:
        raise ValueError("operating characteristic of an empty record set")
    vals = np.sort([r.value(metric) for r in records if r.success])
    if vals.size == 0:
        return Curve([], empty=True)
    grid = default_grid(records, metric) if grid is None else np.asarray(grid, dtype=np.float64)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be ascending")
    if grid[-1] < vals[-1]:
        raise ValueError("grid must reach the largest observed distance")
    total = len(records)
    counts = np.searchsorted(vals, grid, side="right")
    return Curve([(float(D), int(c) / total) for D, c in zip(grid, counts)])


@dataclass
class Summary:
    success_pct: float
    means: dict           # metric -> unscaled mean over successes, or None
    time_s: float

    def row(self):
        cells = [f"{self.success_pct:.12g}"]
        for m in METRICS:
            v = self.means[m]
            cells.append(ABSENT if v is None else f"{v / SCALES[m]:.12g}")
        cells.append(f"{self.time_s:.12g}")
        return "\t".join(cells)

    @staticmethod
    def header():
        cols = ["P_suc(%)"] + [f"{m}({SCALES[m]:.0e})" for m in METRICS] + ["time(s)"]
        return "\t".join(cols)


def summarize(records):
    """Success percentage, per-metric means over successes, mean time over all."""
    if not records:
        raise ValueError("summary of an empty record set")
    wins = [r for r in records if r.success]
    means = {m: (float(np.mean([r.value(m) for r in wins])) if wins else None) for m in METRICS}
    return Summary(100.0 * len(wins) / len(records), means,
                   float(np.mean([r.time_s for r in records])))


def parse_summary_row(line):
    cells = line.rstrip("\n").split("\t")
    if len(cells) != len(METRICS) + 2:
        raise FormatError(f"summary row needs {len(METRICS) + 2} fields, got {len(cells)}")
    means = {m: (None if c == ABSENT else float(c) * SCALES[m])
             for m, c in zip(METRICS, cells[1:-1])}
    return Summary(float(cells[0]), means, float(cells[-1]))
