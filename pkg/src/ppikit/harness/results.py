"""Aggregated results: mean and standard error per (scheme, sweep value, metric)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HEADER = ["experiment", "scheme", "sweep", "metric", "mean", "stderr", "trials"]


def fmt(v) -> str:
    return "%.12g" % v


@dataclass
class ResultRow:
    experiment: str
    scheme: str
    sweep: float
    metric: str
    mean: float
    stderr: float
    trials: int
    values: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_values(cls, experiment, scheme, sweep, metric, values) -> "ResultRow":
        """Mean and ``std(ddof=1) / sqrt(trials)`` (0 for a single trial)."""
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            return cls(experiment, scheme, float(sweep), metric, math.nan, math.nan, 0, v)
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        return cls(experiment, scheme, float(sweep), metric, float(v.mean()), se, int(v.size), v)


@dataclass
class ResultsTable:
    """Result rows plus ``errors``, the (job, traceback) pairs of failed trials."""

    rows: list = field(default_factory=list)
    errors: list = field(default_factory=list, compare=False)

    def sorted_rows(self) -> list:
        return sorted(self.rows, key=lambda r: (r.scheme, r.sweep, r.metric))

    def get(self, scheme: str, sweep, metric: str) -> ResultRow:
        for r in self.rows:
            if r.scheme == scheme and r.sweep == float(sweep) and r.metric == metric:
                return r
        raise KeyError((scheme, sweep, metric))

    def schemes(self) -> list:
        return sorted({r.scheme for r in self.rows})

    def to_csv_text(self) -> str:
        lines = [",".join(HEADER)]
        for r in self.sorted_rows():
            lines.append(",".join([r.experiment, r.scheme, fmt(r.sweep), r.metric, fmt(r.mean),
                                   fmt(r.stderr), str(r.trials)]))
        return "\n".join(lines) + "\n"


def emit_csv(table: ResultsTable, path) -> None:
    """CSV with the fixed header, rows ordered by (scheme, sweep, metric)."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(table.to_csv_text())


def read_csv(path) -> ResultsTable:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != HEADER:
            raise ValueError(f"unexpected header {header}")
        rows = [ResultRow(r[0], r[1], float(r[2]), r[3], float(r[4]), float(r[5]), int(r[6]))
                for r in reader]
    return ResultsTable(rows)


def emit_plotdata(table: ResultsTable, directory) -> list:
    """One whitespace-separated file per (scheme, metric) with columns
    ``sweep mean stderr``; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    groups = {}
    for r in table.sorted_rows():
        groups.setdefault((r.experiment, r.scheme, r.metric), []).append(r)
    paths = []
    for (exp, scheme, metric), rows in sorted(groups.items()):
        p = directory / f"{exp}_{scheme}_{metric}.dat"
        text = "# sweep mean stderr\n" + "".join(
            f"{fmt(r.sweep)} {fmt(r.mean)} {fmt(r.stderr)}\n" for r in rows)
        p.write_text(text)
        paths.append(p)
    return paths


def read_plotdata(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=2)
