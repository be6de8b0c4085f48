"""Data containers, fold partitioning and data generators.

Everything here is immutable after construction: arrays are copied and
flagged read-only so that datasets can be shared between fold models,
bootstrap runs and estimators without defensive copies.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

RSSI_SENTINEL = 100.0
RSSI_FLOOR_DBM = -110.0
MIN_AP_DISTANCE = 0.1


class SchemaError(ValueError):
    """Raised when an input file lacks required columns."""


class RowParseError(ValueError):
    """Raised when a data row cannot be parsed; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _frozen(a, dtype=None) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Input vectors paired with labels.

    ``labels`` is ``(n,)`` for scalar targets or class indices and ``(n, q)``
    for vector targets. ``side`` optionally carries per-sample side
    information that travels with every subset (e.g. multipath parameters
    used to fit a channel-knowledge map).
    """

    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int | None = None
    side: np.ndarray | None = None

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        if inputs.ndim != 2:
            raise ValueError("inputs must be a 2-d array of shape (n, d)")
        labels = np.asarray(self.labels)
        if labels.shape[0] != inputs.shape[0]:
            raise ValueError(
                f"inputs and labels differ in length: {inputs.shape[0]} != {labels.shape[0]}")
        if self.n_classes is not None:
            labels = labels.astype(np.int64)
            if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
                raise ValueError(f"class labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "inputs", _frozen(inputs))
        object.__setattr__(self, "labels", _frozen(labels))
        if self.side is not None:
            side = np.asarray(self.side)
            if side.shape[0] != inputs.shape[0]:
                raise ValueError("side information must have one row per sample")
            object.__setattr__(self, "side", _frozen(side))

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        side = None if self.side is None else self.side[idx]
        return LabeledDataset(self.inputs[idx], self.labels[idx], self.n_classes, side)


@dataclass(frozen=True, eq=False)
class UnlabeledDataset:
    inputs: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        if inputs.ndim != 2 or inputs.shape[0] == 0:
            raise ValueError("unlabeled inputs must be a non-empty (N, d) array")
        object.__setattr__(self, "inputs", _frozen(inputs))

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


def check_compatible(labeled: LabeledDataset, unlabeled: UnlabeledDataset) -> None:
    if labeled.dim != unlabeled.dim:
        raise ValueError(
            f"labeled inputs have dimension {labeled.dim}, unlabeled {unlabeled.dim}")


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    """Partition of ``range(n)`` into ``K`` folds (0-based indices)."""

    K: int
    fold_of: np.ndarray
    members: tuple

    @property
    def n(self) -> int:
        return self.fold_of.shape[0]

    def complement(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != k)


def make_folds(n: int, K: int, seed=None) -> FoldAssignment:
    """Randomly split ``n`` indices into ``K`` near-equal folds.

    The permutation is cut into contiguous blocks; the first ``n % K`` folds
    receive one extra element.
    """
    if K < 2 or K > n:
        raise ValueError(f"need 2 <= K <= n, got K={K}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    blocks = np.array_split(perm, K)
    fold_of = np.empty(n, dtype=np.int64)
    members = []
    for k, block in enumerate(blocks):
        fold_of[block] = k
        members.append(_frozen(np.sort(block)))
    return FoldAssignment(K, _frozen(fold_of), tuple(members))


# ---------------------------------------------------------------------------
# synthetic linear model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthParams:
    """Parameters of ``Y = mu + X^T beta + z`` with ``beta = (R sigma / sqrt 2) 1_d``."""

    d: int = 2
    mu: float = 4.0
    sigma: float = 2.0
    R: float = 0.5
    seed: int | None = 0

    def __post_init__(self):
        if not 0.0 <= self.R <= 1.0:
            raise ValueError("R must lie in [0, 1]")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.d < 1:
            raise ValueError("d must be positive")

    @property
    def beta(self) -> np.ndarray:
        return np.full(self.d, self.R * self.sigma / math.sqrt(2.0))

    @property
    def noise_var(self) -> float:
        return self.sigma ** 2 * (1.0 - self.R ** 2)

    def with_seed(self, seed) -> "SynthParams":
        return replace(self, seed=seed)


def gen_synthetic(p: SynthParams, n: int, N: int):
    if n < 1 or N < 1:
        raise ValueError("n and N must be positive")
    rng = np.random.default_rng(p.seed)
    beta = p.beta
    X = rng.standard_normal((n, p.d))
    z = rng.standard_normal(n) * math.sqrt(p.noise_var)
    Y = p.mu + X @ beta + z
    X_unlabeled = rng.standard_normal((N, p.d))
    return LabeledDataset(X, Y), UnlabeledDataset(X_unlabeled)


# ---------------------------------------------------------------------------
# RSSI data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RssiRecord:
    rssi: np.ndarray
    position: tuple
    building: int | None = None
    floor: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "rssi", _frozen(self.rssi, dtype=float))
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))


_RSSI_META = ("LONGITUDE", "LATITUDE", "FLOOR", "BUILDINGID")


def _ap_columns(header: Sequence[str]) -> list:
    return [c for c in header if c.startswith("WAP")]


def load_rssi_csv(path, building: int | None = None, floor: int | None = None):
    """Read RSSI fingerprints in the UJIIndoorLoc column layout.

    Columns ``WAP001..WAPm`` hold RSSI in dBm with 100 meaning "not detected";
    ``LONGITUDE``, ``LATITUDE``, ``FLOOR`` and ``BUILDINGID`` are required and
    any further columns are ignored. Values are stored exactly as read.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in _RSSI_META if c not in header]
        aps = _ap_columns(header)
        if missing or not aps:
            what = ", ".join(missing) if missing else "WAP columns"
            raise SchemaError(f"{path}: missing required column(s): {what}")
        ap_pos = [header.index(c) for c in aps]
        lon_i, lat_i, floor_i, bld_i = (header.index(c) for c in _RSSI_META)

        records = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RowParseError(line, f"expected {len(header)} cells, got {len(row)}")
            try:
                rssi = [float(row[i]) for i in ap_pos]
                lon, lat = float(row[lon_i]), float(row[lat_i])
                fl, bld = int(float(row[floor_i])), int(float(row[bld_i]))
            except ValueError as exc:
                raise RowParseError(line, str(exc)) from None
            if building is not None and bld != building:
                continue
            if floor is not None and fl != floor:
                continue
            records.append(RssiRecord(np.array(rssi), (lon, lat), bld, fl))
    return records


def _fmt_cell(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def write_rssi_csv(records, path) -> None:
    """Write records in the same column layout that :func:`load_rssi_csv` reads."""
    records = list(records)
    m = records[0].rssi.shape[0] if records else 0
    header = [f"WAP{j + 1:03d}" for j in range(m)] + list(_RSSI_META)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            w.writerow([_fmt_cell(v) for v in r.rssi]
                       + [_fmt_cell(r.position[0]), _fmt_cell(r.position[1]),
                          str(r.floor if r.floor is not None else 0),
                          str(r.building if r.building is not None else 0)])


def records_to_dataset(records) -> LabeledDataset:
    X = np.array([r.rssi for r in records], dtype=float)
    Y = np.array([r.position for r in records], dtype=float)
    return LabeledDataset(X, Y)


def rssi_features(rssi, sentinel: float = RSSI_SENTINEL, floor_dbm: float = RSSI_FLOOR_DBM):
    """Replace the "not detected" sentinel with a floor value for learning."""
    X = np.array(rssi, dtype=float)
    X[X == sentinel] = floor_dbm
    return X


def sample_access_points(m: int, area, rng) -> np.ndarray:
    xmin, xmax, ymin, ymax = area
    return np.column_stack([rng.uniform(xmin, xmax, m), rng.uniform(ymin, ymax, m)])


def rssi_from_positions(positions, access_points, pathloss, rng=None,
                        min_dist: float = MIN_AP_DISTANCE) -> np.ndarray:
    """Log-distance path loss: ``-PL0 - 10 alpha log10(d) + shadowing``."""
    pl0, alpha, shadow_std = pathloss
    positions = np.atleast_2d(positions)
    dist = np.linalg.norm(positions[:, None, :] - access_points[None, :, :], axis=-1)
    dist = np.maximum(dist, min_dist)
    rssi = -pl0 - 10.0 * alpha * np.log10(dist)
    if shadow_std > 0:
        rssi = rssi + rng.standard_normal(rssi.shape) * shadow_std
    return rssi


def gen_synthetic_rssi(m: int, area, pathloss, n: int, N: int, seed=None,
                       min_dist: float = MIN_AP_DISTANCE, return_access_points: bool = False):
    """Synthetic RSSI fingerprints for ``m`` access points placed uniformly in ``area``.

    ``area`` is ``(xmin, xmax, ymin, ymax)`` and ``pathloss`` is
    ``(PL0, alpha, shadow_std)``. Labels are the 2-d user positions.
    """
    if m < 3:
        raise ValueError("need at least 3 access points")
    xmin, xmax, ymin, ymax = area
    if not (xmax > xmin and ymax > ymin):
        raise ValueError("area must be a non-degenerate rectangle")
    rng = np.random.default_rng(seed)
    aps = sample_access_points(m, area, rng)
    pos = np.column_stack([rng.uniform(xmin, xmax, n + N), rng.uniform(ymin, ymax, n + N)])
    rssi = rssi_from_positions(pos, aps, pathloss, rng, min_dist)
    labeled = LabeledDataset(rssi[:n], pos[:n])
    unlabeled = UnlabeledDataset(rssi[n:])
    if return_access_points:
        return labeled, unlabeled, aps
    return labeled, unlabeled


def train_test_split(n_total: int, test_fraction: float, rng) -> tuple:
    perm = rng.permutation(n_total)
    n_test = int(round(test_fraction * n_total))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])
