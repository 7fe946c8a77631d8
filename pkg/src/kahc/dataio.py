"""Dataset loading, min-max normalisation and synthetic varied-density blobs."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DatasetError(ValueError):
    """Structural problem with an input dataset (empty file, ragged rows, ...)."""


class ParseError(DatasetError):
    """A field could not be parsed as a number."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class LabeledDataset:
    """Points with optional ground-truth labels.

    ``labels`` holds integer class ids ``1..kappa`` in first-appearance order of
    the raw label values; ``label_names`` keeps the raw values for reference.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None
    name: str = "dataset"
    label_names: tuple = field(default=(), compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise DatasetError("points must be a 2-d array")
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DatasetError("dataset must have at least one row and one column")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (pts.shape[0],):
                raise DatasetError("labels must cover every point")
            lab = lab.astype(np.int64, copy=True)
            lab.flags.writeable = False
            object.__setattr__(self, "labels", lab)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def kappa(self) -> int:
        if self.labels is None:
            return 0
        return int(np.unique(self.labels).size)


def encode_labels(raw: Sequence) -> tuple[np.ndarray, tuple]:
    """Map arbitrary label values to ``1..kappa`` in order of first appearance."""
    mapping: dict = {}
    out = np.empty(len(raw), dtype=np.int64)
    for i, value in enumerate(raw):
        if value not in mapping:
            mapping[value] = len(mapping) + 1
        out[i] = mapping[value]
    return out, tuple(mapping)


def load_csv(path, label_column: Optional[int] = None, header: bool = False,
             name: Optional[str] = None) -> LabeledDataset:
    """Read a comma-separated numeric table.

    Rows are numbered from 1 in error messages (counting the header line when
    ``header`` is set). A negative ``label_column`` counts from the end.
    """
    path = Path(path)
    rows: list[list[str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            rows.append((lineno, [cell.strip() for cell in row]))
    if not rows:
        raise DatasetError(f"{path}: no data rows")

    arity = len(rows[0][1])
    for lineno, row in rows:
        if len(row) != arity:
            raise DatasetError(
                f"{path}: row {lineno} has {len(row)} fields, expected {arity}")

    if label_column is not None:
        col = label_column if label_column >= 0 else arity + label_column
        if not 0 <= col < arity:
            raise DatasetError(f"label column {label_column} out of range for {arity} fields")
    else:
        col = None
    if arity - (col is not None) < 1:
        raise DatasetError(f"{path}: no feature columns")

    feats = []
    raw_labels = []
    for lineno, row in rows:
        values = []
        for j, cell in enumerate(row):
            if j == col:
                continue
            try:
                values.append(float(cell))
            except ValueError:
                raise ParseError(lineno, f"non-numeric value {cell!r} in column {j}") from None
        feats.append(values)
        if col is not None:
            raw_labels.append(row[col])

    labels = names = None
    if col is not None:
        labels, names = encode_labels(raw_labels)
    return LabeledDataset(np.array(feats, dtype=float), labels,
                          name or path.stem, names or ())


def minmax_normalize(ds: LabeledDataset) -> LabeledDataset:
    """Rescale every column to [0, 1]; constant columns become 0."""
    x = ds.points
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    out = (x - lo) / safe
    out[:, span == 0] = 0.0
    # guard against 1 + eps from rounding
    np.clip(out, 0.0, 1.0, out=out)
    return LabeledDataset(out, ds.labels, ds.name, ds.label_names)


def gen_varied_density_blobs(blobs, seed: int, name: str = "blobs") -> LabeledDataset:
    """Sample axis-aligned Gaussian blobs.

    ``blobs`` is a sequence of ``(center, spread, count)`` where ``spread`` is a
    scalar or per-axis standard deviation. Labels are the 1-based blob index.
    """
    blobs = list(blobs)
    if len(blobs) < 2:
        raise ValueError("need at least two blobs")
    rng = np.random.default_rng(seed)
    parts, labels = [], []
    dim = None
    for idx, (center, spread, count) in enumerate(blobs, start=1):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        if dim is None:
            dim = center.size
        elif center.size != dim:
            raise ValueError("all blob centers must share one dimension")
        if int(count) < 1:
            raise ValueError("blob counts must be >= 1")
        spread = np.broadcast_to(np.asarray(spread, dtype=float), center.shape)
        parts.append(center + rng.standard_normal((int(count), dim)) * spread)
        labels.append(np.full(int(count), idx))
    return LabeledDataset(np.vstack(parts), np.concatenate(labels), name)


def four_density_blobs(seed: int, n_dense: int = 400, n_sparse: int = 300) -> LabeledDataset:
    """Three dense clusters around one sparse cluster in the unit square.

    The sparse cluster touches each dense one so the clusters are not well
    separated. Output is min-max normalised.
    """
    spec = [
        ((0.30, 0.70), 0.035, n_dense),
        ((0.70, 0.70), 0.035, n_dense),
        ((0.50, 0.30), 0.035, n_dense),
        ((0.50, 0.58), 0.11, n_sparse),
    ]
    return minmax_normalize(gen_varied_density_blobs(spec, seed, name="four_density"))


DATA_DIR_ENV = "KAHC_DATA_DIR"

# file name, label column
_KNOWN_FILES = {
    "wine": ("wine.csv", 0),
    "seeds": ("seeds.csv", -1),
    "thyroid": ("thyroid.csv", 0),
    "banknote": ("banknote.csv", -1),
}


def load_named(name: str, data_dir=None) -> LabeledDataset:
    """Load one of the benchmark datasets, min-max normalised.

    Looks for ``<name>.csv`` in ``data_dir`` (or ``$KAHC_DATA_DIR``). ``wine``
    falls back to the copy bundled with scikit-learn.
    """
    data_dir = data_dir or os.environ.get(DATA_DIR_ENV)
    if name in _KNOWN_FILES and data_dir:
        fname, col = _KNOWN_FILES[name]
        path = Path(data_dir) / fname
        if path.exists():
            return minmax_normalize(load_csv(path, label_column=col, name=name))
    if name == "wine":
        from sklearn.datasets import load_wine

        bunch = load_wine()
        labels, names = encode_labels(list(bunch.target))
        return minmax_normalize(LabeledDataset(bunch.data, labels, "wine", names))
    raise FileNotFoundError(
        f"dataset {name!r} not found; place {name}.csv under ${DATA_DIR_ENV}")
