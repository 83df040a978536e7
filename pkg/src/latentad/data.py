"""Series containers, CSV ingestion, standardization, downsampling.

Interchange format: one CSV per entity with rows = timestamps and columns =
features (header optional); empty fields are missing values. Optional
companions next to `<name>.csv`: `<name>.labels.csv` with one 0/1 per line
and `<name>.mask.csv` with a 0/1 matrix of the same shape (0 = occluded).
A dataset path is either a single values CSV or a directory of them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError

LABEL_SUFFIX = ".labels.csv"
MASK_SUFFIX = ".mask.csv"
STD_FLOOR = 1e-8


@dataclass
class SeriesFrame:
    """One entity's multivariate series: values, observation mask, labels."""

    values: np.ndarray                      # (n_features, n_timestamps) float64
    mask: np.ndarray                        # (n_features, n_timestamps) bool, True = observed
    labels: np.ndarray | None = None        # (n_timestamps,) bool
    entity_id: str = "series"
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2:
            raise ValidationError(f"values must be 2-d (features x time), got shape "
                                  f"{tuple(self.values.shape)}")
        if self.mask.shape != self.values.shape:
            raise ValidationError(f"mask shape {tuple(self.mask.shape)} does not match values "
                                  f"shape {tuple(self.values.shape)}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=bool)
            if self.labels.shape != (self.values.shape[1],):
                raise ValidationError(
                    f"labels length {self.labels.shape} does not match {self.values.shape[1]} timestamps")
        if not np.all(np.isfinite(self.values[self.mask])):
            raise ValidationError(f"entity {self.entity_id!r} has non-finite observed values")

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    @property
    def n_timestamps(self) -> int:
        return self.values.shape[1]


@dataclass
class StandardizeStats:
    mean: np.ndarray
    std: np.ndarray  # floored, safe to divide by


def _looks_like_header(row: list[str]) -> bool:
    for cell in row:
        cell = cell.strip()
        if cell == "":
            return False
        try:
            float(cell)
            return False
        except ValueError:
            continue
    return True


def load_series(path, entity_id: str | None = None) -> SeriesFrame:
    """Load one entity CSV plus any label/mask companions."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    rows: list[list[float]] = []
    obs: list[list[bool]] = []
    names = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        width = None
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and row[0].strip() == ""):
                continue
            if lineno == 1 and _looks_like_header(row):
                names = [c.strip() for c in row]
                width = len(names)
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}:{lineno}: row has {len(row)} fields, expected {width}")
            vals, seen = [], []
            for col, cell in enumerate(row):
                cell = cell.strip()
                if cell == "":
                    vals.append(0.0)
                    seen.append(False)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-numeric value {cell!r} in column {col}") from None
                seen.append(True)
            rows.append(vals)
            obs.append(seen)
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.array(rows, dtype=np.float64).T
    mask = np.array(obs, dtype=bool).T

    stem = path.name[: -len(".csv")] if path.name.endswith(".csv") else path.stem
    labels = _load_labels(path.with_name(stem + LABEL_SUFFIX), values.shape[1])
    file_mask = _load_mask(path.with_name(stem + MASK_SUFFIX), values.shape)
    if file_mask is not None:
        mask &= file_mask
    return SeriesFrame(values, mask, labels, entity_id or stem, names)


def _load_labels(path: Path, n_timestamps: int) -> np.ndarray | None:
    if not path.exists():
        return None
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: labels must be 0 or 1, got {line!r}")
            out.append(line == "1")
    if len(out) != n_timestamps:
        raise DataError(f"{path}: {len(out)} labels for {n_timestamps} timestamps")
    return np.array(out, dtype=bool)


def _load_mask(path: Path, shape) -> np.ndarray | None:
    if not path.exists():
        return None
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and row[0].strip() == ""):
                continue
            try:
                rows.append([float(c) != 0.0 for c in row])
            except ValueError:
                raise DataError(f"{path}:{lineno}: mask entries must be numeric 0/1") from None
    mask = np.array(rows, dtype=bool).T
    if mask.shape != shape:
        raise DataError(f"{path}: mask shape {tuple(mask.shape)} does not match values "
                        f"shape {tuple(shape)}")
    return mask


def load_dataset(path) -> list[SeriesFrame]:
    """Load a dataset: a values CSV, or a directory of per-entity CSVs."""
    path = Path(path)
    if path.is_file():
        return [load_series(path)]
    if not path.is_dir():
        raise DataError(f"{path}: no such file or directory")
    files = sorted(p for p in path.glob("*.csv")
                   if not p.name.endswith(LABEL_SUFFIX) and not p.name.endswith(MASK_SUFFIX))
    if not files:
        raise DataError(f"{path}: no entity CSV files found")
    return [load_series(p) for p in files]


def write_series(frame: SeriesFrame, path) -> None:
    """Write an entity CSV plus label/mask companions when present."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if frame.feature_names is not None:
            writer.writerow(frame.feature_names)
        for t in range(frame.n_timestamps):
            writer.writerow([repr(float(v)) for v in frame.values[:, t]])
    stem = path.name[: -len(".csv")] if path.name.endswith(".csv") else path.stem
    if frame.labels is not None:
        with open(path.with_name(stem + LABEL_SUFFIX), "w") as fh:
            fh.write("\n".join("1" if v else "0" for v in frame.labels) + "\n")
    if not frame.mask.all():
        with open(path.with_name(stem + MASK_SUFFIX), "w", newline="") as fh:
            writer = csv.writer(fh)
            for t in range(frame.n_timestamps):
                writer.writerow(["1" if v else "0" for v in frame.mask[:, t]])


def standardize_stats(train: SeriesFrame) -> StandardizeStats:
    """Masked per-feature mean/std of the train split; std floored at 1e-8."""
    mean = np.empty(train.n_features)
    std = np.empty(train.n_features)
    for i in range(train.n_features):
        observed = train.values[i, train.mask[i]]
        if observed.size == 0:
            name = train.feature_names[i] if train.feature_names else str(i)
            raise DataError(f"entity {train.entity_id!r}: feature {name} has no observed "
                            f"values in the train split")
        mean[i] = observed.mean()
        std[i] = max(observed.std(), STD_FLOOR)
    return StandardizeStats(mean, std)


def apply_standardize(frame: SeriesFrame, stats: StandardizeStats) -> SeriesFrame:
    values = (frame.values - stats.mean[:, None]) / stats.std[:, None]
    return SeriesFrame(values, frame.mask.copy(),
                       None if frame.labels is None else frame.labels.copy(),
                       frame.entity_id, frame.feature_names)


def destandardize(values: np.ndarray, stats: StandardizeStats) -> np.ndarray:
    return values * stats.std[:, None] + stats.mean[:, None]


def standardize(train: SeriesFrame, others: list[SeriesFrame]):
    """Z-score the train split per feature and apply the same stats elsewhere."""
    stats = standardize_stats(train)
    return apply_standardize(train, stats), [apply_standardize(f, stats) for f in others], stats


def downsample(frame: SeriesFrame, factor: int) -> SeriesFrame:
    """Mean-pool non-overlapping blocks over observed values.

    A fully occluded block stays occluded; labels pool by logical OR so no
    anomalous segment can disappear. The trailing partial block is pooled too.
    """
    if factor < 1:
        raise ValidationError(f"downsample factor must be >= 1, got {factor}")
    if factor == 1:
        return frame
    m, t = frame.n_features, frame.n_timestamps
    t_out = -(-t // factor)
    values = np.zeros((m, t_out))
    mask = np.zeros((m, t_out), dtype=bool)
    for b in range(t_out):
        lo, hi = b * factor, min((b + 1) * factor, t)
        block_vals = frame.values[:, lo:hi]
        block_mask = frame.mask[:, lo:hi]
        counts = block_mask.sum(axis=1)
        observed = counts > 0
        sums = np.where(block_mask, block_vals, 0.0).sum(axis=1)
        values[observed, b] = sums[observed] / counts[observed]
        mask[:, b] = observed
    labels = None
    if frame.labels is not None:
        labels = np.array([frame.labels[b * factor : min((b + 1) * factor, t)].any()
                           for b in range(t_out)], dtype=bool)
    return SeriesFrame(values, mask, labels, frame.entity_id, frame.feature_names)
