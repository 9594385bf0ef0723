"""Labeled dataset containers, CSV I/O, stratified splitting and the toy generator."""

from __future__ import annotations

import csv
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError

TOY_VERSION = "toy-v1"
# Unit-variance isotropic Gaussians; means 3 standard deviations apart.
TOY_MEANS = np.array([[0.0, 0.0], [3.0, 0.0]])
TOY_SCALE = 1.0

CSV_PRECISION = 9


@dataclass(frozen=True)
class LabeledDataset:
    """Rows of real feature vectors with dense integer class labels.

    ``n_classes`` defaults to ``max(labels) + 1``. It may be given explicitly
    so that subsets (a calibration split, a minority-only synthetic set, an
    empty synthetic set) keep the class count of the data they came from.
    """

    features: np.ndarray
    labels: np.ndarray
    class_names: Optional[tuple[str, ...]] = None
    n_classes: int = field(default=-1)

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if features.ndim == 1:
            features = features.reshape(len(labels), -1) if len(labels) else features.reshape(0, 0)
        if features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if features.shape[0] != labels.shape[0]:
            raise DataError(
                f"features have {features.shape[0]} rows but labels have {labels.shape[0]} entries"
            )
        if not np.all(np.isfinite(features)):
            raise DataError("features contain NaN or infinite values")
        if labels.size and labels.min() < 0:
            raise DataError("labels must be non-negative integers")
        n_classes = self.n_classes
        if n_classes < 0:
            n_classes = int(labels.max()) + 1 if labels.size else 0
            if self.class_names is not None:
                n_classes = max(n_classes, len(self.class_names))
        if labels.size and labels.max() >= n_classes:
            raise DataError(f"label {int(labels.max())} outside 0..{n_classes - 1}")
        names = self.class_names
        if names is not None:
            names = tuple(str(s) for s in names)
            if len(names) != n_classes:
                raise DataError(f"{len(names)} class names given for {n_classes} classes")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "n_classes", n_classes)

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def require_all_classes(self, what: str = "dataset") -> None:
        """Raise :class:`DataError` unless every class 0..C-1 occurs."""
        missing = np.flatnonzero(self.class_counts() == 0)
        if missing.size:
            raise DataError(f"{what} has no samples of class(es) {missing.tolist()}")

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(self.features[rows], self.labels[rows], self.class_names, self.n_classes)

    def with_features(self, features: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(features, self.labels, self.class_names, self.n_classes)

    def label_name(self, label: int) -> str:
        if self.class_names is None:
            return str(int(label))
        return self.class_names[int(label)]


def concat(first: LabeledDataset, second: LabeledDataset) -> LabeledDataset:
    """Stack two datasets over the same feature space and label encoding."""
    if len(first) and len(second) and first.n_features != second.n_features:
        raise DataError(
            f"cannot combine datasets with {first.n_features} and {second.n_features} features"
        )
    d = first.n_features if len(first) else second.n_features
    features = np.vstack([first.features.reshape(-1, d), second.features.reshape(-1, d)])
    labels = np.concatenate([first.labels, second.labels])
    names = first.class_names if first.class_names is not None else second.class_names
    return LabeledDataset(features, labels, names, max(first.n_classes, second.n_classes))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# ----- CSV ----- #

def load_csv(path, label_column: str = "label", class_names: Optional[Sequence[str]] = None) -> LabeledDataset:
    """Read a numeric CSV with one label column.

    Labels are re-encoded to dense ids in order of first appearance. Passing
    ``class_names`` fixes the encoding instead (used to read a test set with
    the label coding of its training set); unseen labels are then appended.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not found in header")
        label_pos = header.index(label_column)
        feature_cols = [(i, h) for i, h in enumerate(header) if i != label_pos]

        names: list[str] = list(class_names) if class_names is not None else []
        lookup = {name: i for i, name in enumerate(names)}
        rows: list[list[float]] = []
        labels: list[int] = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}")
            values = []
            for i, name in feature_cols:
                try:
                    value = float(row[i])
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {row[i]!r} at row {row_no}, column {name!r}"
                    ) from None
                if not math.isfinite(value):
                    raise DataError(f"{path}: non-finite value at row {row_no}, column {name!r}")
                values.append(value)
            raw = row[label_pos].strip()
            if raw not in lookup:
                lookup[raw] = len(names)
                names.append(raw)
            rows.append(values)
            labels.append(lookup[raw])
    if not rows:
        raise DataError(f"{path}: empty data section")
    features = np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_cols))
    return LabeledDataset(features, np.array(labels), tuple(names))


def _format(value: float) -> str:
    return f"{value:.{CSV_PRECISION}g}"


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dataset_to_csv(data: LabeledDataset, label_column: str = "label",
                   feature_names: Optional[Sequence[str]] = None) -> str:
    d = data.n_features
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(d)]
    lines = [",".join([*feature_names, label_column])]
    for x, y in zip(data.features, data.labels):
        lines.append(",".join([*(_format(v) for v in x), data.label_name(y)]))
    return "\n".join(lines) + "\n"


def save_csv(data: LabeledDataset, path, label_column: str = "label",
             feature_names: Optional[Sequence[str]] = None) -> None:
    """Write ``data`` as CSV with 9 significant digits, atomically."""
    atomic_write_text(path, dataset_to_csv(data, label_column, feature_names))


# ----- splitting ----- #

@dataclass(frozen=True)
class SplitConfig:
    calib_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.calib_fraction < 1.0:
            raise ConfigError("calib_fraction must be in (0,1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


def stratified_split(data: LabeledDataset, config: SplitConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Split into (proper, calibration) sets class by class.

    Class ``c`` with ``n_c`` samples sends ``round(calib_fraction * n_c)``
    samples to calibration, clamped to ``[1, n_c - 1]``. Both subsets keep the
    original row order.
    """
    counts = data.class_counts()
    small = [c for c in range(data.n_classes) if counts[c] < 2]
    if small:
        raise DataError(f"class(es) {small} have fewer than 2 samples; cannot split")
    rng = np.random.default_rng(int(config.seed))
    calib_mask = np.zeros(len(data), dtype=bool)
    for c in range(data.n_classes):
        rows = np.flatnonzero(data.labels == c)
        n_c = rows.size
        n_calib = min(max(_round_half_up(config.calib_fraction * n_c), 1), n_c - 1)
        calib_mask[rows[rng.permutation(n_c)[:n_calib]]] = True
    return data.subset(np.flatnonzero(~calib_mask)), data.subset(np.flatnonzero(calib_mask))


# ----- scaling ----- #

@dataclass(frozen=True)
class ScalingTransform:
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64).reshape(-1)
        maxs = np.asarray(self.maxs, dtype=np.float64).reshape(-1)
        if mins.shape != maxs.shape or np.any(maxs < mins):
            raise DataError("scaling transform needs max >= min in every dimension")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @property
    def n_features(self) -> int:
        return int(self.mins.size)

    def apply(self, x: np.ndarray) -> np.ndarray:
        span = self.maxs - self.mins
        constant = span == 0
        out = (x - self.mins) / np.where(constant, 1.0, span)
        out[..., constant] = 0.5
        return out

    def invert(self, x: np.ndarray) -> np.ndarray:
        span = self.maxs - self.mins
        out = x * span + self.mins
        constant = span == 0
        out[..., constant] = self.mins[constant]
        return out


def minmax_scale(data: LabeledDataset, mode: str = "fit",
                 transform: Optional[ScalingTransform] = None) -> tuple[LabeledDataset, ScalingTransform]:
    """Min-max scale features to [0, 1].

    ``mode`` is one of ``"fit"`` (learn and apply), ``"apply"`` or
    ``"invert"``; the last two need ``transform``. Constant dimensions map to
    0.5.
    """
    if mode == "fit":
        if len(data) == 0:
            raise DataError("cannot fit a scaling transform on an empty dataset")
        transform = ScalingTransform(data.features.min(axis=0), data.features.max(axis=0))
    elif mode in ("apply", "invert"):
        if transform is None:
            raise ConfigError(f"mode {mode!r} requires a transform")
    else:
        raise ConfigError(f"unknown scaling mode {mode!r}")
    if transform.n_features != data.n_features:
        raise DataError(
            f"dimension mismatch: data has {data.n_features} features, transform has {transform.n_features}"
        )
    x = data.features.copy()
    out = transform.invert(x) if mode == "invert" else transform.apply(x)
    return data.with_features(out), transform


# ----- toy data ----- #

def sample_toy_class(label: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points from the toy generative distribution of ``label``."""
    return TOY_MEANS[label] + TOY_SCALE * rng.standard_normal((n, 2))


def make_toy(n_total: int = 4000, minority_fraction: float = 0.1, seed: int = 0) -> LabeledDataset:
    """Two overlapping Gaussian classes in 2-D with class 0 as the minority."""
    if n_total < 10:
        raise ConfigError("n_total must be at least 10")
    if not 0.0 < minority_fraction < 0.5:
        raise ConfigError("minority_fraction must be in (0, 0.5)")
    rng = np.random.default_rng(seed)
    n_minority = _round_half_up(minority_fraction * n_total)
    n_majority = n_total - n_minority
    features = np.vstack([sample_toy_class(0, n_minority, rng), sample_toy_class(1, n_majority, rng)])
    labels = np.repeat([0, 1], [n_minority, n_majority])
    order = rng.permutation(n_total)
    return LabeledDataset(features[order], labels[order], n_classes=2)
