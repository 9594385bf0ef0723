"""Grid scoring, confidence-region extraction and synthetic sample emission."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import grid as gridmod
from .conformal import (
    CalibrationModel,
    PValueOptions,
    fit,
    pvalues_from_scores,
    tie_uniforms,
)
from .dataset import CSV_PRECISION, LabeledDataset, SplitConfig, atomic_write_text, stratified_split
from .errors import ConfigError, DataError
from .grid import DEFAULT_GRID_CAP, GridSpec, build_grid_spec
from .nonconformity import NcmConfig

DEFAULT_CHUNK_SIZE = 65536
DEFAULT_DENSE_LIMIT = 2 * 10**7


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


@dataclass(frozen=True)
class PValueField:
    """Per-class p-values at every grid point, indexed by flat grid index."""

    spec: GridSpec
    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        for arr in self.values:
            if arr.shape != (self.spec.size,):
                raise DataError("every class field must hold one value per grid point")

    @property
    def n_classes(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ConfidenceRegionMap:
    epsilon: float
    indices: tuple[np.ndarray, ...]

    def sizes(self) -> list[int]:
        return [int(ix.size) for ix in self.indices]


@dataclass(frozen=True)
class SynthesisConfig:
    epsilon: float = 0.95
    grid_step: float = 0.005
    ncm: NcmConfig = field(default_factory=NcmConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    pvalues: PValueOptions = field(default_factory=PValueOptions)
    grid_cap: int = DEFAULT_GRID_CAP
    grid_pad: int = 0
    chunk_size: int = DEFAULT_CHUNK_SIZE
    workers: Optional[int] = None
    minority_only: Optional[tuple[int, ...]] = None
    dedupe: bool = False
    dense_limit: int = DEFAULT_DENSE_LIMIT

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must be in [0,1]")
        if not self.grid_step > 0:
            raise ConfigError("grid step must be positive")
        if self.grid_cap < 1:
            raise ConfigError("grid cap must be positive")
        if self.grid_pad < 0:
            raise ConfigError("grid padding must be non-negative")
        if self.chunk_size < 1:
            raise ConfigError("chunk size must be at least 1")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.minority_only is not None:
            object.__setattr__(self, "minority_only", tuple(sorted(set(int(c) for c in self.minority_only))))


def _check_epsilon(epsilon: float) -> None:
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError("epsilon must be in [0,1]")


def _chunk_pvalues(model: CalibrationModel, spec: GridSpec, start: int, stop: int,
                   opts: PValueOptions) -> list[np.ndarray]:
    points = gridmod.chunk_points(spec, start, stop)
    out = []
    for y in range(model.n_classes):
        alphas = model.scores(points, y)
        tau = tie_uniforms(points, y, opts.tie_seed) if opts.smoothed else None
        out.append(pvalues_from_scores(model.calib_alphas[y], alphas, opts.direction, tau))
    return out


def _run_chunks(task, spec: GridSpec, chunk_size: int, workers: Optional[int]) -> None:
    if chunk_size < 1:
        raise ConfigError("chunk size must be at least 1")
    bounds = [(s, min(s + chunk_size, spec.size)) for s in range(0, spec.size, chunk_size)]
    workers = default_workers() if workers is None else workers
    if workers < 1:
        raise ConfigError("workers must be at least 1")
    if workers == 1 or len(bounds) == 1:
        for start, stop in bounds:
            task(start, stop)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for fut in [pool.submit(task, start, stop) for start, stop in bounds]:
            fut.result()


def score_grid(model: CalibrationModel, spec: GridSpec, opts: PValueOptions = PValueOptions(),
               chunk_size: int = DEFAULT_CHUNK_SIZE, workers: Optional[int] = None) -> PValueField:
    """Mondrian p-value of every grid point for every class.

    Chunks are scored on a thread pool and written into pre-assigned slices,
    so the result does not depend on chunk size or worker count.
    """
    if spec.ndim != model.n_features:
        raise DataError(f"grid has {spec.ndim} dimensions, model has {model.n_features}")
    values = [np.empty(spec.size, dtype=np.float64) for _ in range(model.n_classes)]

    def task(start, stop):
        for arr, p in zip(values, _chunk_pvalues(model, spec, start, stop, opts)):
            arr[start:stop] = p

    _run_chunks(task, spec, chunk_size, workers)
    for arr in values:
        arr.setflags(write=False)
    return PValueField(spec, tuple(values))


def extract_regions(pfield: PValueField, epsilon: float) -> ConfidenceRegionMap:
    """Grid indices whose class p-value is strictly above ``epsilon``."""
    _check_epsilon(epsilon)
    return ConfidenceRegionMap(float(epsilon), tuple(np.flatnonzero(v > epsilon) for v in pfield.values))


def stream_regions(model: CalibrationModel, spec: GridSpec, epsilon: float,
                   opts: PValueOptions = PValueOptions(), chunk_size: int = DEFAULT_CHUNK_SIZE,
                   workers: Optional[int] = None) -> ConfidenceRegionMap:
    """Same regions as ``extract_regions(score_grid(...))`` without a dense field."""
    _check_epsilon(epsilon)
    if spec.ndim != model.n_features:
        raise DataError(f"grid has {spec.ndim} dimensions, model has {model.n_features}")
    found: dict[int, list[np.ndarray]] = {}

    def task(start, stop):
        pv = _chunk_pvalues(model, spec, start, stop, opts)
        found[start] = [start + np.flatnonzero(p > epsilon) for p in pv]

    _run_chunks(task, spec, chunk_size, workers)
    starts = sorted(found)
    indices = tuple(
        np.concatenate([found[s][y] for s in starts]).astype(np.int64) if starts else np.empty(0, np.int64)
        for y in range(model.n_classes)
    )
    return ConfidenceRegionMap(float(epsilon), indices)


def emit_synthetic(regions: ConfidenceRegionMap, spec: GridSpec,
                   classes: Optional[Sequence[int]] = None, dedupe: bool = False,
                   class_names: Optional[Sequence[str]] = None) -> LabeledDataset:
    """One labelled sample per (class, region point), ordered by class then flat index.

    A grid point inside several classes' regions is emitted once per class.
    ``classes`` restricts emission to those labels. ``dedupe`` instead drops
    every point claimed by more than one class.
    """
    n_classes = len(regions.indices)
    keep = range(n_classes) if classes is None else sorted(set(int(c) for c in classes))
    for c in keep:
        if not 0 <= c < n_classes:
            raise DataError(f"unknown class {c}")
    chosen = {c: regions.indices[c] for c in keep}
    if dedupe:
        all_idx = np.concatenate(regions.indices) if n_classes else np.empty(0, np.int64)
        uniq, counts = np.unique(all_idx, return_counts=True)
        shared = uniq[counts > 1]
        chosen = {c: ix[~np.isin(ix, shared)] for c, ix in chosen.items()}
    flat = np.concatenate([chosen[c] for c in keep]) if chosen else np.empty(0, np.int64)
    labels = np.concatenate([np.full(chosen[c].size, c, dtype=np.int64) for c in keep]) if chosen \
        else np.empty(0, np.int64)
    features = gridmod.index_to_point(spec, flat.astype(np.int64)).reshape(-1, spec.ndim)
    return LabeledDataset(features, labels, class_names, n_classes)


@dataclass(frozen=True)
class SynthesisResult:
    synthetic: LabeledDataset
    field: Optional[PValueField]
    regions: ConfidenceRegionMap
    model: CalibrationModel
    spec: GridSpec
    proper: LabeledDataset
    calib: LabeledDataset

    def reextract(self, epsilon: float, classes: Optional[Sequence[int]] = None,
                  dedupe: bool = False) -> tuple[LabeledDataset, ConfidenceRegionMap]:
        """Regions and synthetic set at another significance level, without rescoring."""
        if self.field is None:
            raise ConfigError("field was streamed, not stored; rerun synthesize for a new epsilon")
        regions = extract_regions(self.field, epsilon)
        return emit_synthetic(regions, self.spec, classes, dedupe, self.synthetic.class_names), regions


def synthesize(train: LabeledDataset, config: SynthesisConfig = SynthesisConfig()) -> SynthesisResult:
    """Split, calibrate, score the grid and emit the synthetic dataset.

    The dense p-value field is kept when it holds at most
    ``config.dense_limit`` values; larger grids are streamed and only the
    region indices survive (``field`` is then ``None``).
    """
    train.require_all_classes("training set")
    proper, calib = stratified_split(train, config.split)
    model = fit(proper, calib, config.ncm)
    spec = build_grid_spec(train, config.grid_step, config.grid_cap, config.grid_pad)
    if spec.size * model.n_classes <= config.dense_limit:
        pfield = score_grid(model, spec, config.pvalues, config.chunk_size, config.workers)
        regions = extract_regions(pfield, config.epsilon)
    else:
        pfield = None
        regions = stream_regions(model, spec, config.epsilon, config.pvalues,
                                 config.chunk_size, config.workers)
    synthetic = emit_synthetic(regions, spec, config.minority_only, config.dedupe, train.class_names)
    return SynthesisResult(synthetic, pfield, regions, model, spec, proper, calib)


# ----- file outputs ----- #

def _fmt(v: float) -> str:
    return f"{v:.{CSV_PRECISION}g}"


def field_header(pfield: PValueField, class_names: Optional[Sequence[str]] = None) -> list[str]:
    names = class_names if class_names is not None else [str(c) for c in range(pfield.n_classes)]
    return ["flat_index", *(f"x{j}" for j in range(pfield.spec.ndim)), *(f"p_{n}" for n in names)]


def write_field(pfield: PValueField, fh, class_names: Optional[Sequence[str]] = None,
                chunk_size: int = DEFAULT_CHUNK_SIZE) -> None:
    """Stream the field as CSV to an open text file."""
    fh.write(",".join(field_header(pfield, class_names)) + "\n")
    for start, points in gridmod.iterate_chunks(pfield.spec, chunk_size):
        stop = start + points.shape[0]
        cols = [pfield.values[y][start:stop] for y in range(pfield.n_classes)]
        lines = []
        for r in range(points.shape[0]):
            cells = [str(start + r), *(_fmt(v) for v in points[r]), *(_fmt(c[r]) for c in cols)]
            lines.append(",".join(cells))
        fh.write("\n".join(lines) + "\n")


def export_field(pfield: PValueField, path, class_names: Optional[Sequence[str]] = None,
                 chunk_size: int = DEFAULT_CHUNK_SIZE) -> None:
    """Write the field as CSV, one row per grid point in ascending flat order.

    Columns are ``flat_index``, one coordinate per dimension, then one
    p-value per class. The file appears atomically.
    """
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent if str(path.parent) else ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            write_field(pfield, fh, class_names, chunk_size)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_field(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read an exported field back as ``(flat_index, coordinates, pvalues)`` arrays."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = sum(1 for h in header if h.startswith("x"))
        rows = np.array([[float(c) for c in row] for row in reader if row], dtype=np.float64)
    rows = rows.reshape(-1, len(header))
    return rows[:, 0].astype(np.int64), rows[:, 1:1 + d], rows[:, 1 + d:]


def region_summary(result: SynthesisResult, class_names: Optional[Sequence[str]] = None) -> dict:
    counts = np.bincount(result.synthetic.labels, minlength=len(result.regions.indices))
    per_class = []
    for c, ix in enumerate(result.regions.indices):
        per_class.append({
            "class": class_names[c] if class_names is not None else c,
            "region_size": int(ix.size),
            "synth_count": int(counts[c]),
        })
    return {"epsilon": result.regions.epsilon, "gamma": result.spec.step, "per_class": per_class}


def write_region_summary(result: SynthesisResult, path, class_names: Optional[Sequence[str]] = None) -> None:
    atomic_write_text(path, json.dumps(region_summary(result, class_names), indent=2) + "\n")
