"""Axis-aligned lattice over the feature space, streamed in row-major order."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .dataset import LabeledDataset
from .errors import ConfigError, DataError, ResourceError

DEFAULT_GRID_CAP = 10**8


@dataclass(frozen=True)
class GridSpec:
    """Lattice with ``counts[j]`` points per axis spaced ``step`` apart from ``lower[j]``.

    Flat indices are row-major with axis 0 varying slowest.
    """

    lower: tuple[float, ...]
    step: float
    counts: tuple[int, ...]

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError("grid step must be positive")
        if len(self.lower) != len(self.counts):
            raise ConfigError("lower bounds and counts differ in dimension")
        if any(c < 1 for c in self.counts):
            raise ConfigError("every axis needs at least one grid point")
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        return math.prod(self.counts)

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(lo + (c - 1) * self.step for lo, c in zip(self.lower, self.counts))

    def axis(self, j: int) -> np.ndarray:
        return self.lower[j] + np.arange(self.counts[j]) * self.step


def build_grid_spec(data: LabeledDataset, step: float, cap: int = DEFAULT_GRID_CAP,
                    pad: int = 0) -> GridSpec:
    """Smallest lattice anchored at the data minima that covers every sample.

    ``pad`` adds that many whole steps on both sides of every axis. The point
    count is checked against ``cap`` before anything is allocated.
    """
    if not step > 0:
        raise ConfigError("grid step must be positive")
    if pad < 0:
        raise ConfigError("grid padding must be non-negative")
    if len(data) == 0:
        raise DataError("cannot build a grid over an empty dataset")
    lows = data.features.min(axis=0)
    highs = data.features.max(axis=0)
    counts = []
    for lo, hi in zip(lows, highs):
        raw = (hi - lo) / step
        steps = math.ceil(raw - 1e-9 * max(1.0, raw))
        # guard against rounding in raw: the last point must reach the maximum
        while lo + steps * step < hi:
            steps += 1
        counts.append(steps + 1 + 2 * pad)
    g = math.prod(counts)
    if g > cap:
        raise ResourceError(
            f"grid would have {g} points, above the cap of {cap}; use a larger grid step"
        )
    return GridSpec(tuple(float(lo - pad * step) for lo in lows), float(step), tuple(counts))


def _check_flat(spec: GridSpec, flat: np.ndarray) -> None:
    if flat.size and (flat.min() < 0 or flat.max() >= spec.size):
        raise DataError(f"grid index out of range [0, {spec.size})")


def flat_to_digits(spec: GridSpec, flat) -> np.ndarray:
    flat = np.asarray(flat, dtype=np.int64)
    _check_flat(spec, flat)
    return np.stack(np.unravel_index(flat, spec.counts), axis=-1)


def digits_to_flat(spec: GridSpec, digits) -> np.ndarray:
    digits = np.asarray(digits, dtype=np.int64)
    return np.ravel_multi_index(tuple(np.moveaxis(digits, -1, 0)), spec.counts)


def index_to_point(spec: GridSpec, index) -> np.ndarray:
    """Coordinates of one flat index (or an array of them)."""
    digits = flat_to_digits(spec, index)
    return np.asarray(spec.lower) + digits * spec.step


def locate(spec: GridSpec, points: np.ndarray) -> np.ndarray:
    """Flat index of the nearest lattice point, or -1 for points off the grid.

    A point is off the grid when it lies more than half a step outside the
    lattice's bounding box.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    digits = np.rint((points - np.asarray(spec.lower)) / spec.step).astype(np.int64)
    counts = np.asarray(spec.counts)
    inside = np.all((digits >= 0) & (digits < counts), axis=1)
    out = np.full(points.shape[0], -1, dtype=np.int64)
    if inside.any():
        out[inside] = digits_to_flat(spec, digits[inside])
    return out


def iterate_chunks(spec: GridSpec, chunk_size: int) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(start, points)`` blocks covering flat indices ``[0, g)`` in order."""
    if chunk_size < 1:
        raise ConfigError("chunk_size must be at least 1")
    for start in range(0, spec.size, chunk_size):
        yield start, chunk_points(spec, start, min(start + chunk_size, spec.size))


def chunk_points(spec: GridSpec, start: int, stop: int) -> np.ndarray:
    """Coordinates of flat indices ``start .. stop-1`` as a ``(stop-start, d)`` block."""
    return index_to_point(spec, np.arange(start, stop, dtype=np.int64))
