"""Inductive and Mondrian conformal p-values over a fitted calibration state.

Two counting directions are supported:

``paper-le``
    ``p = (#{i : alpha_i <= alpha} + 1) / (N + 1)``, the rank counted from
    below as the label-conditional formula is written.
``standard-ge``
    ``p = (#{i : alpha_i >= alpha} + 1) / (N + 1)``, the usual conformal
    convention where strange points receive small p-values.

Both give uniformly distributed true-label p-values under exchangeability;
they differ in which side of the score distribution ends up above a
threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import LabeledDataset
from .errors import ConfigError, DataError
from .nonconformity import NcmConfig, ProperIndex, distance

DIRECTIONS = ("paper-le", "standard-ge")
DEFAULT_DIRECTION = "standard-ge"


@dataclass(frozen=True)
class PValueOptions:
    smoothed: bool = False
    tie_seed: int = 0
    direction: str = DEFAULT_DIRECTION

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"p-value direction must be one of {DIRECTIONS}")


@dataclass(frozen=True)
class CalibrationModel:
    proper_index: ProperIndex
    calib_alphas: tuple[np.ndarray, ...]
    pooled_alphas: np.ndarray
    ncm: NcmConfig

    @property
    def n_classes(self) -> int:
        return len(self.calib_alphas)

    @property
    def n_features(self) -> int:
        return self.proper_index.n_features

    def check_class(self, y: int) -> None:
        if not 0 <= int(y) < self.n_classes:
            raise DataError(f"unknown class {y}")

    def scores(self, points: np.ndarray, y: int) -> np.ndarray:
        return self.proper_index.scores(points, y)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def fit(proper: LabeledDataset, calib: LabeledDataset, ncm: NcmConfig = NcmConfig()) -> CalibrationModel:
    """Index the proper set and score every calibration sample with its true label."""
    if len(proper) == 0 or len(calib) == 0:
        raise DataError("proper and calibration sets must both be non-empty")
    if proper.n_features != calib.n_features:
        raise DataError(
            f"proper set has {proper.n_features} features, calibration set has {calib.n_features}"
        )
    n_classes = max(proper.n_classes, calib.n_classes)
    p_counts = np.bincount(proper.labels, minlength=n_classes)
    c_counts = np.bincount(calib.labels, minlength=n_classes)
    for y in range(n_classes):
        if p_counts[y] == 0 or c_counts[y] == 0:
            where = "proper" if p_counts[y] == 0 else "calibration"
            raise DataError(f"class {y} is absent from the {where} set")
    if proper.n_classes != n_classes:
        proper = LabeledDataset(proper.features, proper.labels, None, n_classes)
    index = ProperIndex(proper, ncm)
    per_class = []
    for y in range(n_classes):
        per_class.append(_frozen(np.sort(index.scores(calib.features[calib.labels == y], y))))
    pooled = _frozen(np.sort(np.concatenate(per_class)))
    return CalibrationModel(index, tuple(per_class), pooled, ncm)


# ----- tie-breaking randomness ----- #

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def tie_uniforms(points: np.ndarray, y: int, tie_seed: int) -> np.ndarray:
    """Uniform [0, 1) draws keyed on (seed, label, coordinates).

    The same query always receives the same draw, whatever the call order.
    """
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    bits = points.view(np.uint64)
    h = np.full(points.shape[0], np.uint64(int(tie_seed) & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
    h = _splitmix64(h ^ np.uint64(int(y) & 0xFFFFFFFFFFFFFFFF))
    for j in range(bits.shape[1]):
        h = _splitmix64(h ^ bits[:, j])
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


# ----- p-values ----- #

def pvalues_from_scores(sorted_calib: np.ndarray, alphas, direction: str = DEFAULT_DIRECTION,
                        tau: Optional[np.ndarray] = None) -> np.ndarray:
    """Conformal p-values of test scores against an ascending calibration list.

    Without ``tau`` the test sample counts itself once. With ``tau`` (one
    uniform per score) the tied block including the test sample contributes
    the fraction ``tau``.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    n = sorted_calib.size
    n_le = np.searchsorted(sorted_calib, alphas, side="right")
    n_lt = np.searchsorted(sorted_calib, alphas, side="left")
    if direction == "paper-le":
        strict, inclusive = n_lt, n_le
    elif direction == "standard-ge":
        strict, inclusive = n - n_le, n - n_lt
    else:
        raise ConfigError(f"p-value direction must be one of {DIRECTIONS}")
    if tau is None:
        return (inclusive + 1) / (n + 1)
    ties = inclusive - strict
    return (strict + tau * (ties + 1)) / (n + 1)


def mondrian_pvalues(model: CalibrationModel, points: np.ndarray, y: int,
                     opts: PValueOptions = PValueOptions()) -> np.ndarray:
    """Label-conditional p-values of many points for one class."""
    model.check_class(y)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    alphas = model.scores(points, y)
    tau = tie_uniforms(points, y, opts.tie_seed) if opts.smoothed else None
    return pvalues_from_scores(model.calib_alphas[y], alphas, opts.direction, tau)


def icp_pvalues(model: CalibrationModel, points: np.ndarray, y: int,
                opts: PValueOptions = PValueOptions()) -> np.ndarray:
    """Plain inductive p-values, ranking against the pooled calibration scores."""
    model.check_class(y)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    alphas = model.scores(points, y)
    tau = tie_uniforms(points, y, opts.tie_seed) if opts.smoothed else None
    return pvalues_from_scores(model.pooled_alphas, alphas, opts.direction, tau)


def mondrian_p(model: CalibrationModel, x, y: int, opts: PValueOptions = PValueOptions()) -> float:
    return float(mondrian_pvalues(model, np.reshape(x, (1, -1)), y, opts)[0])


def icp_p(model: CalibrationModel, x, y: int, opts: PValueOptions = PValueOptions()) -> float:
    return float(icp_pvalues(model, np.reshape(x, (1, -1)), y, opts)[0])


def tcp_p(train: LabeledDataset, x, y: int, ncm: NcmConfig = NcmConfig(),
          direction: str = "paper-le") -> float:
    """Transductive p-value by exhaustive rescoring.

    The test point joins the training data with label ``y``; every sample is
    then scored with its own label against all other samples of that label.
    Quadratic in ``n``, intended as a small-instance reference.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if len(train) and x.size != train.n_features:
        raise DataError(f"query has {x.size} features, training data has {train.n_features}")
    features = np.vstack([train.features.reshape(-1, x.size), x])
    labels = np.append(train.labels, int(y))
    n1 = labels.size
    counts = np.bincount(labels)
    for c in np.flatnonzero(counts):
        if counts[c] - 1 < ncm.k:
            raise DataError(
                f"class {c} has {counts[c] - 1} other samples, fewer than k={ncm.k}"
            )
    alphas = np.empty(n1)
    for i in range(n1):
        same = [j for j in range(n1) if j != i and labels[j] == labels[i]]
        dists = sorted(distance(features[i], features[j], ncm.metric) for j in same)
        alphas[i] = sum(dists[: ncm.k])
    test = alphas[-1]
    if direction == "paper-le":
        count = int(np.sum(alphas <= test))
    elif direction == "standard-ge":
        count = int(np.sum(alphas >= test))
    else:
        raise ConfigError(f"p-value direction must be one of {DIRECTIONS}")
    return count / n1


def prediction_set(model: CalibrationModel, x, epsilon: float,
                   opts: PValueOptions = PValueOptions()) -> set[int]:
    """Labels whose Mondrian p-value strictly exceeds ``epsilon``."""
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError("epsilon must be in [0,1]")
    return {y for y in range(model.n_classes) if mondrian_p(model, x, y, opts) > epsilon}
