"""k-nearest-neighbour non-conformity scores against the proper training set.

The score of ``(x, y)`` is the sum of distances from ``x`` to its ``k``
nearest proper-set points labelled ``y``; larger means stranger.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .dataset import LabeledDataset
from .errors import ConfigError, DataError

METRICS = ("euclidean", "manhattan")
_MINKOWSKI_P = {"euclidean": 2, "manhattan": 1}


@dataclass(frozen=True)
class NcmConfig:
    k: int = 1
    metric: str = "euclidean"

    def __post_init__(self):
        if int(self.k) < 1:
            raise ConfigError("k must be a positive integer")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}")


def distance(a, b, metric: str = "euclidean") -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    if metric == "euclidean":
        return float(np.sqrt(np.sum(diff * diff)))
    if metric == "manhattan":
        return float(np.sum(diff))
    raise ConfigError(f"metric must be one of {METRICS}")


class ProperIndex:
    """Per-class nearest-neighbour search over the proper training set.

    Immutable after construction; concurrent queries are safe.
    """

    def __init__(self, proper: LabeledDataset, config: NcmConfig):
        self.config = config
        self.n_classes = proper.n_classes
        self.n_features = proper.n_features
        self._points = []
        self._trees = []
        counts = proper.class_counts()
        for y in range(proper.n_classes):
            if counts[y] == 0:
                raise DataError(f"class {y} has no proper-set samples")
            if counts[y] < config.k:
                raise DataError(
                    f"class {y} has {counts[y]} proper-set samples, fewer than k={config.k}"
                )
            pts = proper.features[proper.labels == y]
            self._points.append(pts)
            self._trees.append(cKDTree(pts))

    def class_points(self, y: int) -> np.ndarray:
        self._check_class(y)
        return self._points[y]

    def _check_class(self, y: int) -> None:
        if not 0 <= int(y) < self.n_classes:
            raise DataError(f"unknown class {y}")

    def _query(self, points: np.ndarray, y: int):
        self._check_class(y)
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if points.shape[1] != self.n_features:
            raise DataError(f"query has {points.shape[1]} features, index has {self.n_features}")
        k = self.config.k
        dist, idx = self._trees[y].query(points, k=k, p=_MINKOWSKI_P[self.config.metric])
        return dist.reshape(-1, k), idx.reshape(-1, k)

    def scores(self, points: np.ndarray, y: int) -> np.ndarray:
        """Non-conformity scores of every row of ``points`` extended with label ``y``."""
        dist, _ = self._query(points, y)
        return dist.sum(axis=1)

    def neighbors(self, point, y: int) -> tuple[np.ndarray, np.ndarray]:
        """The ``k`` nearest class-``y`` proper points of one query.

        Returns ``(indices, distances)`` with indices into the class's points
        in insertion order; equal distances are ordered by ascending index.
        """
        dist, _ = self._query(point, y)
        radius = dist[0, -1]
        p = _MINKOWSKI_P[self.config.metric]
        pts = self._points[y]
        cand = np.asarray(self._trees[y].query_ball_point(np.ravel(point), radius * (1 + 1e-12) + 1e-300, p=p),
                          dtype=np.int64)
        cand_dist = np.array([distance(point, pts[i], self.config.metric) for i in cand])
        order = np.lexsort((cand, cand_dist))[: self.config.k]
        return cand[order], cand_dist[order]


def knn_ncm(x, y: int, index: ProperIndex, config: NcmConfig | None = None) -> float:
    """Score of a single query; see :meth:`ProperIndex.scores`."""
    if config is not None and config != index.config:
        raise ConfigError("config does not match the one the index was built with")
    return float(index.scores(np.asarray(x, dtype=np.float64).reshape(1, -1), y)[0])
