import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.cluster import KMeans

from factoredot.core.exception import MeasureError

logger = logging.getLogger("factoredot.factored")

KMEANS_MAX_ITER = 100


@dataclass(frozen=True, slots=True, eq=False)
class KMeansResult:
    centers: np.ndarray
    "(k, d) cluster centers."

    assignment: np.ndarray
    "Hard assignment of every point to a center index."

    inertia: float
    "Weighted sum of squared distances to the assigned centers."

    iterations: int

    def cluster_masses(self, weights: np.ndarray) -> np.ndarray:
        return np.bincount(self.assignment, weights=weights, minlength=len(self.centers))


def count_distinct(points: np.ndarray) -> int:
    return int(np.unique(np.asarray(points), axis=0).shape[0])


def kmeans(
    points: np.ndarray,
    weights: Optional[np.ndarray],
    k: int,
    seed: int = 0,
) -> KMeansResult:
    """
    Weighted Lloyd iterations from k-means++ seeding.

    Stops at an assignment fixpoint (tol=0) or after 100 iterations.

    :param weights: Per-point weights (uniform if None).
    :raises MeasureError: if k exceeds the number of distinct points.
    """
    points = np.asarray(points, dtype=np.float64)
    if k < 1:
        raise MeasureError(f"k must be >= 1, got {k}")
    distinct = count_distinct(points)
    if k > distinct:
        raise MeasureError(f"k={k} exceeds the {distinct} distinct points")

    model = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=1,
        max_iter=KMEANS_MAX_ITER,
        tol=0.0,
        random_state=seed,
        algorithm="lloyd",
    )
    model.fit(points, sample_weight=weights)
    if model.n_iter_ >= KMEANS_MAX_ITER:
        logger.debug(f"k-means stopped at the {KMEANS_MAX_ITER}-iteration cap")

    return KMeansResult(
        centers=np.asarray(model.cluster_centers_, dtype=np.float64),
        assignment=np.asarray(model.labels_, dtype=np.intp),
        inertia=float(model.inertia_),
        iterations=int(model.n_iter_),
    )
