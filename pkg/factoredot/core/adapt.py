"""
Label transfer: move the source sample into the target space with a
transport method, then let each moved point take the majority label of its
nearest labeled target points.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from sklearn.neighbors import NearestNeighbors

from factoredot.core.exact_ot import solve_exact
from factoredot.core.exception import AdaptError, CapacityError, MeasureError
from factoredot.core.estimator import (
    induce_factored_coupling,
    kot_estimate,
    transport_map,
)
from factoredot.core.factored.solver import factored_ot
from factoredot.core.measures import DiscreteMeasure, LabeledDataset, TransportPlan
from factoredot.core.sinkhorn import sinkhorn_plan
from factoredot.types import AdaptMethod, FotConfig, RunTweaks, SinkhornConfig

logger = logging.getLogger("factoredot.adapt")

DEFAULT_KNN_K = 20


@dataclass(frozen=True, slots=True, eq=False)
class AdaptResult:
    predicted_labels: Tuple[str, ...]
    error_rate: Optional[float]
    "Fraction of source points whose predicted label differs from their own; None for unlabeled sources."

    method: AdaptMethod
    mapped: np.ndarray
    "Source points after projection into the target space."


def barycentric_projection(plan: TransportPlan, target: DiscreteMeasure) -> np.ndarray:
    """
    X_i -> sum_j gamma_ij Y_j / sum_j gamma_ij.

    :raises MeasureError: if some row of the plan is empty.
    """
    rows = plan.row_sums()
    if np.any(rows <= 0):
        raise MeasureError(f"Plan row {int(np.argmax(rows <= 0))} carries no mass")
    return (plan.matrix @ target.points) / rows[:, None]


def _vote(labels: np.ndarray, distances: np.ndarray) -> str:
    candidates = sorted(set(labels.tolist()))
    best = min(
        candidates,
        key=lambda c: (-int(np.sum(labels == c)), float(distances[labels == c].sum()), c),
    )
    return best


def knn_vote(
    queries: np.ndarray,
    reference: np.ndarray,
    reference_labels: Sequence[str],
    knn_k: int = DEFAULT_KNN_K,
) -> Tuple[str, ...]:
    """
    Majority label among the knn_k nearest reference points of each query.

    Ties go to the label with the smallest summed distance, then to the
    lexicographically smallest label.
    """
    index = NearestNeighbors(n_neighbors=knn_k).fit(reference)
    distances, neighbours = index.kneighbors(queries)
    labels = np.asarray(reference_labels, dtype=object)
    return tuple(_vote(labels[idx], dist) for idx, dist in zip(neighbours, distances))


def _plug_in_plan(
    source: DiscreteMeasure, target: DiscreteMeasure, tweaks: RunTweaks
) -> TransportPlan:
    try:
        return solve_exact(source, target, size_cap=tweaks.exact_cap).plan
    except CapacityError:
        logger.warning(
            f"Exact plan for {source.n} x {target.n} is over the cap; "
            f"projecting with Sinkhorn at eps={tweaks.plugin_fallback_epsilon:g}"
        )
        cfg = SinkhornConfig(epsilon=tweaks.plugin_fallback_epsilon, eps_scaling=True)
        return sinkhorn_plan(source, target, cfg).plan


def project(
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    method: AdaptMethod,
    cfg: FotConfig = FotConfig(),
    tweaks: RunTweaks = RunTweaks(),
) -> np.ndarray:
    """Map the source points into the target space with the given method."""
    if method == "nn_only":
        return np.array(source.points)
    if method == "fot":
        return transport_map(induce_factored_coupling(factored_ot(source, target, cfg)), source)
    if method == "ot":
        return barycentric_projection(_plug_in_plan(source, target, tweaks), target)
    if method == "sinkhorn":
        return barycentric_projection(sinkhorn_plan(source, target, cfg.sinkhorn).plan, target)
    if method == "kot":
        res = kot_estimate(source, target, cfg.k, seed=cfg.seed)
        shift = res.centroid_displacements()[res.source_clusters.assignment]
        return source.points + shift
    raise AdaptError(f"Unknown adaptation method '{method}'")


def adapt_labels(
    source: LabeledDataset,
    target: LabeledDataset,
    method: AdaptMethod = "fot",
    cfg: FotConfig = FotConfig(),
    knn_k: int = DEFAULT_KNN_K,
    tweaks: RunTweaks = RunTweaks(),
) -> AdaptResult:
    """
    Project, then classify by kNN vote against the labeled target.

    :raises AdaptError: if the target is unlabeled or knn_k is out of range.
    :raises MeasureError: on a dimension mismatch.
    """
    if not target.has_labels:
        raise AdaptError("The target dataset needs labels for the kNN vote")
    if knn_k < 1 or knn_k > target.measure.n:
        raise AdaptError(f"knn_k={knn_k} must lie in [1, {target.measure.n}]")
    if source.measure.dim != target.measure.dim:
        raise MeasureError(
            f"Dimension mismatch: {source.measure.dim} vs {target.measure.dim}"
        )

    mapped = project(source.measure, target.measure, method, cfg, tweaks)
    predicted = knn_vote(mapped, target.measure.points, target.labels, knn_k)

    error_rate = None
    if source.has_labels:
        mismatches = sum(p != s for p, s in zip(predicted, source.labels))
        error_rate = mismatches / source.measure.n
        logger.info(f"{method}: {mismatches}/{source.measure.n} source points mislabeled")
    return AdaptResult(predicted, error_rate, method, mapped)
