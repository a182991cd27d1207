"""
Discrete measures, couplings between them, and the squared Euclidean cost.

Everything here is immutable after construction: arrays are copied to
float64 and flagged read-only, so measures and plans can be shared freely
between threads.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from factoredot.core.exception import MeasureError, EmptyInputError


DEFAULT_MARGINAL_TOL = 1e-6


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class DiscreteMeasure:
    """
    A weighted point cloud in R^d.

    Weights are divided by their sum on construction, so they always sum to 1
    up to a single rounding. Omitting weights gives the uniform measure 1/n.
    """

    __slots__ = ("points", "weights")

    def __init__(self, points, weights: Optional[Sequence[float]] = None):
        pts = np.array(points, dtype=np.float64, copy=True)
        if pts.size == 0:
            raise EmptyInputError("A discrete measure needs at least one point")
        if pts.ndim != 2:
            raise MeasureError(
                f"points must be an (n, d) array, got shape {pts.shape}"
            )
        if not np.all(np.isfinite(pts)):
            raise MeasureError("points must be finite")

        n = pts.shape[0]
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.array(weights, dtype=np.float64, copy=True).reshape(-1)
            if w.shape[0] != n:
                raise MeasureError(f"Got {w.shape[0]} weights for {n} points")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise MeasureError("weights must be finite and nonnegative")
            total = w.sum()
            if total <= 0:
                raise MeasureError("weights must have a positive sum")
            w = w / total

        self.points = _frozen(pts)
        self.weights = _frozen(w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def is_uniform(self, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.n, rtol=0.0, atol=atol))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def with_points(self, points) -> "DiscreteMeasure":
        """Same weights, new locations (used for pushforwards)."""
        return DiscreteMeasure(points, self.weights)

    def translated(self, shift) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points + np.asarray(shift, dtype=np.float64), self.weights)

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"DiscreteMeasure(n={self.n}, dim={self.dim})"


class TransportPlan:
    """
    A nonnegative coupling matrix together with the marginals it is meant to have.

    Construction only checks shapes and signs; use `validate_plan` for the
    marginal constraints. Solvers never return a plan that fails it.
    """

    __slots__ = ("matrix", "row_marginal", "col_marginal")

    def __init__(self, matrix, row_marginal, col_marginal):
        mat = np.array(matrix, dtype=np.float64, copy=True)
        rows = np.array(row_marginal, dtype=np.float64, copy=True).reshape(-1)
        cols = np.array(col_marginal, dtype=np.float64, copy=True).reshape(-1)
        if mat.ndim != 2 or mat.shape != (rows.shape[0], cols.shape[0]):
            raise MeasureError(
                f"Plan shape {mat.shape} does not match marginals "
                f"({rows.shape[0]}, {cols.shape[0]})"
            )
        if np.any(mat < 0):
            raise MeasureError("Transport plan entries must be nonnegative")
        if not np.all(np.isfinite(mat)):
            raise MeasureError("Transport plan entries must be finite")
        self.matrix = _frozen(mat)
        self.row_marginal = _frozen(rows)
        self.col_marginal = _frozen(cols)

    @classmethod
    def between(cls, matrix, a: DiscreteMeasure, b: DiscreteMeasure) -> "TransportPlan":
        return cls(matrix, a.weights, b.weights)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    def row_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=0)

    def transport_cost(self, cost: np.ndarray) -> float:
        return float(np.sum(self.matrix * cost))

    def __repr__(self):
        return f"TransportPlan(shape={self.shape})"


@dataclass(frozen=True, slots=True)
class LabeledDataset:
    """A measure plus (optionally) one categorical label per point."""

    measure: DiscreteMeasure
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != self.measure.n:
                raise MeasureError(
                    f"Got {len(labels)} labels for {self.measure.n} points"
                )
            object.__setattr__(self, "labels", labels)

    @property
    def has_labels(self) -> bool:
        return self.labels is not None


@dataclass(frozen=True, slots=True)
class FeasibilityReport:
    """L1 deviation of a plan's row and column sums from its declared marginals."""

    row_violation: float
    col_violation: float
    tol: float

    @property
    def max_violation(self) -> float:
        return max(self.row_violation, self.col_violation)

    @property
    def passed(self) -> bool:
        return self.row_violation <= self.tol and self.col_violation <= self.tol


def squared_cost_matrix(a: DiscreteMeasure, b: DiscreteMeasure) -> np.ndarray:
    """
    Pairwise squared Euclidean distances, entry (i, j) = ||a_i - b_j||^2.

    Each entry is computed on its own (no Gram-matrix expansion), so the
    result is exactly transposed when the arguments are swapped.

    :raises MeasureError: if the dimensions differ.
    """
    if a.dim != b.dim:
        raise MeasureError(f"Dimension mismatch: {a.dim} vs {b.dim}")
    return cdist(a.points, b.points, metric="sqeuclidean")


def validate_plan(plan: TransportPlan, tol: float = DEFAULT_MARGINAL_TOL) -> FeasibilityReport:
    """
    Report how far a plan is from its declared marginals. Never raises.

    :param tol: Feasibility tolerance in total-variation (L1) norm.
    """
    row_violation = float(np.abs(plan.row_sums() - plan.row_marginal).sum())
    col_violation = float(np.abs(plan.col_sums() - plan.col_marginal).sum())
    return FeasibilityReport(row_violation, col_violation, tol)
