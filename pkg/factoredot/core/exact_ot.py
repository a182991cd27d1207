"""
Exact discrete optimal transport for small instances.

This is the plug-in baseline W2^2(P0_hat, P1_hat) and the oracle the
approximate solvers are checked against.
"""

import logging
from dataclasses import dataclass

import numpy as np
import ot
from scipy.optimize import linear_sum_assignment

from factoredot.core.exception import (
    CapacityError,
    ConvergenceError,
    MeasureError,
    NumericalError,
)
from factoredot.core.measures import (
    DiscreteMeasure,
    TransportPlan,
    squared_cost_matrix,
)

logger = logging.getLogger("factoredot.exact_ot")

DEFAULT_SIZE_CAP = 5_000_000
EMD_MAX_ITER = 10_000_000
EMD_MAX_ITER_REACHED = 3
"Network simplex result code for stopping at the iteration cap."


@dataclass(frozen=True, slots=True)
class ExactSolution:
    plan: TransportPlan
    cost: float
    "Optimal value of the discrete problem (squared Wasserstein distance)."


def solve_exact(
    a: DiscreteMeasure, b: DiscreteMeasure, *, size_cap: int = DEFAULT_SIZE_CAP
) -> ExactSolution:
    """
    Solve min <C, gamma> over couplings of a and b with the network simplex.

    Costs are divided by their largest entry before solving and the objective
    is recomputed on the original costs afterwards.

    :param size_cap: Largest n0 * n1 accepted.
    :raises CapacityError: above the size cap.
    :raises MeasureError: on a dimension mismatch.
    :raises ConvergenceError: if the network simplex stops at its iteration cap.
    """
    if a.dim != b.dim:
        raise MeasureError(f"Dimension mismatch: {a.dim} vs {b.dim}")
    if a.n * b.n > size_cap:
        raise CapacityError(
            f"Exact OT on a {a.n} x {b.n} instance exceeds the size cap of "
            f"{size_cap} entries; use the Sinkhorn solver (method 'sinkhorn') instead"
        )

    cost = squared_cost_matrix(a, b)
    scale = float(cost.max())
    scaled = cost / scale if scale > 0 else cost

    matrix, log = ot.emd(
        np.asarray(a.weights),
        np.asarray(b.weights),
        scaled,
        numItermax=EMD_MAX_ITER,
        log=True,
    )
    matrix = np.maximum(np.asarray(matrix, dtype=np.float64), 0.0)
    if log.get("result_code") == EMD_MAX_ITER_REACHED:
        violation = float(
            np.abs(matrix.sum(axis=1) - a.weights).sum()
            + np.abs(matrix.sum(axis=0) - b.weights).sum()
        )
        raise ConvergenceError(
            f"Network simplex stopped at {EMD_MAX_ITER} iterations on a {a.n} x {b.n} "
            "instance; the plan is not optimal",
            violation=violation,
            iterations=EMD_MAX_ITER,
            last_plans=(TransportPlan.between(matrix, a, b),),
        )
    if log.get("warning"):
        logger.warning(f"Network simplex: {log['warning']}")

    value = float(np.sum(matrix * cost))
    if not np.isfinite(value):
        raise NumericalError("Exact OT produced a non-finite objective")
    return ExactSolution(TransportPlan.between(matrix, a, b), value)


def solve_assignment(a: DiscreteMeasure, b: DiscreteMeasure) -> ExactSolution:
    """
    Fast path for two uniform measures of equal size: the optimum is a
    permutation, found with the Hungarian method.

    :raises MeasureError: if sizes differ, weights are not uniform, or dims differ.
    """
    if a.n != b.n:
        raise MeasureError(f"Assignment needs equal sizes, got {a.n} and {b.n}")
    if not (a.is_uniform() and b.is_uniform()):
        raise MeasureError("Assignment needs uniform weights on both measures")

    cost = squared_cost_matrix(a, b)
    rows, cols = linear_sum_assignment(cost)

    n = a.n
    matrix = np.zeros((n, n))
    matrix[rows, cols] = 1.0 / n
    value = float(cost[rows, cols].sum() / n)
    return ExactSolution(TransportPlan.between(matrix, a, b), value)
