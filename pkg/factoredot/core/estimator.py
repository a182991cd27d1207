"""
From a barycenter solution to the deliverables: the factored coupling it
induces, cost(gamma), the estimator W_hat, the transport map T_hat and its
pushforward. Also the kOT and plug-in baselines reported next to W_hat.
"""

import logging
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from factoredot.core.exact_ot import DEFAULT_SIZE_CAP, solve_exact
from factoredot.core.exception import (
    CapacityError,
    ConsistencyError,
    MeasureError,
    NumericalError,
)
from factoredot.core.factored.kmeans import KMeansResult, kmeans
from factoredot.core.factored.solver import BarycenterSolution, factored_ot
from factoredot.core.measures import (
    DiscreteMeasure,
    TransportPlan,
    squared_cost_matrix,
)
from factoredot.core.sinkhorn import sinkhorn_plan
from factoredot.types import EstimateRecord, FotConfig, Method, RunTweaks, SinkhornConfig

logger = logging.getLogger("factoredot.estimator")

DROP_MASS = 1e-12
BALANCE_TOL = 1e-13
BALANCE_MAX_ITER = 1000
DECOMPOSITION_RTOL = 1e-9


@dataclass(frozen=True, slots=True, eq=False)
class SoftPartition:
    """
    Sub-measures C_1..C_k of a parent measure.

    clusters[j, i] is the mass cluster j puts on point i; summing over j
    gives the parent weights.
    """

    clusters: np.ndarray
    masses: np.ndarray
    centroids: np.ndarray

    @classmethod
    def from_clusters(cls, clusters: np.ndarray, points: np.ndarray) -> "SoftPartition":
        masses = clusters.sum(axis=1)
        centroids = (clusters @ points) / masses[:, None]
        return cls(clusters, masses, centroids)

    @property
    def k(self) -> int:
        return self.clusters.shape[0]

    def point_totals(self) -> np.ndarray:
        return self.clusters.sum(axis=0)


@dataclass(frozen=True, slots=True, eq=False)
class FactoredCoupling:
    """
    gamma = sum_j (1 / lambda_j) C_j^0 (x) C_j^1, stored through its two partitions.
    """

    source_partition: SoftPartition
    target_partition: SoftPartition
    masses: np.ndarray

    @property
    def rank(self) -> int:
        """Number of clusters that survived (the effective transport rank)."""
        return self.masses.shape[0]

    def full_coupling(self) -> np.ndarray:
        """The n0 x n1 coupling matrix."""
        c0 = self.source_partition.clusters
        c1 = self.target_partition.clusters
        return c0.T @ (c1 / self.masses[:, None])


def _balance(
    matrix: np.ndarray, row_target: np.ndarray, col_target: np.ndarray
) -> np.ndarray:
    """
    Diagonally rescale a nonnegative matrix until its row and column sums
    hit the targets (to BALANCE_TOL in L1). Starts from a nearly feasible
    matrix, so a handful of sweeps suffice.
    """
    out = matrix.copy()
    for _ in range(BALANCE_MAX_ITER):
        cols = out.sum(axis=0)
        out *= np.divide(col_target, cols, out=np.zeros_like(cols), where=cols > 0)[None, :]
        rows = out.sum(axis=1)
        out *= np.divide(row_target, rows, out=np.zeros_like(rows), where=rows > 0)[:, None]
        if np.abs(out.sum(axis=0) - col_target).sum() <= BALANCE_TOL:
            break
    return out


def induce_factored_coupling(sol: BarycenterSolution) -> FactoredCoupling:
    """
    Read the coupled soft partitions off a barycenter solution.

    Source cluster j is row j of gamma_0 and target cluster j is row j of
    gamma_1. Both sides are rescaled to the common lambda (the averaged hub
    masses) and to the exact point weights. Clusters with lambda_j < 1e-12
    are dropped with a warning.
    """
    masses = np.asarray(sol.hub_set.masses, dtype=np.float64)
    keep = masses >= DROP_MASS
    if not np.all(keep):
        logger.warning(
            f"Dropping {int((~keep).sum())} empty cluster(s); transport rank is {int(keep.sum())}"
        )
    masses = masses[keep] / masses[keep].sum()

    c0 = _balance(sol.plan0.matrix[keep], masses, sol.source.weights)
    c1 = _balance(sol.plan1.matrix[keep], masses, sol.target.weights)
    return FactoredCoupling(
        source_partition=SoftPartition.from_clusters(c0, sol.source.points),
        target_partition=SoftPartition.from_clusters(c1, sol.target.points),
        masses=masses,
    )


def cost(fc: FactoredCoupling) -> float:
    """cost(gamma) = sum_j lambda_j ||mu(C_j^0) - mu(C_j^1)||^2."""
    diff = fc.source_partition.centroids - fc.target_partition.centroids
    return float(np.sum(fc.masses * np.sum(diff**2, axis=1)))


def _intra_cluster_variance(partition: SoftPartition, points: np.ndarray) -> float:
    sq = squared_cost_matrix(DiscreteMeasure(partition.centroids), DiscreteMeasure(points))
    return float(np.sum(partition.clusters * sq))


def partition_objective(
    fc: FactoredCoupling, source: DiscreteMeasure, target: DiscreteMeasure
) -> float:
    """
    Half the transport term plus both intra-cluster variances: the quantity
    the barycenter's induced partitions minimize.
    """
    return (
        0.5 * cost(fc)
        + _intra_cluster_variance(fc.source_partition, source.points)
        + _intra_cluster_variance(fc.target_partition, target.points)
    )


def total_transport_integral(
    fc: FactoredCoupling, source: DiscreteMeasure, target: DiscreteMeasure
) -> float:
    """
    The integral of ||x - y||^2 under the factored coupling, computed both
    directly and as cost + intra-cluster variances.

    :raises ConsistencyError: if the two disagree beyond 1e-9 relative.
    """
    direct = float(np.sum(fc.full_coupling() * squared_cost_matrix(source, target)))
    decomposed = (
        cost(fc)
        + _intra_cluster_variance(fc.source_partition, source.points)
        + _intra_cluster_variance(fc.target_partition, target.points)
    )
    if abs(direct - decomposed) > DECOMPOSITION_RTOL * max(abs(direct), abs(decomposed), 1e-300):
        raise ConsistencyError(
            f"Transport integral {direct!r} != cost + variances {decomposed!r}"
        )
    return direct


def transport_map(fc: FactoredCoupling, source: DiscreteMeasure) -> np.ndarray:
    """
    T_hat(X_i) = X_i + sum_j C_j^0(X_i) (mu(C_j^1) - mu(C_j^0)) / sum_j C_j^0(X_i).

    :raises MeasureError: if some source point carries no cluster mass.
    """
    clusters = fc.source_partition.clusters
    totals = clusters.sum(axis=0)
    if np.any(totals <= 0):
        raise MeasureError(
            f"Source point {int(np.argmax(totals <= 0))} has zero cluster mass"
        )
    displacement = fc.target_partition.centroids - fc.source_partition.centroids
    return source.points + (clusters.T @ displacement) / totals[:, None]


def pushforward(fc: FactoredCoupling, source: DiscreteMeasure) -> DiscreteMeasure:
    """T_hat pushed forward: source weights at the mapped points."""
    return source.with_points(transport_map(fc, source))


def w_hat(
    source: DiscreteMeasure, target: DiscreteMeasure, cfg: FotConfig = FotConfig()
) -> float:
    """W_hat = cost of the factored coupling induced by the FactoredOT solution."""
    sol = factored_ot(source, target, cfg)
    return cost(induce_factored_coupling(sol))


@dataclass(frozen=True, slots=True, eq=False)
class KotResult:
    cost: float
    plan: TransportPlan
    "Centroid-to-centroid plan."

    source_clusters: KMeansResult
    target_clusters: KMeansResult

    def centroid_displacements(self) -> np.ndarray:
        """Barycentric displacement of every source centroid."""
        g = self.plan.matrix
        mapped = (g @ self.target_clusters.centers) / g.sum(axis=1)[:, None]
        return mapped - self.source_clusters.centers


def kot_estimate(
    source: DiscreteMeasure, target: DiscreteMeasure, k: int, seed: int = 0
) -> KotResult:
    """
    k-means on each sample separately, then exact OT between the two
    centroid measures (cluster weights as masses).
    """
    k0 = min(k, source.n)
    k1 = min(k, target.n)
    clusters0 = kmeans(source.points, source.weights, k0, seed=seed)
    clusters1 = kmeans(target.points, target.weights, k1, seed=seed)
    m0 = DiscreteMeasure(clusters0.centers, clusters0.cluster_masses(source.weights))
    m1 = DiscreteMeasure(clusters1.centers, clusters1.cluster_masses(target.weights))
    sol = solve_exact(m0, m1)
    return KotResult(sol.cost, sol.plan, clusters0, clusters1)


def plug_in(
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    tweaks: RunTweaks = RunTweaks(),
) -> Tuple[float, bool]:
    """
    W2^2 between the empirical measures: exact up to the size cap, then
    Sinkhorn at tweaks.plugin_fallback_epsilon.

    :returns: (value, approximate?)
    """
    try:
        return solve_exact(source, target, size_cap=tweaks.exact_cap).cost, False
    except CapacityError:
        logger.warning(
            f"Plug-in OT on {source.n} x {target.n} is over the exact cap; "
            f"using Sinkhorn at eps={tweaks.plugin_fallback_epsilon:g}"
        )
        res = sinkhorn_plan(
            source, target, SinkhornConfig(epsilon=tweaks.plugin_fallback_epsilon, eps_scaling=True)
        )
        return res.transport_cost, True


def estimate(
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    method: Method,
    cfg: FotConfig = FotConfig(),
    tweaks: RunTweaks = RunTweaks(),
    *,
    compare: bool = True,
    plug_in_fallback: bool = False,
) -> EstimateRecord:
    """
    Run one estimation method and pack the result record.

    :param compare: Report the plug-in cost (when under the exact cap) and
        the kOT cost next to the method's own estimate. Sweeps turn it off.
    :param plug_in_fallback: Let method "ot" fall back to Sinkhorn above the
        exact cap (flagged in the record) instead of raising CapacityError.
    """
    if source.dim != target.dim:
        raise MeasureError(f"Dimension mismatch: {source.dim} vs {target.dim}")

    started = time.perf_counter()
    record: EstimateRecord = {
        "method": method,
        "k": cfg.k if method in ("fot", "kot") else None,
        "epsilon": cfg.sinkhorn.epsilon if method in ("fot", "sinkhorn") else None,
        "seed": cfg.seed,
        "w_hat": None,
        "plug_in_cost": None,
        "runtime_ms": 0.0,
        "n0": source.n,
        "n1": target.n,
        "d": source.dim,
        "kot_cost": None,
        "plug_in_approx": False,
        "transport_rank": None,
        "outer_iterations": None,
        "regularized_objective": None,
        "partition_objective": None,
    }

    if method == "fot":
        sol = factored_ot(source, target, cfg)
        fc = induce_factored_coupling(sol)
        record["w_hat"] = cost(fc)
        record["transport_rank"] = fc.rank
        record["outer_iterations"] = sol.outer_iterations
        record["regularized_objective"] = sol.objective_trace[-1]
        record["partition_objective"] = partition_objective(fc, source, target)
    elif method == "ot":
        if plug_in_fallback:
            value, approx = plug_in(source, target, tweaks)
        else:
            value, approx = solve_exact(source, target, size_cap=tweaks.exact_cap).cost, False
        record["w_hat"] = value
        record["plug_in_cost"] = value
        record["plug_in_approx"] = approx
        if approx:
            record["epsilon"] = tweaks.plugin_fallback_epsilon
    elif method == "sinkhorn":
        res = sinkhorn_plan(source, target, cfg.sinkhorn)
        record["w_hat"] = res.transport_cost
        record["regularized_objective"] = res.regularized_objective
    elif method == "kot":
        record["w_hat"] = kot_estimate(source, target, cfg.k, seed=cfg.seed).cost
        record["kot_cost"] = record["w_hat"]
    else:
        raise MeasureError(f"Unknown method '{method}'")

    record["runtime_ms"] = (time.perf_counter() - started) * 1000.0

    if compare:
        if record["plug_in_cost"] is None and source.n * target.n <= tweaks.exact_cap:
            record["plug_in_cost"] = solve_exact(source, target, size_cap=tweaks.exact_cap).cost
        if record["kot_cost"] is None:
            record["kot_cost"] = kot_estimate(source, target, cfg.k, seed=cfg.seed).cost

    if record["w_hat"] is None or not np.isfinite(record["w_hat"]):
        raise NumericalError(f"{method} produced a non-finite estimate")
    return record
