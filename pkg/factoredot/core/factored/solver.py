"""
FactoredOT: alternating minimization for the k-Wasserstein barycenter of
two empirical measures.

Hubs and the two hub-to-point plans are updated in turn, like Lloyd's
algorithm: UpdatePlans solves the entropic plan problem for fixed hubs by a
Sinkhorn-type iteration with a free, shared hub marginal; UpdateHubs moves
every hub to the mass-weighted mean of the points it is coupled to.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from factoredot.core.exception import ConvergenceError, MeasureError, NumericalError
from factoredot.core.factored.kmeans import count_distinct, kmeans
from factoredot.core.measures import (
    DiscreteMeasure,
    TransportPlan,
    squared_cost_matrix,
)
from factoredot.core.sinkhorn import (
    ScalingState,
    absorb,
    plan_matrix,
    stabilized_kernel,
)
from factoredot.types import FotConfig, SinkhornConfig

logger = logging.getLogger("factoredot.factored")

EMPTY_HUB_MASS = 1e-12


@dataclass(frozen=True, slots=True, eq=False)
class HubSet:
    """Support points z_1..z_k of the barycenter and their masses lambda_j."""

    hubs: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        hubs = np.atleast_2d(np.asarray(self.hubs, dtype=np.float64))
        masses = np.asarray(self.masses, dtype=np.float64).reshape(-1)
        if hubs.shape[0] < 1:
            raise MeasureError("A hub set needs at least one hub")
        if masses.shape[0] != hubs.shape[0]:
            raise MeasureError(f"Got {masses.shape[0]} masses for {hubs.shape[0]} hubs")
        if np.any(masses < 0) or abs(masses.sum() - 1.0) > 1e-9:
            raise MeasureError("Hub masses must be nonnegative and sum to 1")
        object.__setattr__(self, "hubs", hubs)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def uniform(cls, hubs) -> "HubSet":
        hubs = np.atleast_2d(np.asarray(hubs, dtype=np.float64))
        return cls(hubs, np.full(hubs.shape[0], 1.0 / hubs.shape[0]))

    @property
    def k(self) -> int:
        return self.hubs.shape[0]


@dataclass(frozen=True, slots=True, eq=False)
class PlanUpdate:
    """Output of UpdatePlans: plans are hubs x points."""

    plan0: TransportPlan
    plan1: TransportPlan
    states: Tuple[ScalingState, ScalingState]
    iterations: int
    violation: float

    def __iter__(self):
        """Allow unpacking into (plan0, plan1)."""
        return iter((self.plan0, self.plan1))


@dataclass(frozen=True, slots=True, eq=False)
class BarycenterSolution:
    hub_set: HubSet
    plan0: TransportPlan
    "gamma_0, hubs x source points."

    plan1: TransportPlan
    "gamma_1, hubs x target points."

    source: DiscreteMeasure
    target: DiscreteMeasure

    objective_trace: List[float]
    "Regularized barycenter objective after each outer iteration."

    transport_trace: List[float] = field(default_factory=list)
    "Transport part (no entropy) after each outer iteration."

    epsilon: float = 0.0
    outer_iterations: int = 0
    converged: bool = False

    @property
    def k(self) -> int:
        return self.hub_set.k

    @property
    def transport_objective(self) -> float:
        return self.transport_trace[-1] if self.transport_trace else float("nan")


def _check_dims(source: DiscreteMeasure, target: DiscreteMeasure):
    if source.dim != target.dim:
        raise MeasureError(f"Dimension mismatch: {source.dim} vs {target.dim}")


def hub_masses(plan0: TransportPlan, plan1: TransportPlan) -> np.ndarray:
    """
    lambda from the average of the two plans' row sums, renormalized.
    The two agree to solver tolerance; averaging makes the choice symmetric.
    """
    masses = 0.5 * (plan0.row_sums() + plan1.row_sums())
    return masses / masses.sum()


def update_hubs(
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    plan0: TransportPlan,
    plan1: TransportPlan,
) -> HubSet:
    """
    Move every hub to the mass-weighted mean of the source and target
    points it is coupled to:

        z_j = (sum_i g0[j,i] X_i + sum_i g1[j,i] Y_i) / (sum_i g0[j,i] + sum_i g1[j,i])

    A hub whose incident mass is below 1e-12 is re-seeded at the data point
    with the largest squared distance to its nearest surviving hub.
    """
    _check_dims(source, target)
    g0, g1 = plan0.matrix, plan1.matrix
    if g0.shape[0] != g1.shape[0]:
        raise MeasureError(f"Plans disagree on hub count: {g0.shape[0]} vs {g1.shape[0]}")

    incident = g0.sum(axis=1) + g1.sum(axis=1)
    numer = g0 @ source.points + g1 @ target.points
    alive = incident >= EMPTY_HUB_MASS
    if not np.any(alive):
        raise NumericalError("Every hub lost its mass")

    hubs = np.zeros_like(numer)
    hubs[alive] = numer[alive] / incident[alive, None]

    dead = np.flatnonzero(~alive)
    if dead.size:
        pooled = np.vstack([source.points, target.points])
        for j in dead:
            nearest = squared_cost_matrix(
                DiscreteMeasure(pooled), DiscreteMeasure(hubs[alive])
            ).min(axis=1)
            worst = int(np.argmax(nearest))
            hubs[j] = pooled[worst]
            alive[j] = True
            logger.warning(f"Hub {j} lost its mass; re-seeded at data point {worst}")

    return HubSet(hubs, hub_masses(plan0, plan1))


def _log_update_step(
    C0: np.ndarray,
    C1: np.ndarray,
    eps: float,
    s0: ScalingState,
    s1: ScalingState,
    log_b0: np.ndarray,
    log_b1: np.ndarray,
) -> Tuple[ScalingState, ScalingState]:
    """One UpdatePlans iteration in the log domain."""
    lu0, lu1 = s0.log_u, s1.log_u
    lv0 = log_b0 - logsumexp(lu0[:, None] - C0 / eps, axis=0)
    lv1 = log_b1 - logsumexp(lu1[:, None] - C1 / eps, axis=0)
    lk0 = logsumexp(lv0[None, :] - C0 / eps, axis=1)
    lk1 = logsumexp(lv1[None, :] - C1 / eps, axis=1)
    log_w = 0.5 * ((lu0 + lk0) + (lu1 + lk1))
    return (
        ScalingState.from_logs(log_w - lk0, lv0),
        ScalingState.from_logs(log_w - lk1, lv1),
    )


def _usable(*arrays: np.ndarray) -> bool:
    return all(np.all(np.isfinite(x)) and np.all(x > 0) for x in arrays)


def _scatter(sub_plan: np.ndarray, cols: np.ndarray, n: int) -> np.ndarray:
    full = np.zeros((sub_plan.shape[0], n))
    full[:, cols] = sub_plan
    return full


def update_plans(
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    hub_set: HubSet,
    cfg: SinkhornConfig = SinkhornConfig(),
    *,
    init_states: Optional[Tuple[ScalingState, ScalingState]] = None,
) -> PlanUpdate:
    """
    Entropic plans hubs -> source and hubs -> target sharing one hub marginal.

    Each iteration matches the point marginals (v-updates), takes the
    geometric mean w of the two current hub marginals, then rescales both
    plans to that w (u-updates). Stops when both point-marginal L1
    violations are <= cfg.tol. Row sums of the two returned plans agree by
    construction of the last u-update.

    Zero-weight points are left out of the iterations and get empty columns.

    :param init_states: Scalings from the previous outer iteration (warm start),
        sized to the positive-weight points.
    :raises ConvergenceError: carrying both last plans and the achieved violation.
    """
    _check_dims(source, target)
    if hub_set.hubs.shape[1] != source.dim:
        raise MeasureError(
            f"Hubs have dim {hub_set.hubs.shape[1]}, points have dim {source.dim}"
        )
    eps = cfg.epsilon
    hubs = DiscreteMeasure(hub_set.hubs)
    # zero-weight points stay out of the iterations and get empty columns
    cols0 = np.flatnonzero(source.weights > 0)
    cols1 = np.flatnonzero(target.weights > 0)
    C0 = squared_cost_matrix(hubs, source)[:, cols0]
    C1 = squared_cost_matrix(hubs, target)[:, cols1]
    b0, b1 = source.weights[cols0], target.weights[cols1]
    log_b0, log_b1 = np.log(b0), np.log(b1)
    k = hub_set.k

    if init_states is None:
        s0, s1 = ScalingState.initial(k, cols0.size), ScalingState.initial(k, cols1.size)
    else:
        s0, s1 = init_states

    K0, K1 = stabilized_kernel(C0, eps, s0), stabilized_kernel(C1, eps, s1)
    violation = np.inf

    for it in range(1, cfg.max_iter + 1):
        v0 = b0 / (K0.T @ s0.u)
        v1 = b1 / (K1.T @ s1.u)
        Kv0, Kv1 = K0 @ v0, K1 @ v1
        w = np.sqrt((s0.u * Kv0) * (s1.u * Kv1))
        u0, u1 = w / Kv0, w / Kv1

        if not _usable(u0, u1, v0, v1):
            logger.debug(f"UpdatePlans log-domain rescue at iteration {it}")
            s0, s1 = _log_update_step(C0, C1, eps, s0, s1, log_b0, log_b1)
            K0, K1 = stabilized_kernel(C0, eps, s0), stabilized_kernel(C1, eps, s1)
        else:
            s0 = ScalingState(u0, v0, s0.log_u_abs, s0.log_v_abs)
            s1 = ScalingState(u1, v1, s1.log_u_abs, s1.log_v_abs)
            a0, a1 = absorb(s0, cfg.absorb_threshold), absorb(s1, cfg.absorb_threshold)
            if a0 is not s0:
                s0, K0 = a0, stabilized_kernel(C0, eps, a0)
            if a1 is not s1:
                s1, K1 = a1, stabilized_kernel(C1, eps, a1)

        col0 = s0.v * (K0.T @ s0.u)
        col1 = s1.v * (K1.T @ s1.u)
        viol0 = float(np.abs(col0 - b0).sum())
        viol1 = float(np.abs(col1 - b1).sum())
        violation = max(viol0, viol1)
        if not np.isfinite(violation):
            raise NumericalError(f"UpdatePlans diverged at iteration {it}")
        if violation <= cfg.tol:
            break
    else:
        g0 = _scatter(plan_matrix(C0, eps, s0), cols0, source.n)
        g1 = _scatter(plan_matrix(C1, eps, s1), cols1, target.n)
        raise ConvergenceError(
            f"UpdatePlans did not reach tol={cfg.tol} within {cfg.max_iter} "
            f"iterations (violation {violation:.3e})",
            violation=violation,
            iterations=cfg.max_iter,
            last_plans=(g0, g1),
        )

    g0 = _scatter(plan_matrix(C0, eps, s0), cols0, source.n)
    g1 = _scatter(plan_matrix(C1, eps, s1), cols1, target.n)
    masses = 0.5 * (g0.sum(axis=1) + g1.sum(axis=1))
    masses = masses / masses.sum()
    return PlanUpdate(
        plan0=TransportPlan(g0, masses, source.weights),
        plan1=TransportPlan(g1, masses, target.weights),
        states=(s0, s1),
        iterations=it,
        violation=violation,
    )


def _xlogx(matrix: np.ndarray) -> float:
    positive = matrix > 0
    return float(np.sum(matrix[positive] * np.log(matrix[positive])))


def barycenter_objective(
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    hub_set: HubSet,
    plan0: TransportPlan,
    plan1: TransportPlan,
    epsilon: float,
) -> Tuple[float, float]:
    """
    :returns: (transport part, regularized objective), where the transport part
        is <C0, g0> + <C1, g1> and the regularized objective adds
        eps * sum(g log g) over both plans.
    """
    hubs = DiscreteMeasure(hub_set.hubs)
    transport = plan0.transport_cost(squared_cost_matrix(hubs, source)) + plan1.transport_cost(
        squared_cost_matrix(hubs, target)
    )
    regularized = transport + epsilon * (_xlogx(plan0.matrix) + _xlogx(plan1.matrix))
    return transport, regularized


def _positive(points: np.ndarray, weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    keep = weights > 0
    return points[keep], weights[keep]


def initial_hubs(source: DiscreteMeasure, target: DiscreteMeasure, cfg: FotConfig) -> HubSet:
    """
    Hubs before the first UpdatePlans: k-means centers of the chosen sample,
    or the given points. Falls back to the pooled sample when the chosen one
    has fewer than k distinct points. If even the pooled sample is too small,
    k-means places one hub per distinct point and the remaining hubs start on
    data points drawn with the run seed, carrying no mass.
    """
    if cfg.init == "given":
        hubs = np.asarray(cfg.init_points, dtype=np.float64)
        if hubs.shape != (cfg.k, source.dim):
            raise MeasureError(f"init_points must have shape ({cfg.k}, {source.dim})")
        return HubSet.uniform(hubs)

    samples = {
        "kmeans_source": (source.points, source.weights),
        "kmeans_target": (target.points, target.weights),
        "kmeans_pooled": (
            np.vstack([source.points, target.points]),
            np.concatenate([source.weights, target.weights]) / 2,
        ),
    }
    points, weights = _positive(*samples[cfg.init])
    if count_distinct(points) < cfg.k and cfg.init != "kmeans_pooled":
        logger.warning(
            f"{cfg.init} has fewer than k={cfg.k} distinct points; using the pooled sample"
        )
        points, weights = _positive(*samples["kmeans_pooled"])

    k_fit = min(cfg.k, count_distinct(points))
    result = kmeans(points, weights, k_fit, seed=cfg.seed)
    hubs = result.centers
    masses = result.cluster_masses(weights) / weights.sum()
    if k_fit < cfg.k:
        extra = cfg.k - k_fit
        rng = np.random.default_rng(cfg.seed)
        picks = rng.choice(points.shape[0], size=extra, replace=extra > points.shape[0])
        logger.warning(
            f"Only {k_fit} distinct support points; {extra} hub(s) start on sampled data points"
        )
        hubs = np.vstack([hubs, points[picks]])
        masses = np.concatenate([masses, np.zeros(extra)])
    return HubSet(hubs, masses)


def factored_ot(
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    cfg: FotConfig = FotConfig(),
) -> BarycenterSolution:
    """
    Alternate UpdatePlans and UpdateHubs until the transport part of the
    objective changes by less than cfg.outer_tol (relative) or
    cfg.outer_max_iter is reached. Returns the last iterate.

    :raises ConvergenceError: from UpdatePlans, with `outer_iteration` set.
    :raises NumericalError: if the objective becomes NaN or inf.
    """
    _check_dims(source, target)
    if cfg.k > min(source.n, target.n):
        logger.warning(
            f"k={cfg.k} exceeds min(n0, n1)={min(source.n, target.n)}; "
            "the factored coupling is no longer rank-restricted"
        )

    eps = cfg.sinkhorn.epsilon
    hub_set = initial_hubs(source, target, cfg)
    states = None
    objective_trace, transport_trace = [], []
    converged = False
    update = None

    for outer in range(1, cfg.outer_max_iter + 1):
        try:
            update = update_plans(source, target, hub_set, cfg.sinkhorn, init_states=states)
        except ConvergenceError as e:
            e.outer_iteration = outer
            e.args = (f"{e.args[0]} (outer iteration {outer})",)
            raise
        states = update.states
        hub_set = update_hubs(source, target, update.plan0, update.plan1)

        transport, regularized = barycenter_objective(
            source, target, hub_set, update.plan0, update.plan1, eps
        )
        if not (np.isfinite(transport) and np.isfinite(regularized)):
            raise NumericalError(f"Non-finite objective at outer iteration {outer}")
        logger.debug(
            f"outer {outer}: transport {transport:.8g}, regularized {regularized:.8g}, "
            f"inner iterations {update.iterations}"
        )

        prev = transport_trace[-1] if transport_trace else None
        objective_trace.append(regularized)
        transport_trace.append(transport)
        if prev is not None and abs(prev - transport) <= cfg.outer_tol * max(abs(prev), 1e-300):
            converged = True
            break

    if not converged:
        logger.warning(f"FactoredOT stopped at the outer iteration cap ({cfg.outer_max_iter})")

    return BarycenterSolution(
        hub_set=hub_set,
        plan0=update.plan0,
        plan1=update.plan1,
        source=source,
        target=target,
        objective_trace=objective_trace,
        transport_trace=transport_trace,
        epsilon=eps,
        outer_iterations=len(transport_trace),
        converged=converged,
    )
