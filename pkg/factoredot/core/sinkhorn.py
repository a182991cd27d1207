"""
Entropically regularized OT with log-domain stabilization.

The iterations run on scaling vectors (u, v) against a stabilized kernel
exp(log_u_abs_i + log_v_abs_j - C_ij / eps). Large scalings are absorbed
into the log offsets; a scaling step that over- or underflows is redone in
the log domain with logsumexp. The plan is always u_i K_ij v_j.

The same machinery backs UpdatePlans in `factoredot.core.factored.solver`.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from factoredot.core.exception import ConvergenceError, MeasureError, NumericalError
from factoredot.core.measures import (
    DiscreteMeasure,
    TransportPlan,
    squared_cost_matrix,
)
from factoredot.types import SinkhornConfig

logger = logging.getLogger("factoredot.sinkhorn")


@dataclass(frozen=True, slots=True, eq=False)
class ScalingState:
    """
    Sinkhorn scalings with their absorbed log-domain offsets.

    The effective left scaling is u * exp(log_u_abs), likewise on the right.
    Offsets are dimensionless (dual potentials divided by epsilon).
    """

    u: np.ndarray
    v: np.ndarray
    log_u_abs: np.ndarray
    log_v_abs: np.ndarray

    @classmethod
    def initial(cls, n_rows: int, n_cols: int) -> "ScalingState":
        return cls(np.ones(n_rows), np.ones(n_cols), np.zeros(n_rows), np.zeros(n_cols))

    @classmethod
    def from_logs(cls, log_u: np.ndarray, log_v: np.ndarray) -> "ScalingState":
        return cls(np.ones_like(log_u), np.ones_like(log_v), log_u, log_v)

    @property
    def log_u(self) -> np.ndarray:
        """Effective log of the left scaling."""
        return np.log(self.u) + self.log_u_abs

    @property
    def log_v(self) -> np.ndarray:
        return np.log(self.v) + self.log_v_abs

    def max_log_scaling(self) -> float:
        return float(
            max(np.max(np.abs(np.log(self.u))), np.max(np.abs(np.log(self.v))))
        )

    def rescaled(self, ratio: float) -> "ScalingState":
        """Carry the dual potentials over to eps_new = eps_old / ratio."""
        return ScalingState.from_logs(self.log_u * ratio, self.log_v * ratio)


@dataclass(frozen=True, slots=True, eq=False)
class SinkhornResult:
    plan: TransportPlan
    transport_cost: float
    "<C, gamma>, the transport part only."

    entropy: float
    "-sum gamma log gamma."

    regularized_objective: float
    "<C, gamma> - eps * entropy, the quantity actually minimized."

    iterations: int
    violation: float
    state: ScalingState

    def __iter__(self):
        """Allow unpacking into (plan, objective)."""
        return iter((self.plan, self.transport_cost))


def gibbs_kernel(cost: np.ndarray, epsilon: float) -> np.ndarray:
    """
    exp(-cost / epsilon). The exponent is negative: the kernel favors cheap pairs.
    """
    if epsilon <= 0:
        raise MeasureError(f"epsilon must be > 0, got {epsilon}")
    return np.exp(-np.asarray(cost, dtype=np.float64) / epsilon)


def stabilized_kernel(cost: np.ndarray, epsilon: float, state: ScalingState) -> np.ndarray:
    return np.exp(
        state.log_u_abs[:, None] + state.log_v_abs[None, :] - cost / epsilon
    )


def absorb(state: ScalingState, threshold: Optional[float] = None) -> ScalingState:
    """
    Fold the scalings into the log offsets and reset them to 1.

    The reconstructed plan is unchanged. With a threshold, absorption only
    happens when some |log u_i| or |log v_j| exceeds it; otherwise the state
    is returned as is.
    """
    if threshold is not None and state.max_log_scaling() <= threshold:
        return state
    return ScalingState.from_logs(state.log_u, state.log_v)


def log_plan(cost: np.ndarray, epsilon: float, state: ScalingState) -> np.ndarray:
    return state.log_u[:, None] + state.log_v[None, :] - cost / epsilon


def plan_matrix(cost: np.ndarray, epsilon: float, state: ScalingState) -> np.ndarray:
    return np.exp(log_plan(cost, epsilon, state))


def entropic_terms(
    cost: np.ndarray, epsilon: float, state: ScalingState
) -> Tuple[np.ndarray, float, float]:
    """
    :returns: (plan, transport cost, sum gamma log gamma), the last one
        evaluated from the log-domain representation so underflowed entries
        contribute exactly 0.
    """
    lp = log_plan(cost, epsilon, state)
    plan = np.exp(lp)
    transport = float(np.sum(plan * cost))
    neg_entropy = float(np.sum(np.where(plan > 0, plan * lp, 0.0)))
    return plan, transport, neg_entropy


def _log_step(
    cost: np.ndarray,
    epsilon: float,
    state: ScalingState,
    log_a: np.ndarray,
    log_b: np.ndarray,
) -> ScalingState:
    """One full Sinkhorn iteration computed with logsumexp."""
    scaled = -cost / epsilon
    lu = log_a - logsumexp(state.log_v[None, :] + scaled, axis=1)
    lv = log_b - logsumexp(lu[:, None] + scaled, axis=0)
    return ScalingState.from_logs(lu, lv)


def _usable(*arrays: np.ndarray) -> bool:
    return all(np.all(np.isfinite(x)) and np.all(x > 0) for x in arrays)


def _run_scaling(
    cost: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    epsilon: float,
    cfg: SinkhornConfig,
    state: ScalingState,
) -> Tuple[ScalingState, float, int, bool]:
    """
    Alternate u- and v-updates until the L1 marginal violation is below cfg.tol.

    :returns: (state, violation, iterations, converged)
    """
    log_a, log_b = np.log(a), np.log(b)
    K = stabilized_kernel(cost, epsilon, state)
    u, v = state.u, state.v
    lua, lva = state.log_u_abs, state.log_v_abs
    violation = np.inf

    for it in range(1, cfg.max_iter + 1):
        u_new = a / (K @ v)
        v_new = b / (K.T @ u_new)

        if not _usable(u_new, v_new):
            rescued = _log_step(cost, epsilon, ScalingState(u, v, lua, lva), log_a, log_b)
            logger.debug(f"Log-domain rescue at iteration {it}")
            u, v, lua, lva = rescued.u, rescued.v, rescued.log_u_abs, rescued.log_v_abs
            K = stabilized_kernel(cost, epsilon, rescued)
        else:
            u, v = u_new, v_new
            current = ScalingState(u, v, lua, lva)
            absorbed = absorb(current, cfg.absorb_threshold)
            if absorbed is not current:
                logger.debug(f"Absorbing scalings at iteration {it}")
                u, v, lua, lva = absorbed.u, absorbed.v, absorbed.log_u_abs, absorbed.log_v_abs
                K = stabilized_kernel(cost, epsilon, absorbed)

        # columns are exact after the v-update, up to rounding
        rows = u * (K @ v)
        cols = v * (K.T @ u)
        violation = float(np.abs(rows - a).sum() + np.abs(cols - b).sum())
        if not np.isfinite(violation):
            raise NumericalError(f"Sinkhorn diverged at iteration {it}")
        if violation <= cfg.tol:
            return ScalingState(u, v, lua, lva), violation, it, True

    return ScalingState(u, v, lua, lva), violation, cfg.max_iter, False


def _epsilon_schedule(cost: np.ndarray, cfg: SinkhornConfig) -> list[float]:
    if not cfg.eps_scaling:
        return [cfg.epsilon]
    eps = max(float(cost.max()), cfg.epsilon)
    schedule = []
    while eps > cfg.epsilon:
        schedule.append(eps)
        eps *= cfg.eps_scaling_factor
    schedule.append(cfg.epsilon)
    return schedule


def sinkhorn_cost(
    cost: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    cfg: SinkhornConfig,
    *,
    init_state: Optional[ScalingState] = None,
) -> Tuple[np.ndarray, float, float, int, float, ScalingState]:
    """
    Sinkhorn on a bare cost matrix with strictly positive marginals.

    :returns: (plan matrix, transport cost, sum gamma log gamma, iterations, violation, state)
    :raises ConvergenceError: when cfg.max_iter is reached first.
    """
    state = init_state if init_state is not None else ScalingState.initial(*cost.shape)
    schedule = _epsilon_schedule(cost, cfg)
    total_iter = 0
    prev_eps = None
    for eps in schedule:
        if prev_eps is not None:
            state = state.rescaled(prev_eps / eps)
        state, violation, iters, converged = _run_scaling(cost, a, b, eps, cfg, state)
        total_iter += iters
        prev_eps = eps
        if not converged:
            plan = plan_matrix(cost, eps, state)
            raise ConvergenceError(
                f"Sinkhorn did not reach tol={cfg.tol} within {cfg.max_iter} "
                f"iterations at eps={eps:g} (violation {violation:.3e})",
                violation=violation,
                iterations=total_iter,
                last_plans=(plan,),
            )

    plan, transport, neg_entropy = entropic_terms(cost, cfg.epsilon, state)
    return plan, transport, neg_entropy, total_iter, violation, state


def sinkhorn_plan(
    a: DiscreteMeasure,
    b: DiscreteMeasure,
    cfg: SinkhornConfig = SinkhornConfig(),
    *,
    init_state: Optional[ScalingState] = None,
) -> SinkhornResult:
    """
    Entropic OT plan between two discrete measures.

    Points with zero weight are left out of the iterations and get empty
    rows/columns in the returned plan.

    :param cfg: Regularization and stopping settings.
    :param init_state: Warm start on the positive-weight support.
    :raises ConvergenceError: carrying the last plan and the achieved violation.
    """
    cost = squared_cost_matrix(a, b)
    rows = np.flatnonzero(a.weights > 0)
    cols = np.flatnonzero(b.weights > 0)
    sub_cost = cost[np.ix_(rows, cols)]

    try:
        sub_plan, transport, neg_entropy, iters, violation, state = sinkhorn_cost(
            sub_cost, a.weights[rows], b.weights[cols], cfg, init_state=init_state
        )
    except ConvergenceError as e:
        full = np.zeros(cost.shape)
        full[np.ix_(rows, cols)] = e.last_plan
        e.last_plans = (TransportPlan.between(full, a, b),)
        raise

    matrix = np.zeros(cost.shape)
    matrix[np.ix_(rows, cols)] = sub_plan
    logger.debug(
        f"Sinkhorn converged in {iters} iterations (eps={cfg.epsilon:g}, violation {violation:.2e})"
    )
    return SinkhornResult(
        plan=TransportPlan.between(matrix, a, b),
        transport_cost=transport,
        entropy=-neg_entropy,
        regularized_objective=transport + cfg.epsilon * neg_entropy,
        iterations=iters,
        violation=violation,
        state=state,
    )
