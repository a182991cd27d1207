import numpy as np
import pytest

from factoredot.core.exact_ot import solve_exact
from factoredot.core.exception import ConvergenceError, MeasureError
from factoredot.core.measures import DiscreteMeasure, TransportPlan, squared_cost_matrix, validate_plan
from factoredot.core.sinkhorn import (
    ScalingState,
    absorb,
    gibbs_kernel,
    plan_matrix,
    sinkhorn_plan,
)
from factoredot.testing.fixtures import random_measure
from factoredot.types import SinkhornConfig


class TestKernel:
    def test_exponent_is_negative(self):
        """Cheap pairs get the larger kernel entries"""
        k = gibbs_kernel(np.array([[0.0, 1.0]]), 1.0)
        assert np.allclose(k, [[1.0, np.exp(-1.0)]])

    def test_epsilon_must_be_positive(self):
        with pytest.raises(MeasureError):
            gibbs_kernel(np.zeros((1, 1)), 0.0)

    def test_absorb_keeps_the_plan(self, rng):
        cost = rng.uniform(0, 1, size=(4, 5))
        state = ScalingState(
            rng.uniform(0.5, 2, size=4),
            rng.uniform(0.5, 2, size=5),
            rng.standard_normal(4),
            rng.standard_normal(5),
        )
        absorbed = absorb(state)
        assert np.allclose(absorbed.u, 1.0) and np.allclose(absorbed.v, 1.0)
        assert np.allclose(plan_matrix(cost, 0.3, state), plan_matrix(cost, 0.3, absorbed), rtol=1e-12)

    def test_absorb_below_threshold_is_a_no_op(self):
        state = ScalingState.initial(3, 3)
        assert absorb(state, threshold=50.0) is state


class TestSinkhornPlan:
    def test_marginals_within_tolerance(self, rng):
        a = random_measure(rng, 12, 3, uniform=False)
        b = random_measure(rng, 9, 3)
        res = sinkhorn_plan(a, b, SinkhornConfig(epsilon=0.5, tol=1e-9))
        assert validate_plan(res.plan, tol=1e-8).passed
        assert res.violation <= 1e-9

    def test_objective_parts(self, rng):
        a = random_measure(rng, 5, 2)
        b = random_measure(rng, 6, 2)
        cfg = SinkhornConfig(epsilon=0.2, tol=1e-10)
        res = sinkhorn_plan(a, b, cfg)
        cost = squared_cost_matrix(a, b)
        assert res.transport_cost == pytest.approx(float(np.sum(res.plan.matrix * cost)))
        assert res.regularized_objective == pytest.approx(res.transport_cost - 0.2 * res.entropy)
        plan, value = res
        assert value == res.transport_cost and plan is res.plan

    def test_small_epsilon_matches_exact(self, rng):
        """At eps=1e-3 the transport cost is within 1% of exact OT on 4x4 instances"""
        for _ in range(5):
            a = DiscreteMeasure(rng.uniform(0, 10, size=(4, 2)))
            b = DiscreteMeasure(rng.uniform(0, 10, size=(4, 2)))
            exact = solve_exact(a, b).cost
            cfg = SinkhornConfig(epsilon=1e-3, eps_scaling=True, max_iter=100_000)
            res = sinkhorn_plan(a, b, cfg)
            assert res.transport_cost == pytest.approx(exact, rel=1e-2)

    def test_tiny_epsilon_never_produces_nan(self, rng):
        a = random_measure(rng, 8, 2, scale=3.0)
        b = random_measure(rng, 8, 2, scale=3.0)
        cfg = SinkhornConfig(epsilon=1e-4, eps_scaling=True, max_iter=20_000)
        try:
            plan = sinkhorn_plan(a, b, cfg).plan
        except ConvergenceError as e:
            plan = e.last_plan
        assert isinstance(plan, TransportPlan)
        assert np.all(np.isfinite(plan.matrix))

    def test_iteration_cap_raises_with_last_plan(self, rng):
        a = random_measure(rng, 6, 2, uniform=False)
        b = random_measure(rng, 7, 2, uniform=False)
        with pytest.raises(ConvergenceError) as info:
            sinkhorn_plan(a, b, SinkhornConfig(epsilon=0.05, tol=1e-14, max_iter=1))
        e = info.value
        assert e.iterations == 1
        assert e.violation > 1e-14
        assert e.last_plan.shape == (6, 7)

    def test_zero_weight_points_get_empty_rows(self):
        a = DiscreteMeasure([[0.0], [1.0], [2.0]], [0.5, 0.0, 0.5])
        b = DiscreteMeasure([[0.0], [2.0]])
        res = sinkhorn_plan(a, b, SinkhornConfig(epsilon=0.1, tol=1e-10))
        assert np.all(res.plan.matrix[1] == 0.0)
        assert validate_plan(res.plan, tol=1e-9).passed

    def test_warm_start_takes_fewer_iterations(self, rng):
        a = random_measure(rng, 10, 2)
        b = random_measure(rng, 10, 2)
        cfg = SinkhornConfig(epsilon=0.1, tol=1e-9)
        cold = sinkhorn_plan(a, b, cfg)
        warm = sinkhorn_plan(a, b, cfg, init_state=cold.state)
        assert warm.iterations <= 2
        assert warm.transport_cost == pytest.approx(cold.transport_cost, rel=1e-6)


class TestEntropicShape:
    def test_cost_shrinks_with_epsilon(self, rng):
        a = random_measure(rng, 6, 2)
        b = random_measure(rng, 6, 2)
        costs = [
            sinkhorn_plan(
                a, b, SinkhornConfig(epsilon=eps, tol=1e-11, max_iter=200_000, eps_scaling=True)
            ).transport_cost
            for eps in (1e-1, 1e-3)
        ]
        exact = solve_exact(a, b).cost
        assert costs[0] >= costs[1] - 1e-9
        assert costs[1] >= exact - 1e-9

    def test_two_point_plan_is_symmetric(self):
        a = DiscreteMeasure([[-1.0], [1.0]])
        res = sinkhorn_plan(a, a, SinkhornConfig(epsilon=1.0, tol=1e-12))
        p = res.plan.matrix
        assert p[0, 0] == pytest.approx(p[1, 1], abs=1e-15)
        assert p[0, 1] == pytest.approx(p[1, 0], abs=1e-15)
        assert p[0, 0] > p[0, 1] > 0

    def test_every_entry_is_positive(self, rng):
        a = random_measure(rng, 8, 3)
        b = random_measure(rng, 7, 3)
        res = sinkhorn_plan(a, b, SinkhornConfig(epsilon=1.0, tol=1e-9))
        assert np.all(res.plan.matrix > 0)

    def test_absorb_huge_scaling(self):
        cost = np.array([[0.0, 1.0], [1.0, 0.0]])
        state = ScalingState(np.array([1e30, 1.0]), np.ones(2), np.zeros(2), np.zeros(2))
        absorbed = absorb(state, threshold=50.0)
        assert np.array_equal(absorbed.u, np.ones(2))
        assert absorbed.log_u_abs[0] == pytest.approx(np.log(1e30))
        assert np.allclose(plan_matrix(cost, 0.5, state), plan_matrix(cost, 0.5, absorbed), rtol=1e-12)
