import dataclasses

import numpy as np
import pytest

from factoredot.core.estimator import (
    FactoredCoupling,
    SoftPartition,
    cost,
    estimate,
    induce_factored_coupling,
    kot_estimate,
    partition_objective,
    plug_in,
    pushforward,
    total_transport_integral,
    transport_map,
    w_hat,
)
from factoredot.core.exact_ot import solve_exact
from factoredot.core.exception import CapacityError, ConsistencyError, MeasureError
from factoredot.core.factored.solver import factored_ot
from factoredot.core.measures import DiscreteMeasure, squared_cost_matrix
from factoredot.testing.fixtures import random_pair, two_isolated_pairs
from factoredot.types import FotConfig, RunTweaks, SinkhornConfig

FAST = SinkhornConfig(epsilon=0.5, tol=1e-10)


def _single_cluster(source: DiscreteMeasure, target: DiscreteMeasure) -> FactoredCoupling:
    return FactoredCoupling(
        SoftPartition.from_clusters(source.weights[None, :].copy(), source.points),
        SoftPartition.from_clusters(target.weights[None, :].copy(), target.points),
        np.array([1.0]),
    )


class TestInducedCoupling:
    def test_partition_invariants(self, rng):
        source, target = random_pair(rng, 20, 15, 2)
        sol = factored_ot(source, target, FotConfig(k=3, sinkhorn=FAST))
        fc = induce_factored_coupling(sol)
        sp, tp = fc.source_partition, fc.target_partition
        assert np.allclose(sp.point_totals(), source.weights, atol=1e-9)
        assert np.allclose(tp.point_totals(), target.weights, atol=1e-9)
        assert np.allclose(sp.masses, fc.masses, atol=1e-6)
        assert np.allclose(tp.masses, fc.masses, atol=1e-6)
        assert np.allclose(sp.centroids, (sp.clusters @ source.points) / sp.masses[:, None], atol=1e-9)

        full = fc.full_coupling()
        assert np.abs(full.sum(axis=1) - source.weights).sum() <= 1e-6
        assert np.abs(full.sum(axis=0) - target.weights).sum() <= 1e-6
        assert fc.rank == 3

    def test_k1_cluster_is_the_whole_sample(self, rng):
        source, target = random_pair(rng, 12, 9, 3)
        fc = induce_factored_coupling(factored_ot(source, target, FotConfig(k=1)))
        assert np.allclose(fc.source_partition.centroids[0], source.mean())
        assert np.allclose(fc.target_partition.centroids[0], target.mean())


class TestCost:
    def test_one_cluster(self):
        source = DiscreteMeasure([[0.0, 0.0]])
        target = DiscreteMeasure([[2.0, 0.0]])
        assert cost(_single_cluster(source, target)) == pytest.approx(4.0)

    def test_same_partition_costs_nothing(self, rng):
        m = DiscreteMeasure(rng.standard_normal((6, 2)))
        assert cost(_single_cluster(m, m)) == 0.0

    def test_shift_with_one_hub(self, rng):
        """With k=1 the estimate is exactly the squared mean shift"""
        source = DiscreteMeasure(rng.standard_normal((25, 3)))
        v = np.array([1.0, -2.0, 0.5])
        target = DiscreteMeasure(rng.standard_normal((30, 3))).translated(v)
        expected = float(np.sum((target.mean() - source.mean()) ** 2))
        assert w_hat(source, target, FotConfig(k=1)) == pytest.approx(expected, abs=1e-6)

    def test_identical_samples(self, rng):
        m = DiscreteMeasure(rng.standard_normal((20, 2)))
        assert w_hat(m, m, FotConfig(k=3)) <= 1e-3


class TestDecomposition:
    def test_bias_variance_identity_for_one_cluster(self, rng):
        source, target = random_pair(rng, 7, 9, 2)
        value = total_transport_integral(_single_cluster(source, target), source, target)
        var0 = float(source.weights @ np.sum((source.points - source.mean()) ** 2, axis=1))
        var1 = float(target.weights @ np.sum((target.points - target.mean()) ** 2, axis=1))
        shift = float(np.sum((source.mean() - target.mean()) ** 2))
        assert value == pytest.approx(shift + var0 + var1, rel=1e-12)

    def test_point_masses(self):
        source = DiscreteMeasure([[1.0, 1.0]])
        target = DiscreteMeasure([[4.0, 5.0]])
        assert total_transport_integral(_single_cluster(source, target), source, target) == pytest.approx(25.0)

    def test_converged_solutions_agree(self, rng):
        for _ in range(10):
            n0, n1 = (int(x) for x in rng.integers(8, 30, size=2))
            k = int(rng.integers(1, 6))
            source, target = random_pair(rng, n0, n1, 2)
            fc = induce_factored_coupling(factored_ot(source, target, FotConfig(k=k, sinkhorn=FAST)))
            direct = float(np.sum(fc.full_coupling() * squared_cost_matrix(source, target)))
            assert total_transport_integral(fc, source, target) == pytest.approx(direct, rel=1e-12)
            assert cost(fc) <= direct + 1e-12

    def test_mismatch_raises(self):
        source = DiscreteMeasure([[0.0], [1.0]])
        target = DiscreteMeasure([[0.0], [1.0]])
        # cluster masses that disagree between the two sides break the identity
        bad = FactoredCoupling(
            SoftPartition.from_clusters(np.array([[0.5, 0.0], [0.0, 0.5]]), source.points),
            SoftPartition.from_clusters(np.array([[0.1, 0.0], [0.4, 0.5]]), target.points),
            np.array([0.5, 0.5]),
        )
        with pytest.raises(ConsistencyError):
            total_transport_integral(bad, source, target)

    def test_partition_objective_at_midpoints(self, rng):
        source, target = random_pair(rng, 15, 12, 2)
        fc = induce_factored_coupling(factored_ot(source, target, FotConfig(k=3, sinkhorn=FAST)))
        hubs = 0.5 * (fc.source_partition.centroids + fc.target_partition.centroids)
        hub_measure = DiscreteMeasure(hubs)
        expected = float(
            np.sum(fc.source_partition.clusters * squared_cost_matrix(hub_measure, source))
            + np.sum(fc.target_partition.clusters * squared_cost_matrix(hub_measure, target))
        )
        assert partition_objective(fc, source, target) == pytest.approx(expected, rel=1e-10)


class TestTransportMap:
    def test_single_displacement_for_k1(self, rng):
        source, target = random_pair(rng, 10, 14, 2)
        fc = _single_cluster(source, target)
        mapped = transport_map(fc, source)
        assert np.allclose(mapped, source.points + (target.mean() - source.mean()))

    def test_hard_partition_moves_each_cluster(self):
        source = DiscreteMeasure([[0.0], [1.0]])
        fc = FactoredCoupling(
            SoftPartition.from_clusters(np.array([[0.5, 0.0], [0.0, 0.5]]), source.points),
            SoftPartition.from_clusters(np.array([[0.5, 0.0], [0.0, 0.5]]), np.array([[3.0], [-1.0]])),
            np.array([0.5, 0.5]),
        )
        assert np.allclose(transport_map(fc, source), [[3.0], [-1.0]])

    def test_target_shift_moves_centroids_and_map(self, rng):
        source, target = random_pair(rng, 12, 9, 2)
        sol = factored_ot(source, target, FotConfig(k=3, sinkhorn=FAST))
        shift = np.array([1.5, -2.0])
        fc = induce_factored_coupling(sol)
        moved = induce_factored_coupling(dataclasses.replace(sol, target=target.translated(shift)))
        assert np.allclose(
            moved.target_partition.centroids, fc.target_partition.centroids + shift, atol=1e-12
        )
        assert np.allclose(moved.source_partition.centroids, fc.source_partition.centroids, atol=1e-12)
        assert np.allclose(transport_map(moved, source), transport_map(fc, source) + shift, atol=1e-12)

    def test_solved_shift_on_isolated_pairs(self):
        source, target = two_isolated_pairs()
        shift = np.array([0.5, -0.5])
        cfg = FotConfig(k=2, sinkhorn=FAST)
        fc = induce_factored_coupling(factored_ot(source, target, cfg))
        moved = induce_factored_coupling(factored_ot(source, target.translated(shift), cfg))
        assert np.allclose(
            moved.target_partition.centroids, fc.target_partition.centroids + shift, atol=1e-8
        )
        assert np.allclose(transport_map(moved, source), transport_map(fc, source) + shift, atol=1e-8)

    def test_pushforward_keeps_weights(self, rng):
        source, target = random_pair(rng, 10, 10, 2, uniform=False)
        fc = induce_factored_coupling(factored_ot(source, target, FotConfig(k=2, sinkhorn=FAST)))
        pushed = pushforward(fc, source)
        assert np.array_equal(pushed.weights, source.weights)
        assert pushed.weights.sum() == pytest.approx(1.0)

    def test_point_without_mass(self):
        source = DiscreteMeasure([[0.0], [1.0]])
        fc = FactoredCoupling(
            SoftPartition(np.array([[1.0, 0.0]]), np.array([1.0]), np.array([[0.0]])),
            SoftPartition(np.array([[1.0]]), np.array([1.0]), np.array([[1.0]])),
            np.array([1.0]),
        )
        with pytest.raises(MeasureError):
            transport_map(fc, source)


class TestBaselines:
    def test_kot_with_one_cluster_per_point_is_exact(self, rng):
        source, target = random_pair(rng, 6, 6, 2)
        assert kot_estimate(source, target, k=6).cost == pytest.approx(
            solve_exact(source, target).cost, rel=1e-9
        )

    def test_plug_in_exact_under_cap(self, rng):
        source, target = random_pair(rng, 8, 8, 2)
        value, approx = plug_in(source, target)
        assert not approx
        assert value == pytest.approx(solve_exact(source, target).cost)

    def test_plug_in_falls_back_over_cap(self, rng):
        source, target = random_pair(rng, 6, 6, 2)
        value, approx = plug_in(source, target, RunTweaks(exact_cap=10))
        assert approx
        assert value == pytest.approx(solve_exact(source, target).cost, rel=0.05)


class TestEstimate:
    def test_fot_record(self, rng):
        source, target = random_pair(rng, 12, 10, 2)
        record = estimate(source, target, "fot", FotConfig(k=2, sinkhorn=FAST, seed=4))
        assert record["method"] == "fot"
        assert record["k"] == 2 and record["epsilon"] == 0.5 and record["seed"] == 4
        assert (record["n0"], record["n1"], record["d"]) == (12, 10, 2)
        assert record["w_hat"] >= 0
        assert record["transport_rank"] == 2
        assert record["plug_in_cost"] == pytest.approx(solve_exact(source, target).cost)
        assert record["kot_cost"] > 0
        assert record["partition_objective"] > 0
        assert record["runtime_ms"] >= 0

    def test_baselines_can_be_skipped(self, rng):
        source, target = random_pair(rng, 8, 8, 2)
        record = estimate(source, target, "fot", FotConfig(k=2, sinkhorn=FAST), compare=False)
        assert record["plug_in_cost"] is None and record["kot_cost"] is None

    def test_no_plug_in_over_cap(self, rng):
        source, target = random_pair(rng, 8, 8, 2)
        record = estimate(source, target, "kot", FotConfig(k=2), RunTweaks(exact_cap=10))
        assert record["plug_in_cost"] is None and record["kot_cost"] == record["w_hat"]

    @pytest.mark.parametrize("method", ["ot", "sinkhorn", "kot"])
    def test_other_methods(self, rng, method):
        source, target = random_pair(rng, 8, 8, 2)
        record = estimate(source, target, method, FotConfig(k=2))
        assert record["method"] == method
        assert np.isfinite(record["w_hat"]) and record["w_hat"] >= 0

    def test_ot_over_cap(self, rng):
        source, target = random_pair(rng, 8, 8, 2)
        with pytest.raises(CapacityError):
            estimate(source, target, "ot", tweaks=RunTweaks(exact_cap=10))
        record = estimate(source, target, "ot", tweaks=RunTweaks(exact_cap=10), plug_in_fallback=True)
        assert record["plug_in_approx"]

    def test_unknown_method(self, rng):
        source, target = random_pair(rng, 4, 4, 2)
        with pytest.raises(MeasureError):
            estimate(source, target, "nope")
