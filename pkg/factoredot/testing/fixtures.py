"""
Small reusable instances for tests and quick experiments.
"""

import itertools
from typing import Sequence, Tuple

import numpy as np

from factoredot.core.measures import DiscreteMeasure


def random_measure(
    rng: np.random.Generator, n: int, d: int, *, uniform: bool = True, scale: float = 1.0
) -> DiscreteMeasure:
    points = scale * rng.standard_normal((n, d))
    weights = None if uniform else rng.uniform(0.1, 1.0, size=n)
    return DiscreteMeasure(points, weights)


def random_pair(
    rng: np.random.Generator, n0: int, n1: int, d: int, *, uniform: bool = True
) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
    return (
        random_measure(rng, n0, d, uniform=uniform),
        random_measure(rng, n1, d, uniform=uniform).translated(np.full(d, 0.5)),
    )


def two_isolated_pairs(
    n_per_side: int = 5,
    *,
    spread: float = 0.1,
    offset: float = 2.0,
    distance: float = 20.0,
    seed: int = 0,
) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
    """
    Two well separated groups, each made of a small source cloud and a
    small target cloud `offset` apart along the second axis. With k = 2 the
    optimal factored coupling matches each source cloud with its own target
    cloud.
    """
    rng = np.random.default_rng(seed)
    centers = np.array([[1.0, 1.0], [1.0 + distance, 1.0]])
    step = np.array([0.0, offset])
    source = np.vstack([c + spread * rng.standard_normal((n_per_side, 2)) for c in centers])
    target = np.vstack([c + step + spread * rng.standard_normal((n_per_side, 2)) for c in centers])
    return DiscreteMeasure(source), DiscreteMeasure(target)


def brute_force_cost(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """
    Optimal transport cost between two uniform measures of equal (small)
    size, by enumerating every permutation.
    """
    if a.n != b.n or not (a.is_uniform() and b.is_uniform()):
        raise ValueError("brute_force_cost needs two uniform measures of equal size")
    diff = a.points[:, None, :] - b.points[None, :, :]
    cost = np.sum(diff**2, axis=2)
    rows = np.arange(a.n)
    best = min(cost[rows, list(p)].sum() for p in itertools.permutations(range(a.n)))
    return float(best / a.n)


def assert_monotone(trace: Sequence[float], rel_slack: float = 1e-9):
    """Fail unless the trace never increases beyond rel_slack * max(1, |F|)."""
    for i in range(1, len(trace)):
        slack = rel_slack * max(1.0, abs(trace[i - 1]))
        assert trace[i] <= trace[i - 1] + slack, (
            f"objective went up at step {i}: {trace[i - 1]!r} -> {trace[i]!r}"
        )
