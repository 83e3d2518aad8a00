import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre.env_core import Environment, drift_perturbed_law, step_vectors, uniform_law
from rwre.intersect import (
    count_grid,
    count_intersections,
    default_slack,
    intersection_scaling,
    quenched_expected_intersections,
    quenched_grid,
    walk_visits,
)

seeds = st.integers(0, 2 ** 64 - 1)


def straight_env(d=2, reach=60):
    sites = itertools.product(range(-reach, reach + 1), repeat=d)
    forced = (1.0,) + (0.0,) * (2 * d - 1)
    return Environment(uniform_law(d), 0, {s: forced for s in sites})


def test_origin_is_always_shared():
    env = Environment(drift_perturbed_law(3, 0.1), 4)
    s = count_intersections(env, 0, 1, 2, 100)
    assert s.count == 1 and not s.censored


def test_forced_straight_line():
    env = straight_env()
    for n in (0, 3, 10):
        assert count_intersections(env, n, 5, 6, 1000).count == n + 1
    mean, se, _, _ = quenched_expected_intersections(env, 7, 10, 1000)
    assert mean == 8 and se == 0


def test_equal_seeds_rejected():
    with pytest.raises(ValueError):
        count_intersections(Environment(uniform_law(2), 0), 3, 1, 1, 10)


@given(seeds, seeds)
def test_symmetric_in_the_two_walks(a, b):
    if a == b:
        return
    env = Environment(drift_perturbed_law(2, 0.1), 3)
    x = count_intersections(env, 6, a, b, 400)
    y = count_intersections(env, 6, b, a, 400)
    assert x.count == y.count and x.censored == y.censored


@given(seeds, seeds)
def test_monotone_in_radius(a, b):
    if a == b:
        return
    env = Environment(uniform_law(2), 7)
    counts = [s.count for s in count_grid(env, [1, 2, 4, 8, 16], a, b, 40.0, 2)]
    assert counts == sorted(counts)


def test_grid_matches_single_radius_runs():
    env = Environment(drift_perturbed_law(2, 0.2), 1)
    grid = count_grid(env, [4, 8, 16], 11, 12, 30.0, 1)
    for s in grid:
        single = count_intersections(env, s.n, 11, 12, s.horizons[0])
        assert single.count == s.count and single.censored == s.censored


def test_dense_and_sparse_visits_agree(monkeypatch):
    import rwre.intersect as mod

    env = Environment(drift_perturbed_law(3, 0.1), 2)
    dense = walk_visits(env, 12, [14, 20], 3000, 99)
    monkeypatch.setattr(mod, "DENSE_LIMIT", 0)
    sparse = walk_visits(env, 12, [14, 20], 3000, 99)
    order = np.argsort(dense.norm * 10 ** 6 + dense.first)
    order2 = np.argsort(sparse.norm * 10 ** 6 + sparse.first)
    assert np.array_equal(dense.first[order], sparse.first[order2])
    assert np.array_equal(dense.exits, sparse.exits)


def exhaustive_mean(n, horizon):
    """Exact E[I_n] for SRW in d=2 with both walks truncated at ``horizon`` steps."""
    steps = step_vectors(2)
    visits = []
    for path in itertools.product(range(4), repeat=horizon):
        x = np.zeros(2, dtype=int)
        seen = {(0, 0)}
        for e in path:
            x = x + steps[e]
            seen.add(tuple(x))
        visits.append({s for s in seen if abs(s[0]) + abs(s[1]) <= n})
    total = sum(len(a & b) for a in visits for b in visits)
    return total / len(visits) ** 2


def test_estimator_matches_exhaustive_enumeration():
    assert 1 + default_slack(1) >= 3  # norm cannot exceed the exit radius in 3 steps
    exact = exhaustive_mean(1, 3)
    env = Environment(uniform_law(2), 0)
    mean, se, _, res = quenched_expected_intersections(env, 1, 20000, 3, seed_key=5)
    assert res.censor_rate[0] == 1.0  # every pair runs to the horizon
    assert abs(mean - exact) < 4 * se


def test_ci_shrinks_with_more_pairs():
    env = Environment(drift_perturbed_law(2, 0.2), 6)
    a = quenched_grid(env, [8], 200, 200.0, seed_key=1)
    b = quenched_grid(env, [8], 800, 200.0, seed_key=1)
    ratio = b.se[0] / a.se[0]
    assert 0.4 <= ratio <= 0.6


def test_high_censoring_is_flagged():
    env = Environment(uniform_law(2), 0)
    assert quenched_grid(env, [10], 5, 5.0, horizon_power=0).high_censoring


def test_scaling_degenerate_and_grid_checks():
    law = drift_perturbed_law(2, 0.2)
    r = intersection_scaling(law, [2, 4, 8, 16], 1, 5, 200.0)
    assert np.array_equal(r.median, r.per_env[0]) and np.array_equal(r.q90, r.per_env[0])
    with pytest.raises(ValueError):
        intersection_scaling(law, [2, 4, 8], 1, 5, 200.0)
