import csv
import itertools
from fractions import Fraction

import numpy as np
import pytest

from rwre.env_core import Environment, drift_perturbed_law, mixture_law, step_vectors, uniform_law
from rwre.evp_density import (
    MemoryGuardError,
    annealed_kernel_decay,
    backward_field,
    f_n_exact,
    f_n_samples,
    f_n_tail,
    heat_kernel_forward,
    local_clt_gap,
    torus_fn,
    torus_fn_consistency,
    torus_matrix,
    torus_stationary,
)
from rwre.traps import TrapSpec, trap_overrides

DRIFT = drift_perturbed_law(2, 0.2)


def ball(d, n):
    return [z for z in itertools.product(range(-n, n + 1), repeat=d) if sum(map(abs, z)) <= n]


def exact_probs(env, sites):
    return {s: [Fraction(float(p)) for p in env.probs_at([s])[0]] for s in sites}


def fraction_backward_sum(env, n):
    d = env.d
    steps = [tuple(int(c) for c in e) for e in step_vectors(d)]
    om = exact_probs(env, ball(d, n + 1))
    h = {(0,) * d: Fraction(1)}
    for _ in range(n):
        new = {}
        for z in om:
            if sum(map(abs, z)) > n:
                continue
            s = sum(om[z][k] * h.get(tuple(a + b for a, b in zip(z, e)), 0) for k, e in enumerate(steps))
            if s:
                new[z] = s
        h = new
    return sum(h.values())


def fraction_forward_to_origin(env, z, n):
    d = env.d
    steps = [tuple(int(c) for c in e) for e in step_vectors(d)]
    field = {tuple(z): Fraction(1)}
    cache = {}
    for _ in range(n):
        new = {}
        for x, v in field.items():
            if x not in cache:
                cache[x] = [Fraction(float(p)) for p in env.probs_at([x])[0]]
            for k, e in enumerate(steps):
                y = tuple(a + b for a, b in zip(x, e))
                new[y] = new.get(y, 0) + v * cache[x][k]
        field = new
    return field.get((0,) * d, Fraction(0))


def test_forward_n0_is_a_point_mass():
    f = heat_kernel_forward(Environment(DRIFT, 1), (2, -1), 0)
    assert f[(2, -1)] == 1.0 and f.total() == 1.0


def test_srw_two_step_kernel():
    f = heat_kernel_forward(Environment(uniform_law(2), 0), (0, 0), 2)
    assert f[(0, 0)] == 0.25
    assert f[(2, 0)] == 1 / 16 and f[(1, 1)] == 2 / 16 and f[(1, 0)] == 0


@pytest.mark.parametrize("d,n", [(1, 1000), (2, 200), (3, 40)])
def test_forward_mass_parity_and_support(d, n):
    law = drift_perturbed_law(d, 0.1)
    f = heat_kernel_forward(Environment(law, 3), (1,) * d, n)
    assert abs(f.total() + f.pruned_mass - 1) < 1e-10
    for site, v in f.items():
        off = np.subtract(site, (1,) * d)
        assert np.abs(off).sum() <= n and np.abs(off).sum() % 2 == n % 2 and v > 0


def test_kernel_field_csv(tmp_path):
    f = heat_kernel_forward(Environment(DRIFT, 1), (0, 0), 3)
    f.to_csv(tmp_path / "k.csv")
    rows = list(csv.reader(open(tmp_path / "k.csv")))
    assert rows[0] == ["x1", "x2", "value"]
    assert abs(sum(float(r[2]) for r in rows[1:]) - 1) < 1e-12
    assert f.to_dict() == {tuple(map(int, r[:2])): float(r[2]) for r in rows[1:]}


def test_f0_and_constant_environment():
    env = Environment(DRIFT, 5)
    assert f_n_exact(env, 0) == 1.0
    const = Environment(mixture_law([(0.4, 0.1, 0.3, 0.2)], [1]), 0)
    for n in (1, 7, 32, 64):
        assert abs(f_n_exact(const, n) - 1) < 1e-12


def test_hand_evaluated_f1():
    ov = (0.5, 0.1, 0.2, 0.2)
    env = Environment(uniform_law(2), 0, {(-1, 0): ov})
    # f_1 = w(-e1, +e1) + w(e1, -e1) + w(-e2, +e2) + w(e2, -e2)
    assert abs(f_n_exact(env, 1) - (0.5 + 0.25 + 0.25 + 0.25)) < 1e-15


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_backward_forward_duality_exact(n):
    env = Environment(DRIFT, 11)
    exact = fraction_backward_sum(env, n)
    assert exact == sum(fraction_forward_to_origin(env, z, n) for z in ball(2, n))
    assert abs(f_n_exact(env, n) - float(exact)) < 1e-15
    h = backward_field(env, n)
    for z in itertools.product(range(-2, 3), repeat=2):
        assert abs(h[z] - heat_kernel_forward(env, z, n)[(0, 0)]) < 1e-15


def test_backward_positivity_bound():
    law = drift_perturbed_law(2, 0.2)
    n = 6
    h = backward_field(Environment(law, 2), n)
    for z in ball(2, n):
        if sum(z) % 2 == n % 2:
            assert h[z] >= law.kappa ** n > 0


def test_memory_guard():
    env = Environment(DRIFT, 0)
    with pytest.raises(MemoryGuardError):
        heat_kernel_forward(env, (0, 0), 10 ** 6)
    with pytest.raises(MemoryGuardError):
        f_n_exact(env, 10 ** 6, budget=10 ** 6)


def test_fn_tail_basics():
    tail = f_n_tail(DRIFT, 16, 200, [0.0, 1.0, 2.0], master_seed=3)
    assert tail.survival[0] == 1.0 and np.all(tail.values > 0)
    assert abs(tail.mean - 1) < 4 * tail.se


def test_planted_traps_fatten_the_tail():
    spec = TrapSpec(4, 0.2, DRIFT)
    plain = f_n_samples(DRIFT, 24, 100, master_seed=1)
    trapped = f_n_samples(DRIFT, 24, 100, master_seed=1, overrides=trap_overrides(spec))
    for u in (1.5, 2.0, 3.0):
        assert np.mean(trapped > u) >= np.mean(plain > u)
    assert np.mean(trapped > 3.0) > np.mean(plain > 3.0)


def test_torus_uniform_environment():
    env = Environment(uniform_law(2), 0, period=5)
    chain = torus_stationary(env)
    assert np.allclose(chain.density, 1, atol=1e-12)
    f = torus_fn(env, 20)
    assert np.all(f == 1.0)
    assert torus_fn_consistency(env, 20, chain).gap < 1e-12


def test_torus_four_state_linear_solve():
    probs = {(0, 0): (0.4, 0.1, 0.3, 0.2), (0, 1): (0.1, 0.2, 0.3, 0.4),
             (1, 0): (0.25, 0.25, 0.1, 0.4), (1, 1): (0.3, 0.3, 0.2, 0.2)}
    env = Environment(uniform_law(2), 0, probs, period=2)
    P = np.zeros((4, 4))
    for (x, y), p in probs.items():
        for k, (dx, dy) in enumerate([(1, 0), (-1, 0), (0, 1), (0, -1)]):
            P[2 * x + y, 2 * ((x + dx) % 2) + (y + dy) % 2] += p[k]
    A = np.vstack([P.T - np.eye(4), np.ones(4)])
    pi = np.linalg.lstsq(A, np.r_[np.zeros(4), 1.0], rcond=None)[0]
    chain = torus_stationary(env)
    assert np.allclose(torus_matrix(env).toarray(), P)
    assert np.allclose(chain.stationary, pi, atol=1e-10)


def test_torus_random_environment():
    env = Environment(DRIFT, 3, period=5)
    chain = torus_stationary(env)
    P = chain.matrix
    assert np.allclose(np.asarray(P.sum(axis=1)).ravel(), 1)
    assert np.abs(chain.stationary @ P - chain.stationary).sum() <= 1e-10
    assert chain.stationary.min() > 0 and chain.converged
    # the chain is not reversible, so the gap oscillates; its envelope (max over
    # windows of 20 steps) decays until the power-iteration accuracy floor
    gaps = np.array([torus_fn_consistency(env, n, chain).gap for n in range(20, 200)])
    envelope = gaps.reshape(-1, 20).max(axis=1)
    floor = 10 * chain.residual
    assert np.all(np.diff(envelope) <= 1e-12 + floor)
    assert torus_fn_consistency(env, 500, chain).gap < 1e-6


def test_srw_local_clt_and_decay():
    rep = local_clt_gap(uniform_law(2), 100, 1)
    assert rep.tv < 0.1 and not rep.singular
    assert np.allclose(rep.cov, rep.cov.T) and np.all(np.linalg.eigvalsh(rep.cov) > 0)
    fit, _ = annealed_kernel_decay(uniform_law(2), [16, 32, 64, 128], 1)
    assert abs(fit.slope + 1) <= 0.2


def test_singular_covariance_is_flagged():
    rep = local_clt_gap(uniform_law(2), 0, 1)
    assert rep.singular and np.isnan(rep.tv)
