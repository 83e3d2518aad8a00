import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre.env_core import EllipticityError, drift_perturbed_law, local_drift, uniform_law
from rwre.traps import (
    TrapSpec,
    build_naive_trap,
    calibrate_supermartingale,
    compass_law,
    direction_net,
    escape_keys,
    in_region,
    is_trapped,
    region_sites,
    relaxed_event_mc,
    snap,
    supermartingale_check,
    trap_escape_time,
    trap_probability,
    trap_probs,
)
from rwre.walk_engine import SetHit, run_quenched

BG = compass_law(2, 0.2)


def test_hand_evaluated_site():
    p = trap_probs(0.2, (3, 0))
    assert np.allclose(p, [0.15, 0.35, 0.25, 0.25])
    assert np.allclose(local_drift(p), [-0.2, 0.0])


def test_zero_strength_is_uniform():
    spec = TrapSpec(3, 0.0, BG)
    env = build_naive_trap(spec, 0)
    assert np.allclose(env.probs_at(region_sites(spec)), 0.25)


@given(st.integers(1, 6), st.floats(0.0, 0.2), st.integers(0, 2 ** 32))
def test_planted_trap_passes_membership_exactly(L, c1, seed):
    spec = TrapSpec(L, c1, BG)
    assert is_trapped(build_naive_trap(spec, seed), spec)


def test_region_shape():
    spec = TrapSpec(3, 0.2, BG)
    assert len(region_sites(spec, include_origin=True)) == 25
    tilted = TrapSpec(3, 0.2, BG, theta=(1.0, 1.0))
    assert in_region(tilted, [(2, 4)])[0] and not in_region(tilted, [(0, 3)])[0]
    d3 = TrapSpec(2, 0.1, drift_perturbed_law(3, 0.1))
    assert len(region_sites(d3)) == 26


def test_c1_too_large():
    with pytest.raises(EllipticityError):
        TrapSpec(4, 0.4, BG)  # 1/4 - 0.2 < kappa = 0.15


def test_background_outside_trap_is_untouched():
    spec = TrapSpec(2, 0.2, BG)
    env = build_naive_trap(spec, 5)
    from rwre.env_core import Environment

    plain = Environment(BG, 5)
    far = [(5, 5), (0, 2), (-2, 1)]
    assert np.array_equal(env.probs_at(far), plain.probs_at(far))
    assert np.array_equal(env.probs_at([(0, 0)]), plain.probs_at([(0, 0)]))


def test_escape_kernel_matches_generic_walk():
    spec = TrapSpec(4, 0.2, BG)
    env = build_naive_trap(spec, 1)
    es = trap_escape_time(env, spec, 20, 10 ** 6, master_seed=3)
    inside = tuple(map(tuple, region_sites(spec, include_origin=True).tolist()))
    for i, key in enumerate(escape_keys(3, 20)):
        _, rep = run_quenched(env, (0, 0), SetHit(inside, complement=True), 10 ** 6, int(key), record=False)
        assert rep.time == es.times[i]


def test_horizon_zero_censors_everything():
    spec = TrapSpec(3, 0.2, BG)
    es = trap_escape_time(build_naive_trap(spec, 0), spec, 10, 0)
    assert es.censor_rate == 1.0 and np.all(es.times == 0)


def test_stronger_trap_holds_longer():
    means = []
    for c1 in (0.0, 0.1, 0.2):
        spec = TrapSpec(6, c1, BG)
        means.append(trap_escape_time(build_naive_trap(spec, 2), spec, 300, 10 ** 8, master_seed=4).mean)
    assert means == sorted(means)
    small = [trap_escape_time(build_naive_trap(TrapSpec(2, c1, BG), 2), TrapSpec(2, c1, BG), 2000,
                              10 ** 6, master_seed=4) for c1 in (0.0, 0.2)]
    diff = small[1].times - small[0].times
    assert diff.mean() > 3 * diff.std(ddof=1) / math.sqrt(len(diff))


def test_supermartingale_calibration():
    spec = TrapSpec(16, 0.2, BG)
    env = build_naive_trap(spec, 0)
    rep = calibrate_supermartingale(env, spec)
    assert rep.passed and rep.c3 == 0.05 and rep.c2 <= 8 / 0.2
    assert np.all(rep.ratios <= 1)
    assert not supermartingale_check(env, spec, 0.0, rep.c3).passed  # fails next to the origin
    big = TrapSpec(48, 0.2, BG)
    assert supermartingale_check(build_naive_trap(big, 0), big, 8 / 0.2, 0.05).passed


def test_direction_net():
    net = direction_net(2)
    assert len(net) == 8 and len(direction_net(3)) == 26
    assert np.allclose(np.linalg.norm(net, axis=1), 1)
    assert np.allclose(net[snap([(5, 1)], net)[0]], [1, 0])


def test_exact_probability_is_zero_for_finite_support():
    tp = trap_probability(BG, TrapSpec(3, 0.2, BG))
    assert tp.log_p_exact == -math.inf and "exact probability is 0" in tp.exact_note
    # L=2: only axis and diagonal sites, each matched exactly by one atom
    ok = trap_probability(BG, TrapSpec(2, 0.2, BG))
    assert np.isclose(ok.log_p_exact, 8 * math.log(1 / 8))


def test_relaxed_probability_is_a_product_over_sites():
    tps = [trap_probability(BG, TrapSpec(L, 0.2, BG), 0.1) for L in (2, 3, 4, 6)]
    assert np.allclose(tps[0].p_net, 3 / 8)
    for tp in tps:
        assert np.isclose(tp.log_p_relaxed, tp.sites * math.log(3 / 8))


def test_monte_carlo_matches_relaxed_product():
    spec = TrapSpec(2, 0.2, BG)
    analytic = math.exp(trap_probability(BG, spec, 0.1).log_p_relaxed)
    p, (lo, hi), k = relaxed_event_mc(BG, spec, 0.1, 400_000, master_seed=1)
    assert k > 50 and lo <= analytic <= hi


def test_infinite_support_uses_sampling():
    law = drift_perturbed_law(2, 0.1)
    tp = trap_probability(law, TrapSpec(2, 0.1, law), 0.02, nu_samples=20000)
    assert math.isnan(tp.log_p_exact) and np.all((tp.p_net >= 0) & (tp.p_net <= 1))
    flat = uniform_law(2, kappa=0.05)
    uni = trap_probability(flat, TrapSpec(2, 0.1, flat))
    assert uni.log_p_relaxed == -math.inf
