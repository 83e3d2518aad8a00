"""Intersections of two independent walks in one environment.

A single walk is simulated once per seed and reused for every radius of a
grid: for each visited site we keep its first visit time, and for each
radius ``n`` the exit time of the ball of radius ``n + slack(n)``.  A site
counts for radius ``n`` when it lies in the l1 ball of radius ``n`` and was
visited strictly before that walk's cutoff (exit time, or ``horizon + 1``
when the horizon comes first).  This reproduces exactly what separate runs
per radius with the same step stream would give.
"""

from dataclasses import dataclass
import math

import numba as nb
import numpy as np

from rwre import _rng
from rwre._parallel import run_chunks
from rwre.env_core import Environment, nb_site_probs
from rwre.stats import fit_line, normal_ci
from rwre.walk_engine import r_seq

DENSE_LIMIT = 1 << 24  # cells; above this visits are deduplicated by sorting


def default_slack(n):
    return int(math.ceil(2 * r_seq(5, max(n, 1))))


def ballistic_horizon_factor(v_e1):
    """Default horizon factor ``20 / <v, e1>`` for ballistic walks."""
    if v_e1 <= 0:
        raise ValueError("ballistic horizon needs a positive velocity estimate")
    return 20.0 / v_e1


@dataclass(frozen=True)
class IntersectionSample:
    n: int
    count: int
    horizons: tuple
    censored: bool


@nb.njit(cache=True, nogil=True)
def _visit_walk(kind, params, seed, d, period, ov_keys, ov_probs,
                radius, exit_radii, horizon, walk_key, dense, first, keys_out, times_out):
    """Walk from 0 until the l1 norm exceeds ``exit_radii[-1]`` or ``horizon``.

    Visits inside the ball of ``radius`` are appended to (keys_out, times_out):
    with ``dense`` only first visits (``first`` is a box array of -1), else
    every visit.  Returns (steps, number appended, exit times per radius).
    """
    d2 = 2 * d
    probs = np.empty(d2)
    pos = np.zeros(3, dtype=np.int64)
    side = 2 * radius + 1
    m = exit_radii.shape[0]
    exits = np.full(m, -1, dtype=np.int64)
    nxt = 0
    cnt = 0
    t = 0
    norm = 0
    while True:
        if norm <= radius:
            if dense:
                idx = 0
                for j in range(d):
                    idx = idx * side + (pos[j] + radius)
                if first[idx] < 0:
                    first[idx] = t
                    keys_out[cnt] = idx
                    times_out[cnt] = t
                    cnt += 1
            else:
                keys_out[cnt] = ((pos[0] + radius) * side + pos[1] + radius) * side + pos[2] + radius
                times_out[cnt] = t
                cnt += 1
        while nxt < m and norm > exit_radii[nxt]:
            exits[nxt] = t
            nxt += 1
        if nxt == m or t >= horizon:
            return t, cnt, exits
        nb_site_probs(kind, params, seed, d, period, ov_keys, ov_probs,
                      pos[0], pos[1], pos[2], probs)
        u = _rng.nb_unit(walk_key, t)
        e = 0
        acc = probs[0]
        while u >= acc and e < d2 - 1:
            e += 1
            acc += probs[e]
        a = e // 2
        old = abs(pos[a])
        if e % 2 == 0:
            pos[a] += 1
        else:
            pos[a] -= 1
        norm += abs(pos[a]) - old
        t += 1


@dataclass
class _Visits:
    keys: np.ndarray     # sorted unique cell indices in the radius box
    first: np.ndarray    # first visit time per key
    norm: np.ndarray     # l1 norm per key
    exits: np.ndarray    # exit time of ball n + slack(n), -1 if never
    steps: int


def _decode_norm(keys, radius, d, dense):
    side = 2 * radius + 1
    k = keys.copy()
    norm = np.zeros(len(keys), dtype=np.int64)
    dims = d if dense else 3
    for _ in range(dims):
        norm += np.abs(k % side - radius)
        k //= side
    return norm


def walk_visits(env, radius, exit_radii, horizon, walk_key):
    """First-visit table of one walk (see module docstring)."""
    d = env.d
    exit_radii = np.asarray(exit_radii, dtype=np.int64)
    if np.any(np.diff(exit_radii) < 0):
        raise ValueError("exit radii must be sorted")
    side = 2 * radius + 1
    dense = side ** d <= DENSE_LIMIT
    if not dense and side ** 3 >= 2 ** 63:
        raise ValueError("radius too large for key packing")
    first = np.full(side ** d if dense else 0, -1, dtype=np.int64)
    cap = min(horizon + 1, side ** d) if dense else horizon + 1
    keys = np.empty(cap, dtype=np.int64)
    times = np.empty(cap, dtype=np.int64)
    t, cnt, exits = _visit_walk(*env.args, radius, exit_radii, horizon,
                                np.uint64(walk_key), dense, first, keys, times)
    keys, times = keys[:cnt], times[:cnt]
    if not dense:
        keys, idx = np.unique(keys, return_index=True)
        times = times[idx]
    else:
        order = np.argsort(keys)
        keys, times = keys[order], times[order]
    return _Visits(keys, times, _decode_norm(keys, radius, d, dense), exits, int(t))


def _cutoff(v, i, horizon):
    ex = v.exits[i]
    if 0 <= ex <= horizon:
        return ex, False
    return horizon + 1, True


def _count(v1, v2, i, n, h1, h2):
    c1, cens1 = _cutoff(v1, i, h1)
    c2, cens2 = _cutoff(v2, i, h2)
    a = v1.keys[(v1.norm <= n) & (v1.first < c1)]
    b = v2.keys[(v2.norm <= n) & (v2.first < c2)]
    return int(np.intersect1d(a, b, assume_unique=True).size), cens1 or cens2


def _horizon_for(n, slack, factor, power):
    return int(math.ceil(factor * n ** power)) if power else int(factor)


def count_grid(env, n_grid, walk_seed_1, walk_seed_2, horizon_factor, horizon_power=1,
               slack=None):
    """IntersectionSamples for every n of ``n_grid`` from one pair of walks."""
    if walk_seed_1 == walk_seed_2:
        raise ValueError("the two walk seeds must differ")
    n_grid = sorted(int(n) for n in n_grid)
    slacks = [default_slack(n) if slack is None else int(slack) for n in n_grid]
    exit_radii = np.array([n + s for n, s in zip(n_grid, slacks)])
    order = np.argsort(exit_radii, kind="stable")
    horizons = [_horizon_for(n, s, horizon_factor, horizon_power) for n, s in zip(n_grid, slacks)]
    H = max(horizons)
    v1 = walk_visits(env, n_grid[-1], exit_radii[order], H, walk_seed_1)
    v2 = walk_visits(env, n_grid[-1], exit_radii[order], H, walk_seed_2)
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order))
    out = []
    for k, n in enumerate(n_grid):
        c, cens = _count(v1, v2, rank[k], n, horizons[k], horizons[k])
        out.append(IntersectionSample(n, c, (horizons[k], horizons[k]), cens))
    return out


def count_intersections(env, n, walk_seed_1, walk_seed_2, horizon, slack=None):
    """I_n for one pair of walks started at the origin, truncated at ``horizon``."""
    return count_grid(env, [n], walk_seed_1, walk_seed_2, horizon, 0, slack)[0]


def pair_seeds(env_base, pair):
    """Walk keys of pair ``pair`` given an environment-level key."""
    return (_rng.combine(_rng.trial_key(env_base, 0, _rng.ROLE_WALK1), pair),
            _rng.combine(_rng.trial_key(env_base, 0, _rng.ROLE_WALK2), pair))


@dataclass
class QuenchedIntersections:
    n: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    ci: tuple
    censor_rate: np.ndarray
    counts: np.ndarray       # (pairs, len(n))
    high_censoring: bool


def quenched_grid(env, n_grid, pairs, horizon_factor, horizon_power=1, slack=None,
                  seed_key=0, threads=None, level=0.95, censor_alarm=0.05):
    """Mean of I_n over i.i.d. walk pairs in the fixed environment ``env``."""
    if pairs < 1:
        raise ValueError("pairs must be >= 1")
    n_grid = sorted(int(n) for n in n_grid)
    counts = np.zeros((pairs, len(n_grid)), dtype=np.int64)
    cens = np.zeros((pairs, len(n_grid)), dtype=bool)

    def work(lo, hi):
        for p in range(lo, hi):
            s1, s2 = pair_seeds(seed_key, p)
            for k, smp in enumerate(count_grid(env, n_grid, s1, s2, horizon_factor,
                                               horizon_power, slack)):
                counts[p, k] = smp.count
                cens[p, k] = smp.censored

    run_chunks(work, pairs, threads, chunk=1)
    if pairs > 1:
        mean, se, ci = normal_ci(counts, level)
    else:
        mean = counts[0].astype(float)
        se = np.full(len(n_grid), math.inf)
        ci = (mean - se, mean + se)
    rate = cens.mean(axis=0)
    return QuenchedIntersections(np.array(n_grid), mean, se, ci, rate, counts,
                                 bool(np.any(rate > censor_alarm)))


def quenched_expected_intersections(env, n, pairs, horizon, slack=None, seed_key=0,
                                    threads=None, level=0.95):
    r = quenched_grid(env, [n], pairs, horizon, 0, slack, seed_key, threads, level)
    return float(r.mean[0]), float(r.se[0]), (float(r.ci[0][0]), float(r.ci[1][0])), r


@dataclass
class IntersectionScaling:
    n: np.ndarray
    per_env: np.ndarray        # (env_count, len(n)) quenched means
    censor_rate: np.ndarray    # (env_count, len(n))
    median: np.ndarray
    q90: np.ndarray
    slope: float
    r2: float
    slope_q90: float
    r2_q90: float


def intersection_scaling(law, n_grid, env_count, pairs, horizon_factor, horizon_power=1,
                         master_seed=0, kind="intersect", slack=None, threads=None):
    """Per-environment quenched means and the log-log slope of their median."""
    n_grid = sorted(int(n) for n in n_grid)
    if len(n_grid) < 4:
        raise ValueError("need at least 4 radii")
    base = _rng.derive_seed(master_seed, kind)
    per_env = np.zeros((env_count, len(n_grid)))
    rates = np.zeros((env_count, len(n_grid)))
    for i in range(env_count):
        env = Environment(law, _rng.trial_key(base, i, _rng.ROLE_ENV))
        q = quenched_grid(env, n_grid, pairs, horizon_factor, horizon_power, slack,
                          seed_key=_rng.trial_key(base, i, _rng.ROLE_WALK1), threads=threads)
        per_env[i] = q.mean
        rates[i] = q.censor_rate
    med = np.median(per_env, axis=0)
    q90 = np.quantile(per_env, 0.9, axis=0)
    x = np.log(n_grid)
    f = fit_line(x, np.log(med))
    g = fit_line(x, np.log(q90))
    return IntersectionScaling(np.array(n_grid), per_env, rates, med, q90,
                               f.slope, f.r2, g.slope, g.r2)
