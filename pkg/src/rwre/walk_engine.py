"""Quenched and annealed walks, hitting times, parallelograms and ballisticity probes.

Each walk draws step ``t`` from the counter-based stream ``(walk_key, t)``;
the environment is queried lazily at the current site.  Annealed trials
derive both the environment seed and the walk key from
``(master_seed, kind, trial_index, role)``, so ensembles are reproducible
and independent of the execution schedule.
"""

from dataclasses import dataclass
import math

import numba as nb
import numpy as np

from rwre import _rng
from rwre._parallel import run_chunks
from rwre.env_core import Environment, nb_pack, nb_site_probs, step_vectors
from rwre.stats import clopper_pearson, normal_ci

# stop-rule codes
FIXED, SLAB, SET, PARA, BALL = 0, 1, 2, 3, 4
# outcome codes
CENSORED, DONE_FIXED, HIT_HI, HIT_LO, HIT_SET, EXIT = 0, 1, 2, 3, 4, 5
_OUTCOME = {
    CENSORED: "horizon_censored",
    DONE_FIXED: "fixed_n",
    HIT_HI: "halfspace_hit",
    HIT_LO: "halfspace_hit",
    HIT_SET: "set_hit",
    EXIT: "boundary_exit",
}
_NO_LO = np.iinfo(np.int64).min
_NO_HI = np.iinfo(np.int64).max


def r_seq(j, N):
    """Scale sequence ``exp((log N) ** ((j + 2) / (j + 3)))``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return math.exp(math.log(N) ** ((j + 2) / (j + 3)))


def halfspace_threshold(ell, L):
    """Smallest integer H with ``H >= L * |ell|`` for an integer vector ``ell``.

    ``<x, ell/|ell|> >= L`` is equivalent to ``<x, ell> >= H`` on the lattice,
    decided without floating point.
    """
    n2 = sum(int(c) * int(c) for c in ell)
    if n2 == 0:
        raise ValueError("direction must be nonzero")
    L = int(L)
    if L <= 0:
        return 0
    return math.isqrt(L * L * n2 - 1) + 1


# stop rules -------------------------------------------------------------------

@dataclass(frozen=True)
class FixedN:
    n: int


@dataclass(frozen=True)
class Halfspace:
    """Stop on ``<X, ell/|ell|> >= L``; with ``two_sided`` also on ``<= -L``."""

    ell: tuple
    L: int
    two_sided: bool = False


@dataclass(frozen=True)
class SetHit:
    """Stop on entering ``sites`` (or on leaving them when ``complement``)."""

    sites: tuple
    complement: bool = False


@dataclass(frozen=True)
class Parallelogram:
    """Box of length ``N**2`` along e1 and width ``N * R_j(N)`` around a tilted axis.

    ``theta`` is the (estimated) asymptotic direction; its first coordinate
    must be positive.
    """

    center: tuple
    N: int
    theta: tuple
    j: int = 5

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float)
        if th[0] <= 0:
            raise ValueError("theta must have positive e1 component")
        object.__setattr__(self, "theta", tuple((th / np.linalg.norm(th)).tolist()))
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))

    @property
    def d(self):
        return len(self.center)

    @property
    def length(self):
        return self.N ** 2

    @property
    def width(self):
        return self.N * r_seq(self.j, self.N)

    def _coords(self, x):
        x = np.asarray(x, dtype=float) - np.asarray(self.center, dtype=float)
        s = x[..., 0]
        th = np.asarray(self.theta)
        trans = x - th * (s / th[0])[..., None]
        return s, np.abs(trans).max(axis=-1)

    def contains(self, x):
        s, t = self._coords(x)
        return (np.abs(s) < self.length) & (t < self.width)

    def in_middle_third(self, x):
        s, t = self._coords(x)
        return (np.abs(s) < self.length / 3) & (t < self.width / 3)

    def transverse(self, x):
        x = np.asarray(x, dtype=float) - np.asarray(self.center, dtype=float)
        th = np.asarray(self.theta)
        return x - th * (x[..., 0] / th[0])[..., None]


@dataclass(frozen=True)
class Trajectory:
    start: tuple
    steps: np.ndarray
    walk_seed: int

    @property
    def d(self):
        return len(self.start)

    def __len__(self):
        return len(self.steps)

    @property
    def positions(self):
        """(n + 1, d) array of X_0 .. X_n."""
        inc = step_vectors(self.d)[self.steps.astype(np.int64)]
        pos = np.zeros((len(self.steps) + 1, self.d), dtype=np.int64)
        pos[0] = self.start
        np.cumsum(inc, axis=0, out=pos[1:])
        pos[1:] += np.asarray(self.start, dtype=np.int64)
        return pos


@dataclass(frozen=True)
class StoppingReport:
    stop_kind: str
    time: int
    position: tuple
    face: str = ""

    @property
    def censored(self):
        return self.stop_kind == "horizon_censored"


# numba kernels ----------------------------------------------------------------

@nb.njit(cache=True, nogil=True, inline="always")
def _in_para(pos, center, n2, width, theta, d):
    s = pos[0] - center[0]
    if abs(s) >= n2:
        return False
    for j in range(1, d):
        t = (pos[j] - center[j]) - theta[j] * (s / theta[0])
        if abs(t) >= width:
            return False
    return True


@nb.njit(cache=True, nogil=True, inline="always")
def _check(rule, pos, d, ell, lo, hi, set_keys, complement, center, n2, width, theta):
    if rule == SLAB:
        h = 0
        for j in range(d):
            h += pos[j] * ell[j]
        if h >= hi:
            return HIT_HI
        if h <= lo:
            return HIT_LO
    elif rule == SET:
        key = nb_pack(pos[0], pos[1], pos[2])
        i = np.searchsorted(set_keys, key)
        inside = i < set_keys.shape[0] and set_keys[i] == key
        if inside != complement:
            return HIT_SET
    elif rule == PARA:
        if not _in_para(pos, center, n2, width, theta, d):
            return EXIT
    elif rule == BALL:
        r = 0
        for j in range(d):
            r += abs(pos[j])
        if r > hi:
            return EXIT
    return -1


@nb.njit(cache=True, nogil=True)
def _walk(kind, params, seed, d, period, ov_keys, ov_probs, pos,
          rule, ell, lo, hi, set_keys, complement, center, n2, width, theta,
          horizon, walk_key, steps_out):
    """Advance ``pos`` in place; returns (time, outcome)."""
    d2 = 2 * d
    probs = np.empty(d2)
    record = steps_out.shape[0] > 0
    t = 0
    while True:
        code = _check(rule, pos, d, ell, lo, hi, set_keys, complement, center, n2, width, theta)
        if code >= 0:
            return t, code
        if t >= horizon:
            return t, (DONE_FIXED if rule == FIXED else CENSORED)
        nb_site_probs(kind, params, seed, d, period, ov_keys, ov_probs,
                      pos[0], pos[1], pos[2], probs)
        u = _rng.nb_unit(walk_key, t)
        e = 0
        acc = probs[0]
        while u >= acc and e < d2 - 1:
            e += 1
            acc += probs[e]
        if record:
            steps_out[t] = e
        if e % 2 == 0:
            pos[e // 2] += 1
        else:
            pos[e // 2] -= 1
        t += 1


@nb.njit(cache=True, nogil=True)
def _batch(kind, params, env_seed, d, period, ov_keys, ov_probs, annealed, base,
           lo_trial, hi_trial, start, rule, ell, lo, hi, set_keys, complement,
           center, n2, width, theta, horizon, out_t, out_code, out_pos):
    empty = np.zeros(0, dtype=np.int8)
    pos = np.empty(3, dtype=np.int64)
    for i in range(lo_trial, hi_trial):
        seed = env_seed
        if annealed:
            seed = _rng.nb_trial_key(base, i, 1)
        wk = _rng.nb_trial_key(base, i, 2)
        for j in range(3):
            pos[j] = start[j]
        t, code = _walk(kind, params, seed, d, period, ov_keys, ov_probs, pos,
                        rule, ell, lo, hi, set_keys, complement, center, n2, width,
                        theta, horizon, wk, empty)
        out_t[i] = t
        out_code[i] = code
        for j in range(3):
            out_pos[i, j] = pos[j]


# python side ------------------------------------------------------------------

def _pad3(v, dtype=np.int64):
    out = np.zeros(3, dtype=dtype)
    out[: len(v)] = v
    return out


def _encode_rule(rule, d):
    ell = np.zeros(3, dtype=np.int64)
    lo, hi = _NO_LO, _NO_HI
    keys = np.zeros(0, dtype=np.int64)
    complement = False
    center = np.zeros(3, dtype=np.int64)
    n2, width = 0, 0.0
    theta = np.zeros(3)
    horizon_cap = None
    if isinstance(rule, FixedN):
        code = FIXED
        horizon_cap = rule.n
    elif isinstance(rule, Halfspace):
        code = SLAB
        ell = _pad3(rule.ell)
        hi = halfspace_threshold(rule.ell, rule.L)
        if rule.two_sided:
            lo = -hi
    elif isinstance(rule, SetHit):
        from rwre.env_core import pack_site
        code = SET
        keys = np.array(sorted({pack_site(s) for s in rule.sites}), dtype=np.int64)
        complement = rule.complement
    elif isinstance(rule, Parallelogram):
        code = PARA
        center = _pad3(rule.center)
        n2 = rule.length
        width = rule.width
        theta = _pad3(rule.theta, float)
    else:
        raise TypeError(f"unknown stop rule {rule!r}")
    return code, (ell, lo, hi, keys, complement, center, n2, width, theta), horizon_cap


def _report(code, t, pos, d, rule):
    position = tuple(int(c) for c in pos[:d])
    face = ""
    if code == EXIT and isinstance(rule, Parallelogram):
        face = "right" if position[0] - rule.center[0] >= rule.length else "other_boundary"
    elif code == HIT_HI:
        face = "+"
    elif code == HIT_LO:
        face = "-"
    return StoppingReport(_OUTCOME[int(code)], int(t), position, face)


def run_quenched(env, start, stop_rule, horizon, walk_seed, record=True):
    """Walk in the fixed environment ``env`` until ``stop_rule`` or ``horizon``."""
    d = env.d
    code, rargs, cap = _encode_rule(stop_rule, d)
    if cap is not None:
        horizon = cap
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    pos = _pad3(start)
    steps = np.zeros(horizon if record else 0, dtype=np.int8)
    t, outcome = _walk(*env.args, pos, code, *rargs, horizon, np.uint64(walk_seed), steps)
    traj = Trajectory(tuple(int(c) for c in start), steps[:t].copy(), int(walk_seed))
    return traj, _report(outcome, t, pos, d, stop_rule)


def annealed_seeds(master_seed, trial_index, kind="annealed"):
    """(environment seed, walk seed) for one annealed trial."""
    base = _rng.derive_seed(master_seed, kind)
    return (_rng.trial_key(base, trial_index, _rng.ROLE_ENV),
            _rng.trial_key(base, trial_index, _rng.ROLE_WALK1))


def run_annealed(law, start, stop_rule, horizon, trial_index, master_seed, kind="annealed",
                 record=True):
    """One trial of the annealed law: fresh environment, fresh walk stream."""
    env_seed, walk_seed = annealed_seeds(master_seed, trial_index, kind)
    return run_quenched(Environment(law, env_seed), start, stop_rule, horizon, walk_seed, record)


def run_batch(law_or_env, start, stop_rule, horizon, trials, master_seed, kind="annealed",
              threads=None):
    """Run ``trials`` walks without recording paths.

    With an :class:`EnvironmentLaw` each trial gets its own environment
    (annealed); with an :class:`Environment` all trials share it (quenched).
    Returns (times, outcome codes, final positions).
    """
    if isinstance(law_or_env, Environment):
        args = law_or_env.args
        annealed = False
        d = law_or_env.d
    else:
        args = Environment(law_or_env, 0).args
        annealed = True
        d = law_or_env.d
    code, rargs, cap = _encode_rule(stop_rule, d)
    if cap is not None:
        horizon = cap
    base = np.uint64(_rng.derive_seed(master_seed, kind))
    out_t = np.zeros(trials, dtype=np.int64)
    out_code = np.zeros(trials, dtype=np.int64)
    out_pos = np.zeros((trials, 3), dtype=np.int64)
    start3 = _pad3(start)

    def work(lo, hi):
        _batch(*args, annealed, base, lo, hi, start3, code, *rargs, horizon,
               out_t, out_code, out_pos)

    run_chunks(work, trials, threads)
    return out_t, out_code, out_pos[:, :d]


# probes -----------------------------------------------------------------------

@dataclass(frozen=True)
class VelocityEstimate:
    v: np.ndarray
    se: np.ndarray
    ci: tuple
    direction: np.ndarray
    trials: int


def velocity_estimate(law, n, trials, master_seed=0, level=0.95, threads=None,
                      kind="velocity", positions=None):
    """Sample mean of X_n / n over annealed trials with normal CIs per component."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if positions is None:
        _, _, positions = run_batch(law, (0,) * law.d, FixedN(n), n, trials, master_seed,
                                    kind, threads)
    x = positions / n
    mean, se, ci = normal_ci(x, level)
    norms = np.linalg.norm(positions, axis=1)
    unit = positions[norms > 0] / norms[norms > 0, None]
    direction = unit.mean(axis=0) if len(unit) else np.zeros(law.d)
    if np.linalg.norm(direction) > 0:
        direction = direction / np.linalg.norm(direction)
    return VelocityEstimate(mean, se, ci, direction, trials)


@dataclass(frozen=True)
class BacktrackEstimate:
    L: int
    trials: int
    backtrack: int
    forward: int
    censored: int
    horizon: int
    p_censored_as_failure: float
    ci_censored_as_failure: tuple
    p_censored_dropped: float
    ci_censored_dropped: tuple

    @property
    def horizon_too_small(self):
        return self.censored > 0.5 * self.trials


def default_halfspace_horizon(L, v_along):
    """``50 L / <v, ell>``, falling back to the diffusive ``50 L^2`` for slow walks."""
    if v_along > 1.0 / max(L, 1):
        return int(math.ceil(50 * L / v_along))
    return int(50 * max(L, 1) ** 2)


def backtrack_probability(law, ell, L, trials, horizon=None, master_seed=0, level=0.95,
                          threads=None, kind="condt", velocity=None):
    """Annealed frequency of hitting ``<X, l> <= -L`` before ``<X, l> >= L``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    ell = tuple(int(c) for c in ell)
    if horizon is None:
        if velocity is None:
            velocity = velocity_estimate(law, 2000, 100, master_seed, threads=threads).v
        lhat = np.asarray(ell, dtype=float) / np.linalg.norm(ell)
        horizon = default_halfspace_horizon(L, float(np.dot(velocity, lhat)))
    rule = Halfspace(ell, L, two_sided=True)
    _, codes, _ = run_batch(law, (0,) * law.d, rule, horizon, trials, master_seed,
                            f"{kind}/L={L}", threads)
    b = int(np.sum(codes == HIT_LO))
    f = int(np.sum(codes == HIT_HI))
    c = int(np.sum(codes == CENSORED))
    kept = trials - c
    return BacktrackEstimate(
        L, trials, b, f, c, int(horizon),
        (b + c) / trials, clopper_pearson(b + c, trials, level),
        b / kept if kept else math.nan,
        clopper_pearson(b, kept, level) if kept else (0.0, 1.0),
    )


def classify_exit(P, traj):
    """'right', 'other_boundary' or 'still_inside' for the first exit of ``P``."""
    pos = traj.positions
    if not P.contains(pos[0]):
        raise ValueError("trajectory must start inside the parallelogram")
    inside = P.contains(pos)
    out = np.flatnonzero(~inside)
    if len(out) == 0:
        return "still_inside"
    x = pos[out[0]]
    return "right" if x[0] - P.center[0] >= P.length else "other_boundary"


@dataclass
class ExitStats:
    quenched: dict
    annealed: dict
    non_right_fraction: float
    annealed_non_right_fraction: float
    deviation_fraction: float
    censored: int
    median_time: float
    sup_discrepancy: float
    undefined: bool = False


def _exit_histogram(P, times, codes, pos, cell_size, anchor, time_bin):
    right = (codes == EXIT) & (pos[:, 0] - P.center[0] >= P.length)
    hist = {}
    n_right = int(right.sum())
    if n_right == 0:
        return hist, right
    trans = P.transverse(pos[right].astype(float))[:, 1:]
    cells = np.floor(trans / cell_size).astype(np.int64)
    tb = np.floor((times[right] - anchor) / time_bin).astype(np.int64)
    keys = [tuple(c.tolist()) + (int(t),) for c, t in zip(cells, tb)]
    for k in keys:
        hist[k] = hist.get(k, 0) + 1
    total = len(times)
    return {k: v / total for k, v in sorted(hist.items())}, right


def exit_statistics(env, P, start, trials, cell_size, law=None, master_seed=0, time_bin=None,
                    horizon=None, threads=None):
    """Histogram of right-face exits over (transverse cell, time bin).

    Times are binned relative to the empirical median exit time of the
    quenched sample.  When ``law`` is given the same histogram is built for
    the annealed law and the sup-norm gap over cells is reported.
    """
    if cell_size < 1:
        raise ValueError("cell_size must be >= 1")
    if not P.in_middle_third(np.asarray(start)):
        raise ValueError("start must lie in the middle third")
    if trials == 0:
        return ExitStats({}, {}, math.nan, math.nan, math.nan, 0, math.nan, math.nan, True)
    time_bin = time_bin or P.N
    horizon = horizon or 200 * P.length
    tq, cq, pq = run_batch(env, start, P, horizon, trials, master_seed, "exit/quenched", threads)
    done = cq == EXIT
    anchor = float(np.median(tq[done])) if done.any() else 0.0
    hq, rq = _exit_histogram(P, tq, cq, pq, cell_size, anchor, time_bin)
    dev = P.N * r_seq(P.j + 1, P.N)
    stats = ExitStats(
        quenched=hq,
        annealed={},
        non_right_fraction=float(1 - rq.mean()),
        annealed_non_right_fraction=math.nan,
        deviation_fraction=float(np.mean(np.abs(tq[done] - anchor) > dev)) if done.any() else math.nan,
        censored=int(np.sum(cq == CENSORED)),
        median_time=anchor,
        sup_discrepancy=math.nan,
    )
    if law is not None:
        ta, ca, pa = run_batch(law, start, P, horizon, trials, master_seed, "exit/annealed", threads)
        ha, ra = _exit_histogram(P, ta, ca, pa, cell_size, anchor, time_bin)
        stats.annealed = ha
        stats.annealed_non_right_fraction = float(1 - ra.mean())
        keys = set(hq) | set(ha)
        stats.sup_discrepancy = max((abs(hq.get(k, 0) - ha.get(k, 0)) for k in keys), default=0.0)
    return stats
