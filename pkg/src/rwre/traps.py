"""Planted traps, escape times and trap-probability accounting.

A trap of size ``L`` around the origin is the region

    Delta = {x : |x_1| < L and |x_j - theta_j x_1 / theta_1| < L for j >= 2}

in which every site ``y != 0`` pushes the walk back with local drift
``-c1 * y / |y|``.  Planting uses ``omega(y, e) = 1/(2d) + (c1/2) <e, -y/|y|>``,
whose drift is exactly ``-c1 y/|y|`` because ``sum_e <e, u> e = 2u``.
"""

from dataclasses import dataclass, field
import itertools
import math

import numba as nb
import numpy as np

from rwre import _rng
from rwre._parallel import run_chunks
from rwre.env_core import EllipticityError, Environment, EnvironmentLaw, nb_site_probs, step_vectors


@dataclass(frozen=True)
class TrapSpec:
    L: int
    c1: float
    background: EnvironmentLaw
    theta: tuple = None

    def __post_init__(self):
        d = self.background.d
        theta = (1.0,) + (0.0,) * (d - 1) if self.theta is None else tuple(float(t) for t in self.theta)
        if len(theta) != d or theta[0] <= 0:
            raise ValueError("theta must have d entries and a positive first coordinate")
        object.__setattr__(self, "theta", theta)
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.c1 < 0:
            raise ValueError("c1 must be >= 0")
        if self.c1 > 2 * (1 / (2 * d) - self.background.kappa) + 1e-15:
            raise EllipticityError(f"c1={self.c1} too large for kappa={self.background.kappa}")

    @property
    def d(self):
        return self.background.d

    @property
    def box_radius(self):
        tilt = max((abs(t) / self.theta[0] for t in self.theta[1:]), default=0.0)
        return int(math.ceil(self.L * (1 + tilt)))


def in_region(spec, sites):
    """Boolean membership of an (m, d) array of sites in Delta."""
    x = np.atleast_2d(np.asarray(sites, dtype=float))
    th = np.asarray(spec.theta)
    ok = np.abs(x[:, 0]) < spec.L
    for j in range(1, spec.d):
        ok &= np.abs(x[:, j] * th[0] - th[j] * x[:, 0]) < spec.L * th[0]
    return ok


def region_sites(spec, include_origin=False):
    """Sites of Delta in lexicographic order."""
    R = spec.box_radius
    grid = np.array(list(itertools.product(range(-R, R + 1), repeat=spec.d)), dtype=np.int64)
    sites = grid[in_region(spec, grid)]
    if not include_origin:
        sites = sites[np.any(sites != 0, axis=1)]
    return sites


def trap_probs(c1, y):
    """Planted site vector at ``y != 0``."""
    y = np.asarray(y, dtype=float)
    u = y / np.linalg.norm(y)
    d = len(y)
    return 1 / (2 * d) - (c1 / 2) * (step_vectors(d) @ u)


def trap_overrides(spec):
    return {tuple(int(c) for c in y): tuple(trap_probs(spec.c1, y)) for y in region_sites(spec)}


def build_naive_trap(spec, seed):
    """Background environment with the trap planted around the origin."""
    return Environment(spec.background, seed, trap_overrides(spec))


def membership_defect(env, spec):
    """max over y in Delta\\{0} of |<d(y), y/|y|> + c1|| (0 for a planted trap)."""
    sites = region_sites(spec)
    if len(sites) == 0:
        return 0.0
    p = env.probs_at(sites)
    drift = p[:, 0::2] - p[:, 1::2]
    u = sites / np.linalg.norm(sites, axis=1)[:, None]
    return float(np.max(np.abs(np.sum(drift * u, axis=1) + spec.c1)))


def is_trapped(env, spec, tol=1e-12):
    return membership_defect(env, spec) <= tol


# escape times ---------------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def _escape(cum, inside, offs, start, horizon, keys, out_t, lo, hi):
    d2 = offs.shape[0]
    for i in range(lo, hi):
        idx = start
        t = 0
        key = keys[i]
        while inside[idx] and t < horizon:
            u = _rng.nb_unit(key, t)
            e = 0
            while u >= cum[idx, e] and e < d2 - 1:
                e += 1
            idx += offs[e]
            t += 1
        out_t[i] = t if not inside[idx] else -1


@dataclass
class EscapeSample:
    times: np.ndarray        # exit times, horizon for censored trials
    censored: np.ndarray
    horizon: int

    @property
    def censor_rate(self):
        return float(self.censored.mean()) if len(self.censored) else math.nan

    @property
    def mean(self):
        return float(self.times.mean())


def escape_keys(master_seed, trials, kind="trap"):
    base = _rng.derive_seed(master_seed, kind)
    return np.array([_rng.trial_key(base, i, _rng.ROLE_WALK1) for i in range(trials)],
                    dtype=np.uint64)


def trap_escape_time(env, spec, trials, horizon, master_seed=0, kind="trap", threads=None):
    """Exit times of Delta for walks started at 0 in ``env``.

    Walk keys depend only on (master_seed, kind, trial), so runs with
    different ``c1`` or ``L`` are paired.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    d = spec.d
    R = spec.box_radius + 1
    side = 2 * R + 1
    grid = np.array(list(itertools.product(range(-R, R + 1), repeat=d)), dtype=np.int64)
    inside = in_region(spec, grid)
    probs = np.zeros((len(grid), 2 * d))
    probs[inside] = env.probs_at(grid[inside])
    cum = np.cumsum(probs, axis=1)
    strides = np.array([side ** (d - 1 - j) for j in range(d)], dtype=np.int64)
    offs = (step_vectors(d) @ strides).astype(np.int64)
    start = int(R * strides.sum())
    keys = escape_keys(master_seed, trials, kind)
    out = np.zeros(trials, dtype=np.int64)

    def work(lo, hi):
        _escape(cum, inside, offs, start, int(horizon), keys, out, lo, hi)

    run_chunks(work, trials, threads)
    cens = out < 0
    times = np.where(cens, horizon, out)
    return EscapeSample(times, cens, int(horizon))


# supermartingale ------------------------------------------------------------

@dataclass
class SupermartingaleReport:
    c2: float
    c3: float
    sites: np.ndarray
    ratios: np.ndarray       # E^y[exp(c3 |X_1|)] / exp(c3 |y|) per checked site
    passed: bool

    @property
    def worst(self):
        return float(self.ratios.max()) if len(self.ratios) else math.nan


def one_step_ratios(env, sites, c3):
    """sum_e omega(y, e) exp(c3 (|y + e| - |y|)) for each site (a 2d-term sum)."""
    sites = np.asarray(sites, dtype=np.int64)
    p = env.probs_at(sites)
    r0 = np.linalg.norm(sites, axis=1)
    out = np.empty(len(sites))
    for k, e in enumerate(step_vectors(sites.shape[1])):
        term = p[:, k] * np.exp(c3 * (np.linalg.norm(sites + e, axis=1) - r0))
        out = term if k == 0 else out + term
    return out


def supermartingale_check(env, spec, c2, c3):
    """E^y[e^{c3|X_1|}] <= e^{c3|y|} at every y in Delta with |y| >= c2."""
    sites = region_sites(spec)
    sites = sites[np.linalg.norm(sites, axis=1) >= c2]
    ratios = one_step_ratios(env, sites, c3)
    return SupermartingaleReport(float(c2), float(c3), sites, ratios, bool(np.all(ratios <= 1.0)))


def calibrate_supermartingale(env, spec, c3=None):
    """c3 = c1/4 by default; c2 = smallest site norm beyond every failing site."""
    c3 = spec.c1 / 4 if c3 is None else c3
    sites = region_sites(spec)
    norms = np.linalg.norm(sites, axis=1)
    ratios = one_step_ratios(env, sites, c3)
    bad = norms[ratios > 1.0]
    if len(bad) == 0:
        c2 = float(norms.min()) if len(norms) else 0.0
    else:
        above = norms[norms > bad.max()]
        c2 = float(above.min()) if len(above) else math.inf
    return supermartingale_check(env, spec, c2, c3)


# probability of the trap event ----------------------------------------------

def direction_net(d):
    """Unit vectors of the nonzero points of {-1, 0, 1}^d (8 in d=2, 26 in d=3)."""
    pts = np.array([p for p in itertools.product((-1, 0, 1), repeat=d) if any(p)], dtype=float)
    return pts / np.linalg.norm(pts, axis=1)[:, None]


def snap(directions, net):
    """Index of the closest net vector (largest cosine; first on ties)."""
    u = np.asarray(directions, dtype=float)
    u = u / np.linalg.norm(u, axis=1)[:, None]
    cos = u @ net.T
    return np.argmax(cos >= cos.max(axis=1, keepdims=True) - 1e-12, axis=1)


@dataclass
class TrapProbability:
    L: int
    sites: int                  # |Delta \ {0}|
    log_p_exact: float          # -inf when the support never fits
    exact_note: str
    c1_relaxed: float
    p_net: np.ndarray           # per net direction site probability
    log_p_relaxed: float
    mc_estimate: float = math.nan
    mc_ci: tuple = (math.nan, math.nan)
    mc_trials: int = 0
    extras: dict = field(default_factory=dict)


def _drifts_and_weights(law, samples, master_seed):
    if law.finite_support:
        atoms = np.array([a.probs for a in law.support()])
        return atoms[:, 0::2] - atoms[:, 1::2], law.support_weights()
    env = Environment(law, _rng.derive_seed(master_seed, "trap-prob/nu"))
    coords = np.zeros((samples, law.d), dtype=np.int64)
    coords[:, 0] = np.arange(samples)
    p = env.probs_at(coords)
    return p[:, 0::2] - p[:, 1::2], np.full(samples, 1.0 / samples)


def trap_probability(law, spec, c1_relaxed=None, nu_samples=200_000, master_seed=0):
    """Exact strict and relaxed (direction-net) probability of the trap event.

    The strict event needs ``<d(y), y/|y|> <= -c1`` at every site; for finite
    support this is a product of per-site atom weights and is usually 0
    because the atoms cover finitely many directions.  The relaxed event
    snaps ``y/|y|`` to the net and uses the threshold ``c1_relaxed``.
    Laws with infinite support integrate over ``nu_samples`` draws of nu.
    """
    c1r = spec.c1 / 2 if c1_relaxed is None else c1_relaxed
    if not 0 <= c1r <= spec.c1:
        raise ValueError("relaxed threshold must lie in [0, c1]")
    sites = region_sites(spec)
    u = sites / np.linalg.norm(sites, axis=1)[:, None]
    drift, w = _drifts_and_weights(law, nu_samples, master_seed)
    if law.finite_support:
        per_site = ((drift @ u.T) <= -spec.c1 + 1e-12).T @ w
        if np.all(per_site > 0):
            log_exact, note = float(np.sum(np.log(per_site))), ""
        else:
            bad = tuple(int(c) for c in sites[np.argmin(per_site)])
            log_exact = -math.inf
            note = f"no atom has <d, y/|y|> <= -c1 at y={bad}; exact probability is 0"
    else:
        log_exact, note = math.nan, "infinite support: only the relaxed event is computed"
    net = direction_net(law.d)
    p_net = ((drift @ net.T) <= -c1r + 1e-12).T @ w
    idx = snap(u, net)
    with np.errstate(divide="ignore"):
        log_rel = float(np.sum(np.log(p_net[idx])))
    return TrapProbability(spec.L, len(sites), log_exact, note, c1r, p_net, log_rel)


@nb.njit(cache=True, nogil=True)
def _relaxed_mc(kind, params, d, base, sites, dirs, c1r, lo, hi, out):
    d2 = 2 * d
    probs = np.empty(d2)
    empty_k = np.zeros(0, dtype=np.int64)
    empty_p = np.zeros((0, d2))
    for i in range(lo, hi):
        seed = _rng.nb_trial_key(base, i, 1)
        ok = True
        for s in range(sites.shape[0]):
            nb_site_probs(kind, params, seed, d, 0, empty_k, empty_p,
                          sites[s, 0], sites[s, 1], sites[s, 2], probs)
            proj = 0.0
            for j in range(d):
                proj += (probs[2 * j] - probs[2 * j + 1]) * dirs[s, j]
            if proj > -c1r + 1e-12:
                ok = False
                break
        out[i] = ok


def relaxed_event_mc(law, spec, c1_relaxed, trials, master_seed=0, threads=None, level=0.95):
    """Monte Carlo frequency of the relaxed trap event over sampled environments."""
    from rwre.stats import clopper_pearson

    sites = region_sites(spec)
    net = direction_net(law.d)
    dirs = net[snap(sites, net)]
    pad = np.zeros((len(sites), 3), dtype=np.int64)
    pad[:, : law.d] = sites
    kind, params = law.encoded
    base = np.uint64(_rng.derive_seed(master_seed, "trap-mc", spec.L))
    out = np.zeros(trials, dtype=np.bool_)

    def work(lo, hi):
        _relaxed_mc(kind, params, law.d, base, pad, dirs, c1_relaxed, lo, hi, out)

    run_chunks(work, trials, threads)
    k = int(out.sum())
    return k / trials, clopper_pearson(k, trials, level), k


def compass_law(d, strength, kappa=None):
    """Nestling mixture: one atom with drift ``strength * u`` per net direction u."""
    from rwre.env_core import mixture_law

    net = direction_net(d)
    atoms = [1 / (2 * d) + (strength / 2) * (step_vectors(d) @ u) for u in net]
    return mixture_law(atoms, np.ones(len(atoms)), kappa)
