"""Lattice geometry, single-site laws and lazily realized i.i.d. environments.

Steps are indexed ``0..2d-1`` in the order ``+e1, -e1, +e2, -e2, ...``.
Sites are plain integer tuples.  An :class:`Environment` never stores the
infinite field; ``sample_env_site`` hashes ``(seed, site)`` into the draws of
the single-site law, so the same site always yields the same vector.

The built-in laws are choices made for experiments, not laws singled out by
the underlying theory:

``uniform``
    every site is the simple random walk, ``1/(2d)`` per step.
``mixture``
    finite support: atom ``k`` with probability ``weights[k]``.
``drift-perturbed``
    along the chosen step direction the two opposite probabilities are
    ``1/(2d) +- delta * V`` with ``V`` uniform on ``[-3/4, 1]`` (mean drift
    ``delta / 4``, nestling for ``delta > 0``); every transverse axis gets a
    symmetric fluctuation ``1/(2d) +- a * W`` with ``W`` uniform on
    ``[-1, 1]`` and ``a = (1/(2d) - kappa) / 2``.
``truncated-dirichlet``
    Dirichlet(alpha) conditioned on every entry being ``>= kappa``
    (rejection sampling; the result is the conditioned law).
"""

from dataclasses import dataclass, field
from functools import cached_property
import itertools
import math

import numba as nb
import numpy as np
from scipy.spatial import ConvexHull, QhullError

from rwre._rng import nb_site_key, nb_unit

UNIFORM, MIXTURE, DRIFT, DIRICHLET = 0, 1, 2, 3
LAW_KINDS = {
    "uniform": UNIFORM,
    "mixture": MIXTURE,
    "drift-perturbed": DRIFT,
    "truncated-dirichlet": DIRICHLET,
}
DEFAULT_KAPPA = {1: 0.1, 2: 0.05, 3: 0.02}

_PACK_OFF = 1 << 20
_PACK_LIM = (1 << 20) - 1


class EllipticityError(ValueError):
    pass


class UnsupportedLawError(ValueError):
    pass


# geometry --------------------------------------------------------------------

def step_vectors(d):
    """(2d, d) integer array of unit steps in canonical order."""
    out = np.zeros((2 * d, d), dtype=np.int64)
    for j in range(d):
        out[2 * j, j] = 1
        out[2 * j + 1, j] = -1
    return out


def norm1(site):
    return sum(abs(c) for c in site)


def norm_inf(site):
    return max(abs(c) for c in site)


def norm2(site):
    return math.sqrt(sum(c * c for c in site))


def parity(site):
    return sum(site) % 2


def unit_vector(d, axis):
    v = [0] * d
    v[axis] = 1
    return tuple(v)


def pack_site(site):
    """Pack up to three coordinates with ``|c| < 2**20`` into one int64."""
    c = list(site) + [0] * (3 - len(site))
    if any(abs(v) > _PACK_LIM for v in c):
        raise ValueError(f"coordinate out of packable range: {site}")
    return ((c[0] + _PACK_OFF) << 42) | ((c[1] + _PACK_OFF) << 21) | (c[2] + _PACK_OFF)


@nb.njit(cache=True, nogil=True, inline="always")
def nb_pack(c0, c1, c2):
    return ((c0 + _PACK_OFF) << 42) | ((c1 + _PACK_OFF) << 21) | (c2 + _PACK_OFF)


@nb.njit(cache=True, nogil=True, inline="always")
def nb_packable(c0, c1, c2):
    return abs(c0) <= _PACK_LIM and abs(c1) <= _PACK_LIM and abs(c2) <= _PACK_LIM


# site distributions ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SiteDistribution:
    probs: np.ndarray

    @property
    def d(self):
        return len(self.probs) // 2

    @property
    def min_entry(self):
        return float(self.probs.min())

    def __eq__(self, other):
        return isinstance(other, SiteDistribution) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __repr__(self):
        return f"SiteDistribution({np.array2string(self.probs, precision=4)})"


def make_site_dist(weights, kappa=0.0):
    """Normalize nonnegative ``weights`` (length 2d) into a site distribution.

    Raises ``ValueError`` for negative or all-zero weights and
    :class:`EllipticityError` when the smallest probability is zero or below
    ``kappa``.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(w) % 2 or len(w) == 0:
        raise ValueError("weights must be a vector of length 2d")
    if np.any(w < 0):
        raise ValueError("negative weight")
    total = w.sum()
    if total <= 0:
        raise ValueError("all weights are zero")
    p = w / total
    if p.min() <= 0 or p.min() < kappa:
        raise EllipticityError(f"min probability {p.min():.3g} violates ellipticity (kappa={kappa})")
    p.setflags(write=False)
    return SiteDistribution(p)


def local_drift(dist):
    """Expected one-step displacement ``sum_e p(e) e``."""
    p = dist.probs if isinstance(dist, SiteDistribution) else np.asarray(dist)
    return p[0::2] - p[1::2]


# laws ------------------------------------------------------------------------

@dataclass(frozen=True)
class EnvironmentLaw:
    """Single-site law ``nu``; use the constructors below rather than this directly."""

    kind: str
    d: int
    kappa: float
    delta: float = 0.0
    direction: int = 0
    weights: tuple = ()
    atoms: tuple = ()
    alpha: tuple = ()

    def __post_init__(self):
        if self.kind not in LAW_KINDS:
            raise ValueError(f"unknown law kind {self.kind!r}")
        if self.d not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        if not 0 < self.kappa <= 1 / (2 * self.d):
            raise EllipticityError(f"kappa={self.kappa} not in (0, 1/(2d)]")

    @property
    def finite_support(self):
        return self.kind in ("uniform", "mixture")

    def support(self):
        """Atoms of a finite-support law as SiteDistributions."""
        if self.kind == "uniform":
            return [make_site_dist(np.ones(2 * self.d))]
        if self.kind == "mixture":
            return [make_site_dist(a) for a in self.atoms]
        raise UnsupportedLawError(f"{self.kind} law has infinite support")

    def support_weights(self):
        if self.kind == "uniform":
            return np.ones(1)
        if self.kind == "mixture":
            return np.asarray(self.weights)
        raise UnsupportedLawError(f"{self.kind} law has infinite support")

    def mean_probs(self):
        """Analytic mean of the site vector, or None when unavailable."""
        d2 = 2 * self.d
        if self.kind == "uniform":
            return np.full(d2, 1 / d2)
        if self.kind == "mixture":
            return np.asarray(self.weights) @ np.asarray(self.atoms)
        if self.kind == "drift-perturbed":
            m = np.full(d2, 1 / d2)
            shift = self.delta / 8  # E[V] = 1/8
            m[self.direction] += shift
            m[self.direction ^ 1] -= shift
            return m
        if len(set(self.alpha)) == 1:
            return np.full(d2, 1 / d2)
        return None

    @cached_property
    def encoded(self):
        """(kind code, float parameter vector) consumed by the numba samplers."""
        d2 = 2 * self.d
        if self.kind == "uniform":
            params = np.zeros(1)
        elif self.kind == "mixture":
            cw = np.cumsum(self.weights)
            cw[-1] = 1.0
            params = np.concatenate([[len(self.atoms)], cw, np.asarray(self.atoms).ravel()])
        elif self.kind == "drift-perturbed":
            a = (1 / d2 - self.kappa) / 2
            params = np.array([self.delta, self.direction, self.kappa, a])
        else:
            params = np.concatenate([[self.kappa], self.alpha])
        params = np.ascontiguousarray(params, dtype=np.float64)
        params.setflags(write=False)
        return LAW_KINDS[self.kind], params


def uniform_law(d, kappa=None):
    return EnvironmentLaw("uniform", d, 1 / (2 * d) if kappa is None else kappa)


def mixture_law(atoms, weights, kappa=None):
    atoms = [tuple(make_site_dist(a).probs.tolist()) for a in atoms]
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != len(atoms) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative, one per atom")
    w = tuple((w / w.sum()).tolist())
    d = len(atoms[0]) // 2
    if any(len(a) != 2 * d for a in atoms):
        raise ValueError("atoms must share a dimension")
    floor = min(min(a) for a in atoms)
    if kappa is None:
        kappa = floor
    elif floor < kappa:
        raise EllipticityError(f"atom entry {floor} below kappa={kappa}")
    return EnvironmentLaw("mixture", d, kappa, weights=w, atoms=tuple(atoms))


def two_point_mixture(p, dist_a, dist_b, kappa=None):
    return mixture_law([dist_a, dist_b], [p, 1 - p], kappa)


def drift_perturbed_law(d, delta, direction=0, kappa=None):
    kappa = DEFAULT_KAPPA[d] if kappa is None else kappa
    if not 0 <= direction < 2 * d:
        raise ValueError("direction must be a step index")
    if delta < 0 or delta > 1 / (2 * d) - kappa + 1e-15:
        raise EllipticityError(f"delta={delta} exceeds 1/(2d) - kappa")
    return EnvironmentLaw("drift-perturbed", d, kappa, delta=float(delta), direction=int(direction))


def truncated_dirichlet_law(alpha, kappa=None):
    alpha = tuple(float(a) for a in alpha)
    d = len(alpha) // 2
    if len(alpha) != 2 * d or d == 0 or min(alpha) <= 0:
        raise ValueError("alpha must be a positive vector of length 2d")
    kappa = DEFAULT_KAPPA[d] if kappa is None else kappa
    if 2 * d * kappa >= 1:
        raise EllipticityError("kappa leaves no room in the simplex")
    law = EnvironmentLaw("truncated-dirichlet", d, kappa, alpha=alpha)
    # the conditioned law must be reachable by rejection in reasonable time
    tries = _dirichlet_acceptance(law.encoded[1], 2 * d, 2000)
    if tries > 1e4:
        raise EllipticityError(f"rejection rate too high ({tries:.0f} draws per site)")
    return law


# environments ----------------------------------------------------------------

@dataclass(frozen=True)
class Environment:
    """Deterministic lazy realization of ``P = nu^{Z^d}``.

    ``overrides`` maps sites to fixed probability vectors and wins over the
    law.  With ``period=L`` every query is first reduced mod ``L`` (overrides
    are then keyed by reduced coordinates).
    """

    law: EnvironmentLaw
    seed: int
    overrides: tuple = field(default=())
    period: int = 0

    def __post_init__(self):
        ov = self.overrides
        if isinstance(ov, dict):
            ov = ov.items()
        items = []
        for site, probs in ov:
            site = tuple(int(c) for c in site)
            if len(site) != self.d:
                raise ValueError(f"override site {site} has wrong dimension")
            if isinstance(probs, SiteDistribution):
                probs = probs.probs
            probs = tuple(float(x) for x in probs)
            if len(probs) != 2 * self.d or abs(sum(probs) - 1) > 1e-12:
                raise ValueError(f"override at {site} is not a distribution")
            items.append((site, probs))
        items.sort()
        if len({s for s, _ in items}) != len(items):
            raise ValueError("duplicate override site")
        object.__setattr__(self, "overrides", tuple(items))
        object.__setattr__(self, "seed", int(self.seed) & ((1 << 64) - 1))
        if self.period < 0 or self.period == 1:
            raise ValueError("period must be 0 (none) or >= 2")

    @property
    def d(self):
        return self.law.d

    def with_overrides(self, extra):
        merged = dict(self.overrides)
        merged.update({tuple(k): v for k, v in dict(extra).items()})
        return Environment(self.law, self.seed, merged, self.period)

    @cached_property
    def args(self):
        """Flat argument tuple for the numba kernels."""
        kind, params = self.law.encoded
        d2 = 2 * self.d
        if self.overrides:
            keys = np.array([pack_site(s) for s, _ in self.overrides], dtype=np.int64)
            probs = np.array([p for _, p in self.overrides], dtype=np.float64)
        else:
            keys = np.zeros(0, dtype=np.int64)
            probs = np.zeros((0, d2), dtype=np.float64)
        return (kind, params, np.uint64(self.seed), self.d, self.period, keys, probs)

    def probs_at(self, coords):
        """Site vectors for an (m, d) integer array of sites -> (m, 2d)."""
        coords = np.asarray(coords, dtype=np.int64)
        if coords.ndim == 1:
            coords = coords[None, :]
        pad = np.zeros((len(coords), 3), dtype=np.int64)
        pad[:, : self.d] = coords
        out = np.empty((len(coords), 2 * self.d))
        nb_site_probs_block(*self.args, pad, out)
        return out


def sample_env_site(env, site):
    p = env.probs_at(np.asarray(site, dtype=np.int64)[None, :])[0]
    p.setflags(write=False)
    return SiteDistribution(p)


# numba samplers --------------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def _normal(key, counter):
    u1 = nb_unit(key, counter)
    u2 = nb_unit(key, counter + 1)
    return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2), counter + 2


@nb.njit(cache=True, nogil=True)
def _gamma(key, counter, a):
    boost = 1.0
    if a < 1.0:
        boost = nb_unit(key, counter) ** (1.0 / a)
        counter += 1
        a += 1.0
    dd = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * dd)
    while True:
        x, counter = _normal(key, counter)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = nb_unit(key, counter)
        counter += 1
        if math.log(1.0 - u) < 0.5 * x * x + dd - dd * v + dd * math.log(v):
            return dd * v * boost, counter


@nb.njit(cache=True, nogil=True)
def _dirichlet_into(key, params, d2, out):
    kappa = params[0]
    counter = 0
    tries = 0
    while True:
        tries += 1
        total = 0.0
        for e in range(d2):
            g, counter = _gamma(key, counter, params[1 + e])
            out[e] = g
            total += g
        ok = total > 0.0
        for e in range(d2):
            out[e] /= total
            if out[e] < kappa:
                ok = False
        if ok:
            return tries


@nb.njit(cache=True, nogil=True, inline="always")
def _law_into(kind, params, key, d2, out):
    if kind == 0:
        for e in range(d2):
            out[e] = 1.0 / d2
    elif kind == 1:
        m = int(params[0])
        u = nb_unit(key, 0)
        k = 0
        while k < m - 1 and u >= params[1 + k]:
            k += 1
        base = 1 + m + k * d2
        for e in range(d2):
            out[e] = params[base + e]
    elif kind == 2:
        delta = params[0]
        direction = int(params[1])
        a = params[3]
        for j in range(d2 // 2):
            if j == direction // 2:
                v = -0.75 + 1.75 * nb_unit(key, j)
                s = delta * v
                if direction % 2 == 1:
                    s = -s
            else:
                s = a * (2.0 * nb_unit(key, j) - 1.0)
            out[2 * j] = 1.0 / d2 + s
            out[2 * j + 1] = 1.0 / d2 - s
    else:
        _dirichlet_into(key, params, d2, out)


@nb.njit(cache=True, nogil=True, inline="always")
def nb_site_probs(kind, params, seed, d, period, ov_keys, ov_probs, c0, c1, c2, out):
    """Fill ``out`` with the site vector at (c0, c1, c2)."""
    if period > 0:
        c0 = c0 % period
        c1 = c1 % period
        c2 = c2 % period
    if ov_keys.shape[0] > 0 and nb_packable(c0, c1, c2):
        key = nb_pack(c0, c1, c2)
        i = np.searchsorted(ov_keys, key)
        if i < ov_keys.shape[0] and ov_keys[i] == key:
            for e in range(2 * d):
                out[e] = ov_probs[i, e]
            return
    _law_into(kind, params, nb_site_key(seed, c0, c1, c2), 2 * d, out)


@nb.njit(cache=True, nogil=True)
def nb_site_probs_block(kind, params, seed, d, period, ov_keys, ov_probs, coords, out):
    for i in range(coords.shape[0]):
        nb_site_probs(kind, params, seed, d, period, ov_keys, ov_probs,
                      coords[i, 0], coords[i, 1], coords[i, 2], out[i])


@nb.njit(cache=True)
def _dirichlet_acceptance(params, d2, sites):
    out = np.empty(d2)
    total = 0
    for i in range(sites):
        total += _dirichlet_into(nb_site_key(np.uint64(12345), i, 0, 0), params, d2, out)
    return total / sites


# drift hull ------------------------------------------------------------------

@dataclass(frozen=True)
class DriftHull:
    drift_support: tuple
    contains_zero_interior: bool


def _zero_in_interior(points, tol=1e-12):
    pts = np.asarray(points, dtype=np.float64)
    d = pts.shape[1]
    if len(pts) < d + 1:
        return False
    if np.linalg.matrix_rank(pts - pts.mean(axis=0), tol=1e-10) < d:
        return False
    if d == 1:
        return pts.min() < -tol and pts.max() > tol
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return False
    # facet equations: normal . x + offset <= 0 inside
    return bool(np.all(hull.equations[:, -1] < -tol))


def drift_hull(law):
    drifts = [tuple(local_drift(s).tolist()) for s in law.support()]
    uniq = tuple(sorted(set(drifts)))
    return DriftHull(uniq, _zero_in_interior(uniq))


def is_nestling(law):
    """Whether 0 is interior to the convex hull of the support of the local drift."""
    if not law.finite_support:
        raise UnsupportedLawError(f"nestling test needs finite support, got {law.kind}")
    return drift_hull(law).contains_zero_interior


def ball_sites(d, radius, norm="l1"):
    """All sites of the closed ball of the given integer radius."""
    r = int(math.floor(radius))
    rng = range(-r, r + 1)
    out = []
    for site in itertools.product(rng, repeat=d):
        if norm == "l1" and norm1(site) <= radius:
            out.append(site)
        elif norm == "l2" and norm2(site) <= radius:
            out.append(site)
        elif norm == "linf":
            out.append(site)
    return out
