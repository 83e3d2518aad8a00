"""Exact dynamic programming for quenched heat kernels and the density f_n.

Fields live on a dense box ``[-R, R]^d`` around an anchor with ``R = n + 1``,
which always contains the ball the walk can reach in ``n`` steps; the outer
layer stays zero so neighbour reads never leave the array.  Values below
``1e-300`` are pruned after each step and the pruned mass is kept.

``f_n(omega) = sum_z P^z_omega(X_n = 0)`` is the density of the law of the
environment seen from the particle at time ``n`` with respect to ``P``; it is
computed by the backward recursion ``h_{k+1}(z) = sum_e omega(z, e) h_k(z + e)``.
On a periodic environment the same quantity reduces to the torus chain and
converges to ``L^d pi(0)``.
"""

from dataclasses import dataclass
import csv
import math

import numba as nb
import numpy as np
import scipy.sparse as sp

from rwre import _rng
from rwre._parallel import get_threads, run_chunks
from rwre.env_core import Environment, step_vectors
from rwre.regen import tail_estimate
from rwre.stats import fit_line, normal_ci

PRUNE = 1e-300
DEFAULT_BUDGET = 1_500_000_000  # bytes


class MemoryGuardError(RuntimeError):
    guard = "memory_budget"


# box helpers -----------------------------------------------------------------

def _box(d, R):
    side = 2 * R + 1
    strides = np.array([side ** (d - 1 - j) for j in range(d)], dtype=np.int64)
    return side, strides


def _box_coords(d, R, anchor):
    side = 2 * R + 1
    axes = [np.arange(-R, R + 1, dtype=np.int64) + anchor[j] for j in range(d)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    out = np.zeros((side ** d, 3), dtype=np.int64)
    out[:, :d] = grid
    return out


def _check_budget(d, R, budget, arrays):
    cells = (2 * R + 1) ** d
    need = cells * 8 * (2 * d + arrays + 3)
    if need > budget:
        raise MemoryGuardError(f"memory_budget exceeded: need {need} bytes, budget {budget}")


def _offsets(d, strides):
    st = step_vectors(d)
    return (st @ strides).astype(np.int64)


def box_probs(env, anchor, R):
    """Site vectors on the box ``anchor + [-R, R]^d`` in flat C order."""
    coords = _box_coords(env.d, R, anchor)
    out = np.empty((len(coords), 2 * env.d))
    from rwre.env_core import nb_site_probs_block
    nb_site_probs_block(*env.args, coords, out)
    return out


# kernels ---------------------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def _forward_step(probs, offs, cur, nxt, lo, hi):
    """Push ``cur`` one step forward into ``nxt`` (zeroed by caller)."""
    d2 = offs.shape[0]
    for i in range(lo, hi + 1):
        v = cur[i]
        if v == 0.0:
            continue
        for e in range(d2):
            nxt[i + offs[e]] += v * probs[i, e]


@nb.njit(cache=True, nogil=True)
def _backward_step(probs, offs, interior, cur, nxt, lo, hi):
    d2 = offs.shape[0]
    for i in range(lo, hi + 1):
        if not interior[i]:
            continue
        s = 0.0
        for e in range(d2):
            s += probs[i, e] * cur[i + offs[e]]
        nxt[i] = s


@nb.njit(cache=True, nogil=True)
def _prune(a, lo, hi):
    lost = 0.0
    for i in range(lo, hi + 1):
        if a[i] != 0.0 and a[i] < 1e-300:
            lost += a[i]
            a[i] = 0.0
    return lost


@dataclass
class KernelField:
    """Dense nonnegative field on ``anchor + [-R, R]^d``."""

    time: int
    anchor: tuple
    R: int
    values: np.ndarray
    kind: str
    pruned_mass: float = 0.0

    @property
    def d(self):
        return len(self.anchor)

    def __getitem__(self, site):
        idx = tuple(int(s) - a + self.R for s, a in zip(site, self.anchor))
        if any(i < 0 or i > 2 * self.R for i in idx):
            return 0.0
        return float(self.values[idx])

    def total(self):
        return float(self.values.sum())

    def items(self):
        """Sorted (site, value) pairs over the positive support."""
        nz = np.argwhere(self.values > 0)
        for idx in nz:
            site = tuple(int(i) - self.R + a for i, a in zip(idx, self.anchor))
            yield site, float(self.values[tuple(idx)])

    def to_dict(self):
        return dict(self.items())

    def grid(self):
        """(side^d, d) integer coordinates matching ``values.ravel()``."""
        return _box_coords(self.d, self.R, self.anchor)[:, : self.d]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j + 1}" for j in range(self.d)] + ["value"])
            for site, v in self.items():
                w.writerow(list(site) + [repr(v)])


def _forward_fields(probs, d, R, start_index, n_list):
    """Forward DP from one cell; snapshots at the sorted times in ``n_list``."""
    side, strides = _box(d, R)
    offs = _offsets(d, strides)
    cur = np.zeros(side ** d)
    cur[start_index] = 1.0
    lo = hi = start_index
    span = int(strides[0])
    pruned = 0.0
    snaps = {}
    want = set(n_list)
    if 0 in want:
        snaps[0] = (cur.copy(), 0.0)
    for k in range(1, max(n_list) + 1):
        nxt = np.zeros_like(cur)
        _forward_step(probs, offs, cur, nxt, lo, hi)
        lo, hi = max(0, lo - span), min(len(cur) - 1, hi + span)
        pruned += _prune(nxt, lo, hi)
        cur = nxt
        if k in want:
            snaps[k] = (cur.copy(), pruned)
    return snaps


def heat_kernel_forward(env, z, n, budget=DEFAULT_BUDGET):
    """Exact quenched law of X_n started at ``z`` as a forward KernelField."""
    if n < 0:
        raise ValueError("n must be >= 0")
    d = env.d
    R = n + 1
    _check_budget(d, R, budget, 2)
    probs = box_probs(env, z, R)
    side, strides = _box(d, R)
    centre = int(np.sum(R * strides))
    vals, pruned = _forward_fields(probs, d, R, centre, [n])[n]
    return KernelField(n, tuple(z), R, vals.reshape((side,) * d), "forward", pruned)


def _interior(d, R):
    side = 2 * R + 1
    inner = np.zeros((side,) * d, dtype=np.bool_)
    inner[(slice(1, side - 1),) * d] = True
    return inner.ravel()


def backward_field(env, n, budget=DEFAULT_BUDGET, probs=None):
    """h_n(z) = P^z_omega(X_n = 0) for all z, as a backward KernelField."""
    if n < 0:
        raise ValueError("n must be >= 0")
    d = env.d
    R = n + 1
    _check_budget(d, R, budget, 3)
    if probs is None:
        probs = box_probs(env, (0,) * d, R)
    side, strides = _box(d, R)
    offs = _offsets(d, strides)
    interior = _interior(d, R)
    centre = int(np.sum(R * strides))
    cur = np.zeros(side ** d)
    cur[centre] = 1.0
    lo = hi = centre
    span = int(strides[0])
    pruned = 0.0
    for _ in range(n):
        lo, hi = max(0, lo - span), min(len(cur) - 1, hi + span)
        nxt = np.zeros_like(cur)
        _backward_step(probs, offs, interior, cur, nxt, lo, hi)
        pruned += _prune(nxt, lo, hi)
        cur = nxt
    return KernelField(n, (0,) * d, R, cur.reshape((side,) * d), "backward", pruned)


def f_n_exact(env, n, budget=DEFAULT_BUDGET):
    """``sum_z P^z_omega(X_n = 0)`` via the backward recursion."""
    return float(math.fsum(backward_field(env, n, budget).values.ravel()))


# f_n over environments -------------------------------------------------------

@dataclass
class FnTail:
    n: int
    values: np.ndarray
    mean: float
    se: float
    u: np.ndarray
    survival: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def env_seeds(master_seed, count, kind):
    base = _rng.derive_seed(master_seed, kind)
    return [_rng.trial_key(base, i, _rng.ROLE_ENV) for i in range(count)]


def f_n_samples(law, n, env_count, master_seed=0, overrides=None, threads=None, kind="fn_tail"):
    """Exact f_n for ``env_count`` i.i.d. environments (optionally with overrides)."""
    seeds = env_seeds(master_seed, env_count, kind)
    out = np.zeros(env_count)

    def work(lo, hi):
        for i in range(lo, hi):
            env = Environment(law, seeds[i], overrides or ())
            out[i] = f_n_exact(env, n)

    run_chunks(work, env_count, threads, chunk=1)
    return out


def f_n_tail(law, n, env_count, u_grid, master_seed=0, overrides=None, threads=None,
             level=0.95):
    """Empirical P(f_n > u) with CIs and the sample mean (E[f_n] = 1)."""
    if env_count < 1:
        raise ValueError("env_count must be >= 1")
    vals = f_n_samples(law, n, env_count, master_seed, overrides, threads)
    mean, se, _ = normal_ci(vals, level)
    te = tail_estimate(vals, u_grid, level, fit=False)
    return FnTail(n, vals, float(mean), float(se), te.u, te.survival, te.lower, te.upper)


# torus -----------------------------------------------------------------------

@dataclass
class TorusChain:
    L: int
    d: int
    matrix: sp.csr_matrix
    stationary: np.ndarray
    residual: float
    iterations: int
    converged: bool

    @property
    def density(self):
        return self.L ** self.d * self.stationary

    def index(self, site):
        idx = 0
        for c in site:
            idx = idx * self.L + (int(c) % self.L)
        return idx


def torus_matrix(env):
    """Row-stochastic transition matrix of the walk on the periodized environment."""
    L = env.period
    if L < 2:
        raise ValueError("environment must be periodized with L >= 2")
    d = env.d
    R = (L - 1) / 2
    sites = np.stack(np.meshgrid(*[np.arange(L)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    coords = np.zeros((len(sites), 3), dtype=np.int64)
    coords[:, :d] = sites
    probs = np.empty((len(sites), 2 * d))
    from rwre.env_core import nb_site_probs_block
    nb_site_probs_block(*env.args, coords, probs)
    del R
    rows, cols, vals = [], [], []
    weights = L ** np.arange(d - 1, -1, -1)
    for e, step in enumerate(step_vectors(d)):
        nbr = (sites + step) % L
        rows.append(np.arange(len(sites)))
        cols.append(nbr @ weights)
        vals.append(probs[:, e])
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(len(sites), len(sites)))
    return m.tocsr()  # duplicates (L = 2) are summed


def torus_stationary(env, tol=1e-12, max_iter=10 ** 6):
    """Invariant law by power iteration on the lazy chain (I + P) / 2."""
    P = torus_matrix(env)
    PT = P.T.tocsr()
    m = P.shape[0]
    pi = np.full(m, 1.0 / m)
    resid = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        step = PT @ pi
        resid = float(np.abs(step - pi).sum())
        if resid <= tol:
            break
        pi = 0.5 * (pi + step)
        pi /= pi.sum()
    resid = float(np.abs(PT @ pi - pi).sum())
    return TorusChain(env.period, env.d, P, pi, resid, it, resid <= tol)


def torus_fn(env, n_max):
    """f_0 .. f_n_max on the torus (backward recursion summed over one period cell)."""
    P = torus_matrix(env)
    h = np.zeros(P.shape[0])
    h[0] = 1.0
    out = [1.0]
    for _ in range(n_max):
        h = P @ h
        out.append(math.fsum(h))
    return np.array(out)


@dataclass
class TorusConsistency:
    n: int
    f_n: float
    f_n1: float
    g0: float
    gap: float
    residual: float
    min_pi: float


def torus_fn_consistency(env, n, chain=None):
    """|(f_n + f_{n+1}) / 2 - L^d pi(0)| for a periodized environment."""
    if n < 0:
        raise ValueError("n must be >= 0")
    chain = chain or torus_stationary(env)
    f = torus_fn(env, n + 1)
    g0 = float(chain.density[0])
    gap = float(abs(0.5 * (f[n] + f[n + 1]) - g0))
    return TorusConsistency(n, float(f[n]), float(f[n + 1]), g0, gap, chain.residual,
                            float(chain.stationary.min()))


# annealed kernels and local CLT ---------------------------------------------

def annealed_kernels(law, n_grid, env_count, master_seed=0, threads=None, kind="clt",
                     budget=DEFAULT_BUDGET):
    """Environment average of exact quenched kernels from 0 at each n in ``n_grid``.

    Environments are summed in index order so the result does not depend on
    the thread count.
    """
    n_grid = sorted(int(n) for n in n_grid)
    d = law.d
    R = n_grid[-1] + 1
    _check_budget(d, R, budget, 2 + len(n_grid) * (1 + get_threads()))
    side, strides = _box(d, R)
    centre = int(np.sum(R * strides))
    seeds = env_seeds(master_seed, env_count, kind)
    acc = {n: np.zeros(side ** d) for n in n_grid}
    batch = max(1, get_threads() if threads is None else threads)
    for b0 in range(0, env_count, batch):
        idx = list(range(b0, min(env_count, b0 + batch)))
        res = [None] * len(idx)

        def work(lo, hi):
            for k in range(lo, hi):
                env = Environment(law, seeds[idx[k]])
                probs = box_probs(env, (0,) * d, R)
                res[k] = _forward_fields(probs, d, R, centre, n_grid)

        run_chunks(work, len(idx), threads, chunk=1)
        for snaps in res:
            for n in n_grid:
                acc[n] += snaps[n][0]
    return {n: KernelField(n, (0,) * d, R, (acc[n] / env_count).reshape((side,) * d), "forward")
            for n in n_grid}


@dataclass
class LocalCltReport:
    n: int
    mean: np.ndarray
    cov: np.ndarray
    tv: float
    max_kernel: float
    singular: bool = False


def clt_report(field):
    """Gaussian comparison of a kernel on its parity class (density doubled)."""
    n = field.time
    d = field.d
    x = field.grid().astype(float)
    p = field.values.ravel()
    mu = p @ x / p.sum()
    dx = x - mu
    cov = (dx * p[:, None]).T @ dx / p.sum()
    sigma = cov / max(n, 1)
    sigma = 0.5 * (sigma + sigma.T)
    eig = np.linalg.eigvalsh(sigma)
    if n == 0 or eig.min() <= 1e-12 * max(1.0, eig.max()):
        return LocalCltReport(n, mu, sigma, math.nan, float(p.max()), singular=True)
    inv = np.linalg.inv(sigma)
    par = (field.grid().sum(axis=1) + n) % 2 == 0
    q = np.einsum("ij,jk,ik->i", dx[par], inv, dx[par])
    g = 2.0 / ((2 * math.pi * n) ** (d / 2) * math.sqrt(np.linalg.det(sigma))) * np.exp(-q / (2 * n))
    tv = 0.5 * float(np.abs(p[par] - g).sum() + p[~par].sum())
    return LocalCltReport(n, mu, sigma, min(tv, 1.0), float(p.max()))


def local_clt_gap(law, n, env_count, master_seed=0, threads=None):
    return clt_report(annealed_kernels(law, [n], env_count, master_seed, threads)[n])


def annealed_kernel_decay(law, n_grid, env_count, master_seed=0, threads=None):
    """Slope of log max_x P(X_n = x) against log n, with the per-n maxima."""
    fields = annealed_kernels(law, n_grid, env_count, master_seed, threads)
    ns = sorted(fields)
    peaks = np.array([fields[n].values.max() for n in ns])
    fit = fit_line(np.log(ns), np.log(peaks))
    return fit, dict(zip(ns, peaks))
