"""Regeneration times of finite trajectories and renewal diagnostics.

A time ``n >= 1`` is a regeneration time in direction ``ell`` when its height
``<X_n, ell>`` is a strict record over all earlier times and is never
undercut afterwards (ties after ``n`` are allowed).  On a finite path the
future is only partially observed, so the final time is never a candidate,
and a candidate is *certified* only when the path ends at least ``guard``
above its height.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import stats

from rwre.stats import clopper_pearson, fit_line

DEFAULT_GUARD = 20


@dataclass(frozen=True)
class RegenerationRecord:
    times: np.ndarray
    positions: np.ndarray
    guard: int
    candidates: np.ndarray = field(repr=False)

    @property
    def tau1(self):
        return int(self.times[0]) if len(self.times) else None

    @property
    def increments(self):
        """List of (tau_{k+1} - tau_k, X_{tau_{k+1}} - X_{tau_k}) for k >= 1."""
        dt = np.diff(self.times)
        dx = np.diff(self.positions, axis=0)
        return list(zip(dt.tolist(), [tuple(r) for r in dx.tolist()]))

    @property
    def dtau(self):
        return np.diff(self.times)


def heights(traj_or_positions, ell):
    pos = getattr(traj_or_positions, "positions", traj_or_positions)
    return np.asarray(pos, dtype=np.int64) @ np.asarray(ell, dtype=np.int64)


def regeneration_candidates(h):
    """Times 1..N-1 with prefix max < h[n] <= suffix min (two linear scans)."""
    h = np.asarray(h)
    N = len(h) - 1
    if N < 2:
        return np.zeros(0, dtype=np.int64)
    prefix_max = np.maximum.accumulate(h)[:-1]  # max over j < n, for n = 1..N
    suffix_min = np.minimum.accumulate(h[::-1])[::-1][1:]  # min over j > n, n = 0..N-1
    n = np.arange(1, N)
    ok = (prefix_max[n - 1] < h[n]) & (h[n] <= suffix_min[n])
    return n[ok]


def find_regenerations(traj, ell, guard=DEFAULT_GUARD):
    """Regeneration record of ``traj`` in the integer direction ``ell``."""
    pos = traj.positions
    h = heights(pos, ell)
    cand = regeneration_candidates(h)
    final = h[-1] if len(h) else 0
    times = cand[final >= h[cand] + guard] if len(cand) else cand
    return RegenerationRecord(times, pos[times], int(guard), cand)


def regeneration_oracle(h):
    """The defining inequalities checked directly for every n, O(N^2)."""
    h = np.asarray(h)
    N = len(h) - 1
    return [n for n in range(1, N) if h[:n].max() < h[n] <= h[n + 1:].min()]


def record_from_times(times, positions=None, guard=0):
    """Build a record from synthetic regeneration times (diagnostics tests)."""
    times = np.asarray(times, dtype=np.int64)
    if positions is None:
        positions = np.zeros((len(times), 1), dtype=np.int64)
        positions[:, 0] = np.arange(1, len(times) + 1)
    return RegenerationRecord(times, np.asarray(positions), guard, times)


@dataclass
class IidReport:
    autocorr: float
    autocorr_pairs: int
    ks_statistic: float
    ks_pvalue: float
    mean_dtau: float
    var_dtau: float
    mean_dx: np.ndarray
    var_dx: np.ndarray
    n_increments: int
    insufficient: bool


def iid_diagnostics(records):
    """Pooled renewal diagnostics over increments k >= 1 of many records.

    Lag-1 autocorrelation uses consecutive increments within a record;
    the KS test compares first-half against second-half increments of
    each record.
    """
    pooled, pairs_a, pairs_b, first, second, dxs = [], [], [], [], [], []
    for rec in records:
        dt = rec.dtau.astype(float)
        if len(dt) == 0:
            continue
        pooled.extend(dt)
        dxs.extend(np.diff(rec.positions, axis=0).tolist())
        pairs_a.extend(dt[:-1])
        pairs_b.extend(dt[1:])
        half = len(dt) // 2
        first.extend(dt[:half])
        second.extend(dt[half:])
    pooled = np.asarray(pooled)
    insufficient = len(pairs_a) < 2
    if insufficient:
        ac = math.nan
    else:
        a, b = np.asarray(pairs_a), np.asarray(pairs_b)
        m, v = pooled.mean(), pooled.var()
        ac = float(np.mean((a - m) * (b - m)) / v) if v > 0 else math.nan
    if len(first) and len(second):
        ks = stats.ks_2samp(first, second)
        ks_stat, ks_p = float(ks.statistic), float(ks.pvalue)
    else:
        ks_stat, ks_p = math.nan, math.nan
    dxs = np.asarray(dxs, dtype=float)
    return IidReport(
        autocorr=ac,
        autocorr_pairs=len(pairs_a),
        ks_statistic=ks_stat,
        ks_pvalue=ks_p,
        mean_dtau=float(pooled.mean()) if len(pooled) else math.nan,
        var_dtau=float(pooled.var(ddof=1)) if len(pooled) > 1 else math.nan,
        mean_dx=dxs.mean(axis=0) if len(dxs) else np.array([]),
        var_dx=dxs.var(axis=0, ddof=1) if len(dxs) > 1 else np.array([]),
        n_increments=len(pooled),
        insufficient=insufficient,
    )


TAIL_CAVEAT = (
    "log(-log S) vs log log u slope is descriptive only: the (log u)^alpha "
    "regime needs u far beyond any simulated sample"
)


@dataclass
class TailEstimate:
    u: np.ndarray
    survival: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    one_sided: np.ndarray
    alpha_hat: float = math.nan
    r2: float = math.nan
    r2_log_u: float = math.nan
    loglog_shape: bool = False
    caveat: str = TAIL_CAVEAT


def tail_estimate(samples, u_grid, level=0.95, fit=True):
    """Empirical survival P(tau > u) with Clopper-Pearson bounds.

    The optional fit regresses log(-log S) on log log u (slope = alpha) and,
    as a shape check, also on log u; ``loglog_shape`` is true only when the
    log log u regression fits better, which is what a tail of the form
    exp(-c (log u)^alpha) would produce.
    """
    x = np.asarray(samples, dtype=float)
    u = np.asarray(u_grid, dtype=float)
    if np.any(np.diff(u) <= 0):
        raise ValueError("u_grid must be increasing")
    n = len(x)
    k = np.array([(x > ui).sum() for ui in u])
    surv = k / n if n else np.full(len(u), math.nan)
    lo = np.empty(len(u))
    hi = np.empty(len(u))
    one_sided = k == 0
    for i, ki in enumerate(k):
        if ki == 0:
            lo[i], hi[i] = 0.0, (1 - (1 - level) ** (1 / n) if n else 1.0)
        else:
            lo[i], hi[i] = clopper_pearson(int(ki), n, level)
    est = TailEstimate(u, surv, lo, hi, one_sided)
    if fit:
        ok = (surv > 0) & (surv < 1) & (u > 1)
        if ok.sum() >= 3:
            y = np.log(-np.log(surv[ok]))
            f = fit_line(np.log(np.log(u[ok])), y)
            g = fit_line(np.log(u[ok]), y)
            est.alpha_hat, est.r2, est.r2_log_u = f.slope, f.r2, g.r2
            est.loglog_shape = f.r2 > g.r2
    return est
