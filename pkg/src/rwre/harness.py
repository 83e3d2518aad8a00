"""Experiment dispatch: config in, ResultTable out, plus table summaries.

Every random stream is derived from ``(seed, kind-specific label, index,
role)``, and every table row is produced in index order, so the CSV bytes
depend only on the config.
"""

import math
import time

import numpy as np

from rwre import _rng
from rwre._parallel import set_threads
from rwre.config import parse_config
from rwre.env_core import Environment
from rwre.evp_density import (
    annealed_kernels,
    clt_report,
    env_seeds,
    f_n_exact,
    torus_fn,
    torus_stationary,
)
from rwre.intersect import ballistic_horizon_factor, intersection_scaling
from rwre.regen import DEFAULT_GUARD, find_regenerations, heights, regeneration_oracle, tail_estimate
from rwre.results import ResultTable, TableError, experiment_meta, log_fit, read_table
from rwre.stats import fit_line, normal_ci
from rwre.traps import (
    TrapSpec,
    build_naive_trap,
    calibrate_supermartingale,
    membership_defect,
    relaxed_event_mc,
    trap_escape_time,
    trap_overrides,
    trap_probability,
)
from rwre.walk_engine import (
    FixedN,
    Parallelogram,
    backtrack_probability,
    exit_statistics,
    run_annealed,
    run_batch,
    velocity_estimate,
)

NAN = math.nan


def _e1(d):
    return (1,) + (0,) * (d - 1)


def _velocity(law, run, seed, kind):
    n = run.get("velocity_n", 2000)
    trials = run.get("velocity_trials", 100)
    return velocity_estimate(law, n, trials, seed, kind=f"{kind}/velocity").v


def _velocity_rows(law, run, seed):
    n, d = run["n"], law.d
    times, _, pos = run_batch(law, (0,) * d, FixedN(n), n, run["trials"], seed, "velocity")
    cols = ["trial", "t"] + [f"x{j + 1}" for j in range(d)] + [f"v{j + 1}" for j in range(d)]
    rows = [[i, int(times[i])] + pos[i].tolist() + (pos[i] / n).tolist() for i in range(len(pos))]
    return cols, rows


def _condt_rows(law, run, seed):
    ell = run.get("ell", _e1(law.d))
    fixed = run.get("horizon")
    v = None if fixed else _velocity(law, run, seed, "condt")
    cols = ["L", "trials", "backtrack", "forward", "censored", "horizon",
            "p_fail", "p_fail_lo", "p_fail_hi", "p_dropped"]
    rows = []
    for L in run["L"]:
        b = backtrack_probability(law, ell, L, run["trials"], fixed, seed, velocity=v)
        rows.append([L, b.trials, b.backtrack, b.forward, b.censored, b.horizon,
                     b.p_censored_as_failure, *b.ci_censored_as_failure, b.p_censored_dropped])
    return cols, rows


def _regen_rows(law, run, seed):
    ell = run.get("ell", _e1(law.d))
    guard = run.get("guard", DEFAULT_GUARD)
    oracle = run.get("oracle", False)
    cols = ["trial", "candidates", "certified", "tau1", "final_height", "oracle_match"]
    rows = []
    for i in range(run["trials"]):
        traj, _ = run_annealed(law, (0,) * law.d, FixedN(run["n"]), run["n"], i, seed, "regen")
        rec = find_regenerations(traj, ell, guard)
        h = heights(traj, ell)
        match = (list(rec.candidates) == regeneration_oracle(h)) if oracle else NAN
        rows.append([i, len(rec.candidates), len(rec.times),
                     rec.tau1 if rec.tau1 is not None else -1, int(h[-1]), match])
    return cols, rows


def _intersect_rows(law, run, seed):
    factor = run.get("horizon_factor")
    if factor is None:
        v = _velocity(law, run, seed, "intersect")
        factor = ballistic_horizon_factor(float(v[0]))
    res = intersection_scaling(law, run["n_grid"], run["env_count"], run["pairs"], factor,
                               run.get("horizon_power", 1.0), seed)
    cols = ["env", "n", "mean", "censor_rate"]
    rows = [[i, int(n), res.per_env[i, k], res.censor_rate[i, k]]
            for i in range(res.per_env.shape[0]) for k, n in enumerate(res.n)]
    return cols, rows


def _fn_rows(law, run, seed):
    overrides = ()
    if "trap_L" in run:
        overrides = trap_overrides(TrapSpec(run["trap_L"], run.get("trap_c1", 0.2), law))
    seeds = env_seeds(seed, run["env_count"], "fn_tail")
    rows = []
    for i, s in enumerate(seeds):
        env = Environment(law, s, overrides)
        rows += [[i, n, f_n_exact(env, n)] for n in run["n"]]
    return ["env", "n", "f_n"], rows


def _torus_rows(law, run, seed):
    env = Environment(law, _rng.derive_seed(seed, "torus"), period=run["L"])
    chain = torus_stationary(env)
    f = torus_fn(env, max(run["n"]) + 1)
    g0 = float(chain.density[0])
    cols = ["n", "f_n", "f_n1", "g0", "gap", "residual", "min_pi", "converged"]
    rows = [[n, f[n], f[n + 1], g0, abs(0.5 * (f[n] + f[n + 1]) - g0), chain.residual,
             float(chain.stationary.min()), chain.converged] for n in run["n"]]
    return cols, rows


def _trap_rows(law, run, seed):
    grid = list(run["L"])
    mc_L = run.get("mc_L")
    Ls = sorted(set(grid) | ({mc_L} if mc_L else set()))
    c1 = run["c1"]
    c1r = run.get("c1_relaxed", c1 / 2)
    env_seed = _rng.derive_seed(seed, "trap/env")
    cols = ["L", "in_grid", "sites", "mean_escape", "se_escape", "censor_rate",
            "log_p_relaxed", "log_p_exact", "c2", "c3", "sm_worst", "sm_pass",
            "membership_defect", "mc_p", "mc_lo", "mc_hi"]
    rows = []
    for L in Ls:
        spec = TrapSpec(L, c1, law)
        env = build_naive_trap(spec, env_seed)
        esc = trap_escape_time(env, spec, run["trials"], run["horizon"], seed)
        _, se, _ = normal_ci(esc.times)
        prob = trap_probability(law, spec, c1r)
        sm = calibrate_supermartingale(env, spec, run.get("c3"))
        mc = (NAN, (NAN, NAN))
        if L == mc_L:
            p, ci, _ = relaxed_event_mc(law, spec, c1r, run.get("mc_trials", 10 ** 6), seed)
            mc = (p, ci)
        rows.append([L, L in grid, prob.sites, esc.mean, float(se), esc.censor_rate,
                     prob.log_p_relaxed, prob.log_p_exact, sm.c2, sm.c3, sm.worst, sm.passed,
                     membership_defect(env, spec), mc[0], *mc[1]])
    return cols, rows


def _clt_rows(law, run, seed):
    d = law.d
    fields = annealed_kernels(law, run["n"], run["env_count"], seed)
    cols = ["n", "tv", "max_kernel", "singular"] + [f"mu{j + 1}" for j in range(d)]
    cols += [f"cov{a + 1}{b + 1}" for a in range(d) for b in range(a, d)]
    rows = []
    for n in sorted(fields):
        r = clt_report(fields[n])
        rows.append([n, r.tv, r.max_kernel, r.singular] + r.mean.tolist()
                    + [r.cov[a, b] for a in range(d) for b in range(a, d)])
    return cols, rows


def _exit_rows(law, run, seed):
    d = law.d
    theta = run.get("theta", tuple(float(c) for c in _e1(d)))
    P = Parallelogram((0,) * d, run["N"], theta, run.get("j", 5))
    env = Environment(law, _rng.derive_seed(seed, "exit/env"))
    st = exit_statistics(env, P, (0,) * d, run["trials"], run["cell_size"], law, seed)
    cols = ["non_right", "annealed_non_right", "deviation", "censored", "median_time",
            "sup_discrepancy"]
    return cols, [[st.non_right_fraction, st.annealed_non_right_fraction, st.deviation_fraction,
                   st.censored, st.median_time, st.sup_discrepancy]]


RUNNERS = {
    "velocity": _velocity_rows, "condt": _condt_rows, "regen": _regen_rows,
    "intersect": _intersect_rows, "fn_tail": _fn_rows, "torus": _torus_rows,
    "trap": _trap_rows, "clt": _clt_rows, "exit_stats": _exit_rows,
}


def run_experiment(cfg, threads=None, out=None):
    """Run ``cfg`` and return its table; written to ``out`` (or cfg.out) if set."""
    if threads is not None:
        set_threads(threads)
    t0 = time.perf_counter()
    cols, rows = RUNNERS[cfg.kind](cfg.build_law(), cfg.run, cfg.seed)
    table = ResultTable(cols, rows, experiment_meta(cfg))
    table.wall_time = time.perf_counter() - t0
    path = out or cfg.out
    if path:
        table.write(path)
    return table


# summaries -------------------------------------------------------------------

def _fit_dict(prefix, fit, level=0.95):
    lo, hi = fit.slope_ci(level)
    return {f"{prefix}_slope": fit.slope, f"{prefix}_slope_lo": lo,
            f"{prefix}_slope_hi": hi, f"{prefix}_r2": fit.r2}


def _by(table, key):
    col = table.column(key)
    return {v: np.flatnonzero(col == v) for v in sorted(set(col.tolist()))}


def summarize_table(table):
    """Kind-specific fitted slopes and CIs for a result table."""
    if not table.rows:
        raise TableError("empty table")
    kind = table.meta_value("kind")
    out = {}
    if kind == "velocity":
        for c in [c for c in table.columns if c.startswith("v")]:
            for level in (0.95, 0.99):
                m, se, (lo, hi) = normal_ci(table.column(c), level)
                out[f"{c}_mean"] = float(m)
                out[f"{c}_ci{int(level * 100)}"] = (float(lo), float(hi))
    elif kind == "condt":
        out.update(_fit_dict("log_p_vs_L", log_fit(table.column("L"), table.column("p_fail"),
                                                    logx=False)))
        out["max_censored"] = float(table.column("censored").max())
    elif kind == "regen":
        m = table.column("oracle_match")
        out["oracle_agreement"] = float(np.nanmean(m)) if np.any(~np.isnan(m)) else NAN
        out["mean_certified"] = float(table.column("certified").mean())
    elif kind == "intersect":
        mean = table.column("mean")
        groups = _by(table, "n")
        ns = np.array(list(groups))
        med = np.array([np.median(mean[ix]) for ix in groups.values()])
        q90 = np.array([np.quantile(mean[ix], 0.9) for ix in groups.values()])
        out["median"] = med.tolist()
        out.update(_fit_dict("median", log_fit(ns, med)))
        out.update(_fit_dict("q90", log_fit(ns, q90)))
        out["censor_rate"] = float(table.column("censor_rate").mean())
    elif kind == "fn_tail":
        f = table.column("f_n")
        u = config_of(table).run.get("u_grid", ())
        for n, ix in _by(table, "n").items():
            m, se, _ = normal_ci(f[ix]) if len(ix) > 1 else (f[ix][0], NAN, None)
            entry = {"mean": float(m), "se": float(se),
                     "z": float((m - 1) / se) if se > 0 else 0.0}
            if u:
                entry["survival"] = tail_estimate(f[ix], u, fit=False).survival.tolist()
            out[f"n={int(n)}"] = entry
    elif kind == "torus":
        out["max_residual"] = float(table.column("residual").max())
        out["min_pi"] = float(table.column("min_pi").min())
        out["gap"] = dict(zip(table.column("n").astype(int).tolist(), table.column("gap").tolist()))
    elif kind == "trap":
        g = table.column("in_grid") == 1
        L = table.column("L")[g]
        out.update(_fit_dict("log_escape_vs_L", log_fit(L, table.column("mean_escape")[g], logx=False)))
        out.update(_fit_dict("log_p_vs_sites", fit_line(table.column("sites")[g],
                                                        table.column("log_p_relaxed")[g])))
        out["supermartingale_pass"] = bool(np.all(table.column("sm_pass") == 1))
        out["max_censor_rate"] = float(table.column("censor_rate").max())
    elif kind == "clt":
        out["tv"] = dict(zip(table.column("n").astype(int).tolist(), table.column("tv").tolist()))
        out.update(_fit_dict("decay", log_fit(table.column("n"), table.column("max_kernel"))))
    elif kind == "exit_stats":
        out.update({c: float(table.column(c)[0]) for c in table.columns})
    elif len(table.columns) == 2:
        out.update(_fit_dict("fit", fit_line(table.column(table.columns[0]),
                                             table.column(table.columns[1]))))
    else:
        raise TableError("cannot summarize a table without a known kind")
    return out


def config_of(table):
    """Rebuild the config echoed in a table's metadata."""
    return parse_config("\n".join(v for k, v in table.meta if k == "config"))


def summarize(path):
    return summarize_table(read_table(path))
