"""Named experiments over the solver and averaging layers, with structured reports.

Every runner takes a :class:`~slowfast.config.RunConfig` and returns an
:class:`ExperimentReport`: JSON-ready results, pass/fail checks that name the
inequality and both of its sides, and tables written out as CSV.  Reports
embed the config and its digest, so a run can be replayed exactly.  Tables
never contain wall-clock times; those live in ``timings`` only.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .averaging import (AveragedDriftCache, KhasminskiiSchedule, auxiliary_fast_ensemble,
                        averaged_drift_profile, estimate_mixing_rate, linear_averaged_drift,
                        sample_evolution_family, schedule_trend_ok)
from .config import RunConfig, parse_state_spec
from .model import validate_assumptions
from .noise import SeedManifest
from .solver import solve_averaged_ensemble, solve_coupled_ensemble
from .spectral import Field

BLOWUP_FRACTION = 0.5


@dataclass
class Check:
    name: str
    inequality: str
    lhs: float
    rhs: float
    passed: bool
    note: str = ""

    def line(self):
        mark = "PASS" if self.passed else "FAIL"
        sides = f"lhs={self.lhs:.6g}" if math.isnan(self.rhs) else \
            f"lhs={self.lhs:.6g}, rhs={self.rhs:.6g}"
        return f"{mark}  {self.name}: {self.inequality}  [{sides}]"


def _le(name, inequality, lhs, rhs, note=""):
    return Check(name, inequality, float(lhs), float(rhs), bool(lhs <= rhs), note)


def _lt(name, inequality, lhs, rhs, note=""):
    return Check(name, inequality, float(lhs), float(rhs), bool(lhs < rhs), note)


@dataclass
class Table:
    header: List[str]
    rows: List[list]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([_cell(v) for v in r])
        return buf.getvalue()


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class ExperimentReport:
    """Outcome of one experiment; round-trips through :meth:`to_dict`/:meth:`from_dict`."""

    kind: str
    config: Dict
    config_digest: str
    master_seed: int
    results: Dict = field(default_factory=dict)
    checks: List[Check] = field(default_factory=list)
    tables: Dict[str, Table] = field(default_factory=dict)
    timings: Dict = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def blow_up_dominated(self):
        return "blow_up_dominated" in self.flags

    def summary(self):
        lines = [f"{self.kind}: {'PASS' if self.passed else 'FAIL'}"]
        lines += ["  " + c.line() for c in self.checks]
        lines += [f"  flag: {f}" for f in self.flags]
        return "\n".join(lines)

    def to_dict(self):
        return {"kind": self.kind, "config": self.config, "config_digest": self.config_digest,
                "master_seed": self.master_seed, "results": _jsonable(self.results),
                "checks": [dataclasses.asdict(c) for c in self.checks],
                "tables": {k: {"header": t.header, "rows": _jsonable(t.rows)}
                           for k, t in self.tables.items()},
                "timings": self.timings, "flags": list(self.flags)}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], config=d["config"], config_digest=d["config_digest"],
                   master_seed=d["master_seed"], results=d["results"],
                   checks=[Check(**c) for c in d["checks"]],
                   tables={k: Table(t["header"], t["rows"]) for k, t in d["tables"].items()},
                   timings=d["timings"], flags=d["flags"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# named views of the generic report, one per experiment family
ConvergenceReport = MixingReport = MomentReport = APReport = ExperimentReport


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _new_report(kind, cfg: RunConfig):
    return ExperimentReport(kind, cfg.to_dict(), cfg.digest(), int(cfg.noise.seed))


def _map(fn, args, workers):
    """Ordered map, optionally over a process pool."""
    if workers and workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(args))) as pool:
            return list(pool.map(fn, *zip(*args)))
    return [fn(*a) for a in args]


def _bootstrap(values, stat, n_boot, rng, level=0.95):
    values = np.asarray(values)
    n = len(values)
    if n == 0:
        return float("nan"), float("nan")
    idx = rng.integers(0, n, size=(n_boot, n))
    stats = np.array([stat(values[i]) for i in idx])
    a = (1 - level) / 2
    return float(np.quantile(stats, a)), float(np.quantile(stats, 1 - a))


def _sup_errors(a, b):
    """Per path: sup over records and nodes of ``|a - b|`` (NaN when either stopped)."""
    d = np.max(np.abs(a - b), axis=-1)
    return np.max(d, axis=1)


def _eps_grid(eps, name="epsilons"):
    eps = [float(e) for e in eps]
    if not eps or any(not 0 < e <= 1 for e in eps):
        raise ValueError(f"{name} must lie in (0, 1]")
    if any(a <= b for a, b in zip(eps, eps[1:])):
        raise ValueError(f"{name} must be strictly decreasing")
    return eps


# ----------------------------------------------------------------------------
# averaged drift sources

def averaged_drift_source(model, cfg: RunConfig, manifest: SeedManifest):
    """The averaged drift used by the averaged solver, plus a description."""
    ex = cfg.experiment
    mode = ex.drift
    if mode not in ("auto", "exact", "cache", "pointwise"):
        raise ValueError(f"unknown drift source {mode!r}")
    if mode == "auto":
        if float(model.knobs.get("slow_coupling", 1.0)) == 0.0:
            mode = "pointwise"
        elif model.name == "linear":
            mode = "exact"
        else:
            mode = "cache"
    basis = model.basis
    if mode == "exact":
        return linear_averaged_drift(model), {"source": "exact"}, None
    if mode == "pointwise":
        b1 = model.slow_reaction.b
        xi = basis.nodes

        def batch(X):
            # b1 does not see y: evaluate with the fast argument at zero
            return basis.to_coefficients(b1(0.0, xi, basis.to_nodal(X), 0.0))

        def single(f):
            return Field(batch(f.coefficients[None])[0], basis)

        single.batch = batch
        return single, {"source": "pointwise"}, None
    cache = AveragedDriftCache(model, manifest, q=ex.cache_q, T_avg=ex.cache_T_avg,
                               M_ens=ex.cache_M_ens, burn_in=ex.burn_in, sensitivities=True,
                               radius=cfg.solver.truncation_radius)
    return cache.as_drift(), {"source": "cache"}, cache


# ----------------------------------------------------------------------------
# convergence

def _convergence_cell(cfg_dict, eps, ubar, paths):
    cfg = RunConfig.from_dict(cfg_dict)
    model = cfg.build_model(validate=False)
    man = SeedManifest(cfg.noise.seed)
    ex = cfg.experiment
    x0 = parse_state_spec(ex.x0, model.basis)
    y0 = parse_state_spec(ex.y0, model.basis)
    t0 = time.perf_counter()
    ens = solve_coupled_ensemble(model, x0, y0, eps, cfg.solver_config(), man, paths)
    wall = time.perf_counter() - t0
    err = _sup_errors(model.basis.to_nodal(ens.slow.states), model.basis.to_nodal(ubar))
    return err, ens.stopped, ens.micro_substeps, wall


def run_convergence(cfg: RunConfig, workers: int = 1) -> ExperimentReport:
    """Slow component of the coupled system against the averaged solution.

    Coupled and averaged runs of a path share its slow noise, so the error is
    the averaging error.  Per cell: the median of ``sup_t ||u_eps - ubar||``
    with a bootstrap CI, and exceedance probabilities ``P(error > eta)``.
    """
    rep = _new_report("convergence", cfg)
    ex = cfg.experiment
    eps = _eps_grid(ex.epsilons)
    model = cfg.build_model()
    man = SeedManifest(cfg.noise.seed)
    basis = model.basis
    scfg = cfg.solver_config()
    paths = np.arange(int(ex.paths))
    x0 = parse_state_spec(ex.x0, basis)

    drift, info, cache = averaged_drift_source(model, cfg, man)
    t0 = time.perf_counter()
    ubar = solve_averaged_ensemble(model, drift.batch, x0, scfg, man, paths)
    t_first = time.perf_counter() - t0
    t0 = time.perf_counter()
    solve_averaged_ensemble(model, drift.batch, x0, scfg, man, paths)
    t_avg = time.perf_counter() - t0
    if cache is not None:
        info.update(entries=len(cache), misses=cache.misses, unreliable=cache.unreliable,
                    q=cache.q, T_avg=cache.T_avg, M_ens=cache.M_ens)
        if cache.unreliable:
            rep.flags.append("cache_unreliable")
    rep.timings["averaged_first_run_s"] = t_first
    rep.timings["averaged_per_path_s"] = t_avg / len(paths)

    cells = _map(_convergence_cell,
                 [(cfg.to_dict(), e, ubar.states, paths) for e in eps], workers)
    rng = np.random.Generator(np.random.Philox(
        man.seed_sequence(0, "convergence", "bootstrap").generate_state(2, np.uint64)))
    err_rows, sum_rows, exc_rows = [], [], []
    medians, cis, stats = [], [], []
    ubar_stopped = ubar.stopped
    for e, (err, stopped, K, wall) in zip(eps, cells):
        bad = stopped | ubar_stopped
        good = err[~bad]
        med = float(np.median(good)) if good.size else float("nan")
        ci = _bootstrap(good, np.median, ex.bootstrap, rng)
        q25, q75, q90 = (np.quantile(good, [0.25, 0.75, 0.9]) if good.size
                         else [float("nan")] * 3)
        medians.append(med)
        cis.append(ci)
        stats.append(good)
        frac = float(bad.mean())
        if frac > BLOWUP_FRACTION:
            rep.flags.append("blow_up_dominated")
        if "cache_unreliable" in rep.flags:
            rep.flags.append(f"cache_unreliable[eps={e!r}]")
        for p, v, s in zip(paths, err, bad):
            err_rows.append([e, int(p), float(v), bool(s)])
        sum_rows.append([e, int(len(paths)), int(bad.sum()), int(K), med, ci[0], ci[1],
                         float(q25), float(q75), float(q90), float(np.mean(good))])
        rep.timings[f"coupled_per_path_s[eps={e!r}]"] = wall / len(paths)
        rep.timings[f"speedup[eps={e!r}]"] = (wall / len(paths)) / max(
            rep.timings["averaged_per_path_s"], 1e-12)
    thresholds = list(ex.thresholds) or [0.5 * medians[0]]
    probs = {}
    for eta in thresholds:
        pr = [float(np.mean(g > eta)) if g.size else float("nan") for g in stats]
        probs[repr(float(eta))] = pr
        for e, p in zip(eps, pr):
            exc_rows.append([e, float(eta), p])

    rep.results = {"epsilons": eps, "paths": int(len(paths)), "medians": medians,
                   "median_ci": [list(c) for c in cis], "thresholds": thresholds,
                   "exceedance": probs, "drift": info,
                   "micro_substeps": [int(c[2]) for c in cells]}
    for i in range(len(eps) - 1):
        rep.checks.append(_lt(f"median_decreasing[{eps[i]!r}->{eps[i + 1]!r}]",
                              f"median(eps={eps[i + 1]!r}) < median(eps={eps[i]!r})",
                              medians[i + 1], medians[i]))
    if len(eps) > 1:
        rep.checks.append(_lt("median_ci_separation",
                              f"CI_high(eps={eps[-1]!r}) < CI_low(eps={eps[0]!r})",
                              cis[-1][1], cis[0][0]))
        for eta, pr in probs.items():
            for i in range(len(eps) - 1):
                rep.checks.append(_le(f"exceedance_nonincreasing[eta={eta}]"
                                      f"[{eps[i]!r}->{eps[i + 1]!r}]",
                                      f"P(err > {eta}; eps={eps[i + 1]!r}) <= "
                                      f"P(err > {eta}; eps={eps[i]!r})", pr[i + 1], pr[i]))
            rep.checks.append(_lt(f"exceedance_decreasing[eta={eta}]",
                                  f"P(err > {eta}; eps={eps[-1]!r}) < "
                                  f"P(err > {eta}; eps={eps[0]!r})", pr[-1], pr[0]))
    rep.tables["errors"] = Table(["epsilon", "path", "sup_error", "stopped"], err_rows)
    rep.tables["summary"] = Table(["epsilon", "paths", "stopped", "micro_substeps", "median",
                                   "median_ci_low", "median_ci_high", "q25", "q75", "q90",
                                   "mean"], sum_rows)
    rep.tables["exceedance"] = Table(["epsilon", "eta", "probability"], exc_rows)
    return rep


# ----------------------------------------------------------------------------
# mixing

def run_mixing(cfg: RunConfig) -> ExperimentReport:
    """Forgetting rate of the frozen fast equation from common-noise pairs."""
    rep = _new_report("mixing", cfg)
    ex = cfg.experiment
    model = cfg.build_model()
    man = SeedManifest(cfg.noise.seed)
    basis = model.basis
    x = parse_state_spec(ex.mixing_x, basis)
    y1 = parse_state_spec(ex.mixing_y1, basis)
    y2 = parse_state_spec(ex.mixing_y2, basis)
    t0 = time.perf_counter()
    est = estimate_mixing_rate(model, x, y1, y2, ex.mixing_T, ex.mixing_pairs, man,
                               n_boot=ex.bootstrap)
    rep.timings["mixing_s"] = time.perf_counter() - t0
    rep.results = est.to_dict()
    if est.degenerate:
        rep.checks.append(Check("mixing_fit", "y1 != y2", 0.0, 0.0, False, est.note))
        return rep
    rep.checks.append(_lt("mixing_ci_excludes_zero", "0 < CI_low(rate)", 0.0, est.ci[0]))
    if model.name == "linear" and model.fast_noise.is_zero():
        margin = 1.0  # the -y term of the linear fast reaction
        closed = model.alpha + model.fast_operator.gamma_mean() * float(basis.eigenvalues[0]) \
            + margin
        rep.results["closed_form_rate"] = closed
        rep.checks.append(_le("mixing_closed_form",
                              "|rate - (alpha + mean(gamma_2) alpha_1 + 1)| <= 0.02 * closed",
                              abs(est.rate - closed), 0.02 * closed))
    rep.tables["distance"] = Table(["time", "mean_distance"],
                                   [[float(t), float(d)] for t, d in
                                    zip(est.times, est.mean_distance)])
    return rep


# ----------------------------------------------------------------------------
# moments

def _moment_cell(cfg_dict, eps, paths):
    cfg = RunConfig.from_dict(cfg_dict)
    model = cfg.build_model(validate=False)
    man = SeedManifest(cfg.noise.seed)
    ex = cfg.experiment
    basis = model.basis
    ens = solve_coupled_ensemble(model, parse_state_spec(ex.x0, basis),
                                 parse_state_spec(ex.y0, basis), eps, cfg.solver_config(),
                                 man, paths)
    su = np.nanmax(ens.slow.sup_norms(), axis=1)
    sv = ens.fast.sup_norms()
    return su, sv, ens.stopped, ens.slow.times


def run_moments(cfg: RunConfig, workers: int = 1) -> ExperimentReport:
    """p-th moments of ``sup_t ||u_eps(t)||`` across an eps grid, plus fast-component moments."""
    rep = _new_report("moments", cfg)
    ex = cfg.experiment
    eps = _eps_grid(ex.moment_epsilons, "moment_epsilons")
    paths = np.arange(int(ex.paths))
    cfg.build_model()
    cells = _map(_moment_cell, [(cfg.to_dict(), e, paths) for e in eps], workers)
    rows = []
    res = {"epsilons": eps, "powers": list(ex.moment_powers), "slow": {}, "fast_time_mean": {}}
    for p in ex.moment_powers:
        m_list, se_list = [], []
        for e, (su, sv, stopped, times) in zip(eps, cells):
            s = su[~stopped] ** p
            m = float(np.mean(s)) if s.size else float("nan")
            se = float(np.std(s, ddof=1) / math.sqrt(s.size)) if s.size > 1 else 0.0
            m_list.append(m)
            se_list.append(se)
            rows.append([e, "slow_sup", int(p), m, se])
            vp = np.nanmean(sv[~stopped] ** p, axis=0)
            tm = float(np.trapezoid(vp, times) / (times[-1] - times[0]))
            rows.append([e, "fast_time_mean", int(p), tm, float("nan")])
            res["fast_time_mean"].setdefault(str(p), []).append(tm)
        res["slow"][str(p)] = {"moment": m_list, "stderr": se_list}
        hi, lo = int(np.argmax(m_list)), int(np.argmin(m_list))
        mc = 3.0 * math.hypot(se_list[hi], se_list[lo])
        rep.checks.append(_le(f"moment_band[p={p}]",
                              "max_eps E sup||u||^p <= 2 min_eps E sup||u||^p + 3 SE",
                              m_list[hi], 2 * m_list[lo] + mc))
    n_stopped = [int(c[2].sum()) for c in cells]
    res["stopped"] = n_stopped
    if any(n > BLOWUP_FRACTION * len(paths) for n in n_stopped):
        rep.flags.append("blow_up_dominated")
    rep.results = res
    rep.tables["moments"] = Table(["epsilon", "quantity", "p", "value", "stderr"], rows)
    return rep


# ----------------------------------------------------------------------------
# Khasminskii auxiliary process

def _khasminskii_cell(cfg_dict, eps, paths):
    cfg = RunConfig.from_dict(cfg_dict)
    model = cfg.build_model(validate=False)
    man = SeedManifest(cfg.noise.seed)
    ex = cfg.experiment
    basis = model.basis
    scfg = cfg.solver_config(record_stride=1)
    sched = KhasminskiiSchedule(eps, ex.kappa, scfg.T, scfg.h)
    ens = solve_coupled_ensemble(model, parse_state_spec(ex.x0, basis),
                                 parse_state_spec(ex.y0, basis), eps, scfg, man, paths)
    aux, tau = auxiliary_fast_ensemble(model, ens.slow.states, ens.fast.states, eps, sched,
                                       man, scfg, paths)
    d = np.max(np.abs(basis.to_nodal(aux) - basis.to_nodal(ens.fast.states)), axis=-1)
    vhat = np.max(np.abs(basis.to_nodal(aux)), axis=-1)
    return d, vhat, ens.stopped | np.isfinite(tau), ens.slow.times, sched.to_dict()


def run_khasminskii(cfg: RunConfig, workers: int = 1) -> ExperimentReport:
    """``sup_t E||v_hat(t) - v(t)||^p`` for the window-frozen auxiliary fast motion."""
    rep = _new_report("khasminskii", cfg)
    ex = cfg.experiment
    eps = _eps_grid(ex.khasminskii_epsilons, "khasminskii_epsilons")
    if eps[0] >= 1:
        raise ValueError("the Khasminskii window needs eps < 1")
    p = int(ex.khasminskii_power)
    paths = np.arange(int(ex.paths))
    cfg.build_model()
    man = SeedManifest(cfg.noise.seed)
    cells = _map(_khasminskii_cell, [(cfg.to_dict(), e, paths) for e in eps], workers)
    rng = np.random.Generator(np.random.Philox(
        man.seed_sequence(0, "khasminskii", "bootstrap").generate_state(2, np.uint64)))
    vals, cis, rows, scheds, integ = [], [], [], [], []
    for e, (d, vhat, stopped, times, sched) in zip(eps, cells):
        dp = d[~stopped] ** p

        def stat(sample):
            return float(np.max(sample.mean(axis=0)))

        v = stat(dp)
        ci = _bootstrap(dp, stat, ex.bootstrap, rng)
        vals.append(v)
        cis.append(ci)
        scheds.append(sched)
        mean_t = dp.mean(axis=0)
        integ.append(float(np.trapezoid(np.mean(vhat[~stopped] ** p, axis=0), times)))
        for t, m in zip(times, mean_t):
            rows.append([e, float(t), float(m)])
    rep.results = {"epsilons": eps, "power": p, "sup_mean_error": vals,
                   "ci": [list(c) for c in cis], "schedules": scheds,
                   "integrated_vhat_moment": integ,
                   "schedule_trend_ok": schedule_trend_ok(eps, ex.kappa)}
    for i in range(len(eps) - 1):
        a, b = eps[i], eps[i + 1]
        rep.checks.append(_lt(f"aux_error_decreasing[{a!r}->{b!r}]",
                              f"sup_t E||vhat - v||^{p} (eps={b!r}) < same (eps={a!r})",
                              vals[i + 1], vals[i]))
        rep.checks.append(_lt(f"aux_error_ci_separation[{a!r}->{b!r}]",
                              f"CI_high(eps={b!r}) < CI_low(eps={a!r})", cis[i + 1][1],
                              cis[i][0]))
    rep.tables["aux_error"] = Table(["epsilon", "time", f"mean_sup_diff_pow{p}"], rows)
    return rep


# ----------------------------------------------------------------------------
# finite-T averages of the drift

def run_time_average(cfg: RunConfig) -> ExperimentReport:
    """Averaged drift from nested windows ``T, 2T, 4T`` at a few slow states.

    Checks that the ``T`` and ``2T`` estimates agree within two pooled
    standard errors and that the deviation from the ``4T`` estimate shrinks
    from ``T`` to ``2T`` (pooled over states, scaled by the ``4T`` errors).
    """
    rep = _new_report("time_average", cfg)
    ex = cfg.experiment
    model = cfg.build_model()
    man = SeedManifest(cfg.noise.seed)
    basis = model.basis
    T = float(ex.average_T)
    T_list = [T, 2 * T, 4 * T]
    rows = []
    dev = {0: [], 1: []}
    res = {"T": T_list, "states": list(ex.average_states), "estimates": []}
    t0 = time.perf_counter()
    for i, spec in enumerate(ex.average_states):
        x = parse_state_spec(spec, basis)
        ests = averaged_drift_profile(model, x, T_list, ex.average_M_ens, ex.burn_in, man,
                                      radius=cfg.solver.truncation_radius,
                                      tag=("time_average", i))
        if any(e.unreliable for e in ests):
            rep.flags.append(f"unreliable[state={spec}]")
        for e in ests:
            for k, (c, s) in enumerate(zip(e.drift.coefficients, e.stderr.coefficients)):
                rows.append([spec, e.T_avg, k + 1, float(c), float(s)])
        res["estimates"].append([e.to_dict() for e in ests])
        a, b, ref = ests
        pooled = np.hypot(a.stderr.coefficients, b.stderr.coefficients)
        diff = np.abs(a.drift.coefficients - b.drift.coefficients)
        z = np.where(pooled > 0, diff / np.where(pooled > 0, pooled, 1.0),
                     np.where(diff > 0, np.inf, 0.0))
        k = int(np.argmax(z))
        rep.checks.append(_le(f"T_vs_2T[state={spec}]",
                              f"max_k |B_T - B_2T|_k / pooled_SE_k <= 2 (worst k={k + 1})",
                              z[k], 2.0))
        scale = np.where(ref.stderr.coefficients > 0, ref.stderr.coefficients, 1.0)
        for j, e in enumerate((a, b)):
            dev[j].append((e.drift.coefficients - ref.drift.coefficients) / scale)
    rep.timings["time_average_s"] = time.perf_counter() - t0
    d_T = float(np.sqrt(np.mean(np.square(dev[0]))))
    d_2T = float(np.sqrt(np.mean(np.square(dev[1]))))
    res["deviation_from_4T"] = [d_T, d_2T]
    rep.checks.append(_lt("deviation_decreasing",
                          "rms (B_2T - B_4T)/SE_4T < rms (B_T - B_4T)/SE_4T", d_2T, d_T))
    rep.results = res
    rep.tables["estimates"] = Table(["state", "T_avg", "mode", "drift", "stderr"], rows)
    return rep


# ----------------------------------------------------------------------------
# almost periodicity and forgetting of the evolution family

def run_almost_periodic(cfg: RunConfig) -> ExperimentReport:
    """Ensemble means of ``b1(t, x, eta^x(t))`` at ``t`` and ``t + period``, and forgetting.

    The two launches use independent noise; agreement is judged on the
    lowest mode against two pooled standard errors.
    """
    rep = _new_report("almost_periodic", cfg)
    ex = cfg.experiment
    model = cfg.build_model()
    man = SeedManifest(cfg.noise.seed)
    basis = model.basis
    P = model.fast_operator.period
    x = parse_state_spec(ex.x0, basis)
    xn = basis.to_nodal(x.coefficients)
    b1 = model.slow_reaction.b
    B = float(ex.burn_in)
    rows = []
    if P is None:
        rep.flags.append("unchecked: no period declared")
        rep.results = {"period": None}
        return rep

    def b1_mean(fam):
        vals = b1(fam.t, basis.nodes, xn, basis.to_nodal(fam.samples))
        coef = basis.to_coefficients(np.broadcast_to(vals, (len(fam.samples), basis.node_count)))
        return coef.mean(axis=0), coef.std(axis=0, ddof=1) / math.sqrt(len(coef))

    res = {"period": P, "anchors": list(ex.ap_anchors), "periodicity": [], "forgetting": []}
    for i, t in enumerate(ex.ap_anchors):
        fa = sample_evolution_family(model, x, t + B, ex.ap_ensemble, B, man, tag=("ap", i, 0))
        fb = sample_evolution_family(model, x, t + B + P, ex.ap_ensemble, B, man,
                                     tag=("ap", i, 1))
        (ma, sa), (mb, sb) = b1_mean(fa), b1_mean(fb)
        pooled = math.hypot(sa[0], sb[0])
        rep.checks.append(_le(f"periodic_mean[t={t!r}]",
                              "|E b1(t) - E b1(t + P)|_1 <= 2 pooled SE", abs(ma[0] - mb[0]),
                              2 * pooled))
        res["periodicity"].append({"t": t, "mean_t": ma.tolist(), "mean_t_plus_P": mb.tolist(),
                                   "se_t": sa.tolist(), "se_t_plus_P": sb.tolist()})
        rows.append([float(t + B), "b1_mean", float(ma[0]), float(sa[0])])
        rows.append([float(t + B + P), "b1_mean", float(mb[0]), float(sb[0])])
        # launched from t - B and t - 2B
        f1 = sample_evolution_family(model, x, t + 2 * B, ex.ap_ensemble, B, man,
                                     tag=("forget", i, 1))
        f2 = sample_evolution_family(model, x, t + 2 * B, ex.ap_ensemble, 2 * B, man,
                                     tag=("forget", i, 2))
        m1, m2 = f1.samples.mean(axis=0), f2.samples.mean(axis=0)
        s1 = f1.samples.std(axis=0, ddof=1) / math.sqrt(len(f1.samples))
        s2 = f2.samples.std(axis=0, ddof=1) / math.sqrt(len(f2.samples))
        pooled = math.hypot(s1[0], s2[0])
        rep.checks.append(_le(f"forgetting[t={t + 2 * B!r}]",
                              "|E eta(t; from t-B) - E eta(t; from t-2B)|_1 <= 2 pooled SE",
                              abs(m1[0] - m2[0]), 2 * pooled))
        res["forgetting"].append({"t": t + 2 * B, "mean_B": m1.tolist(), "mean_2B": m2.tolist()})
        rows.append([float(t + 2 * B), "eta_mean_from_B", float(m1[0]), float(s1[0])])
        rows.append([float(t + 2 * B), "eta_mean_from_2B", float(m2[0]), float(s2[0])])
    rep.results = res
    rep.tables["means"] = Table(["time", "quantity", "mode1_mean", "mode1_stderr"], rows)
    return rep


# ----------------------------------------------------------------------------
# validation and plain simulation

def run_validate(cfg: RunConfig, sample_budget: int = 10_000) -> ExperimentReport:
    rep = _new_report("validate", cfg)
    model = cfg.build_model(validate=False)
    ar = validate_assumptions(model, sample_budget=sample_budget, seed=int(cfg.noise.seed))
    rep.results = ar.to_dict()
    for it in ar.items.values():
        if it.status == "unchecked":
            rep.flags.append(f"unchecked: {it.name}")
            continue
        # items without explicit sides report their fitted constant only
        lhs = it.lhs if it.lhs is not None else (it.constant or 0.0)
        rhs = it.rhs if it.rhs is not None else float("nan")
        rep.checks.append(Check(it.name, it.inequality, lhs, rhs, it.status == "pass",
                                "" if it.status == "pass" else f"witness={it.witness}"))
    rep.tables["assumptions"] = Table(
        ["item", "status", "constant", "lhs", "rhs", "witness"],
        [[it.name, it.status, "" if it.constant is None else float(it.constant),
          "" if it.lhs is None else float(it.lhs), "" if it.rhs is None else float(it.rhs),
          json.dumps(it.witness, sort_keys=True) if it.witness else ""]
         for it in ar.items.values()])
    return rep


def run_simulation(cfg: RunConfig) -> ExperimentReport:
    """Coupled trajectories at the first eps of the grid."""
    rep = _new_report("simulate", cfg)
    ex = cfg.experiment
    model = cfg.build_model()
    man = SeedManifest(cfg.noise.seed)
    basis = model.basis
    eps = float(ex.epsilons[0])
    paths = np.arange(int(ex.paths))
    t0 = time.perf_counter()
    ens = solve_coupled_ensemble(model, parse_state_spec(ex.x0, basis),
                                 parse_state_spec(ex.y0, basis), eps, cfg.solver_config(), man,
                                 paths)
    rep.timings["simulate_s"] = time.perf_counter() - t0
    N = basis.mode_count
    rows = []
    for comp, rec in (("slow", ens.slow), ("fast", ens.fast)):
        sup = rec.sup_norms()
        for i, p in enumerate(paths):
            for j, t in enumerate(rec.times):
                if not t < rec.stopping_times[i]:
                    break
                rows.append([int(p), float(t), comp, *map(float, rec.states[i, j]),
                             float(sup[i, j])])
    rep.tables["trajectory"] = Table(["path", "time", "component"]
                                     + [f"c{k + 1}" for k in range(N)] + ["sup_norm"], rows)
    rep.tables["stopping"] = Table(["path", "stopping_time", "blown_up"],
                                   [[int(p), float(t), bool(b)] for p, t, b in
                                    zip(paths, ens.slow.stopping_times, ens.slow.blown_up)])
    rep.results = {"epsilon": eps, "micro_substeps": ens.micro_substeps,
                   "stopped": int(ens.stopped.sum()), "nodes": basis.nodes.tolist()}
    if ens.stopped.mean() > BLOWUP_FRACTION:
        rep.flags.append("blow_up_dominated")
    return rep


RUNNERS = {
    "validate": run_validate,
    "simulate": run_simulation,
    "average": run_time_average,
    "converge": run_convergence,
    "mix": run_mixing,
    "moments": run_moments,
    "khasminskii": run_khasminskii,
    "almost-periodic": run_almost_periodic,
}

PARALLEL = {"converge", "moments", "khasminskii"}


def run_experiment(command: str, cfg: RunConfig, workers: int = 1) -> ExperimentReport:
    fn = RUNNERS[command]
    if command in PARALLEL:
        return fn(cfg, workers=workers)
    return fn(cfg)
