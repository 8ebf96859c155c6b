"""Acceptance criteria at their stated sizes, tolerances and runtime limits.

Each test records one pass/fail line; the lines are printed together in the
"acceptance criteria" section of the pytest summary.
"""

import json
import math
import time

import numpy as np
import pytest

from slowfast.averaging import averaged_drift
from slowfast.cli import main
from slowfast.config import RunConfig
from slowfast.experiments import (run_convergence, run_khasminskii, run_mixing, run_moments,
                                  run_time_average)
from slowfast.model import NoiseCoeffSpec, builtin_model
from slowfast.noise import JumpSpec, SeedManifest, jump_integral_nodal, sample_jumps
from slowfast.solver import (SolverConfig, solve_averaged_ensemble, solve_coupled,
                             solve_coupled_ensemble)
from slowfast.spectral import Field, apply_pointwise

QUIET = {"f_slow": 0.0, "g_slow": 0.0, "f_fast": 0.0, "g_fast": 0.0}


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.s = time.perf_counter() - self.t0


def test_c01_linear_solver_exactness(criterion):
    with Timer() as tm:
        # linear model with the slow coupling off: no reaction, no noise
        m = builtin_model("linear", dict(QUIET, slow_coupling=0.0), validate=False)
        b = m.basis
        u, _ = solve_coupled(m, Field.mode(b, 1), Field.zero(b), 0.1,
                             SolverConfig(h=0.01, T=0.1), SeedManifest(0))
        want = np.zeros(b.mode_count)
        want[0] = math.exp(-math.pi ** 2 * 0.1)
        err = float(np.max(np.abs(u.final.coefficients - want)))
    ok = err <= 1e-6 and tm.s < 1.0
    criterion(1, "linear solver exactness", ok,
              f"max mode error {err:.2e} <= 1e-6 vs exp(-pi^2 t) = {want[0]:.6f}", tm.s)
    assert err <= 1e-6
    assert tm.s < 1.0


def test_c02_truncation_consistency(criterion):
    with Timer() as tm:
        m = builtin_model("cubic-gl")
        b = m.basis
        rng = np.random.default_rng(2)
        # random initial data spread over the ball of radius 19
        X0 = rng.normal(0.0, 1.0, (50, 8)) / np.arange(1, 9)
        X0 *= (rng.uniform(1.0, 19.0, 50) / np.max(np.abs(b.to_nodal(X0)), axis=1))[:, None]
        man = SeedManifest(7)
        runs = [solve_coupled_ensemble(m, X0, np.zeros(8), 0.01,
                                       SolverConfig(h=0.01, T=1.0, truncation_radius=n),
                                       man, np.arange(50)) for n in (20.0, 50.0)]
        a, c = runs
        ok_paths = 0
        for i in range(50):
            keep = a.slow.times < a.slow.stopping_times[i]
            same = (np.array_equal(a.slow.states[i, keep], c.slow.states[i, keep])
                    and np.array_equal(a.fast.states[i, keep], c.fast.states[i, keep]))
            ok_paths += bool(same)
        stopped = int(a.stopped.sum())
    ok = ok_paths == 50 and tm.s < 60
    criterion(2, "truncation consistency", ok,
              f"{ok_paths}/50 paths bit-identical up to tau_20, {stopped} stopped at n=20", tm.s)
    assert ok_paths == 50
    assert tm.s < 60


def g_jump(t, xi, x, z):
    # state-independent and not centred: int g dnu = 0.025 + 1/3 for uniform[0, 1] marks
    return (0.05 * z + z * z) * np.ones_like(x)


def test_c03_compensation_martingale(criterion):
    with Timer() as tm:
        spec = JumpSpec(1.0, ("uniform", 0.0, 1.0))
        man = SeedManifest(3)
        T, P = 1.0, 10_000
        comp = float(jump_integral_nodal(spec, g_jump, False, 0.0, 0.0, 0.0))
        vals = np.empty(P)
        for p in range(P):
            ev = sample_jumps(spec, (0.0, T), 1.0, man.stream(p, "martingale"))
            vals[p] = np.sum(g_jump(0.0, 0.0, 0.0, ev.marks)) - comp * T
        mean, se = vals.mean(), vals.std(ddof=1) / math.sqrt(P)
        # the same compensated integral inside the slow stepper: E u(T) = 0 from u(0) = 0
        m = builtin_model("linear", dict(QUIET, slow_coupling=0.0), validate=False).replace(
            jump_spec=spec, slow_noise=NoiseCoeffSpec(g=g_jump, lipschitz_bound=0.0,
                                                      jump_affine=False,
                                                      state_independent=True))
        rec = solve_averaged_ensemble(m, np.zeros_like, np.zeros(m.basis.mode_count),
                                      SolverConfig(h=0.01, T=T), man, np.arange(P))
        u1 = rec.states[:, -1, 0]
        mean_s, se_s = u1.mean(), u1.std(ddof=1) / math.sqrt(P)
    ok = abs(mean) <= 3 * se and abs(mean_s) <= 3 * se_s and tm.s < 120
    criterion(3, "compensation martingale", ok,
              f"|mean| {abs(mean):.2e} <= 3 SE {3 * se:.2e}; in solver, mode-1 |mean| "
              f"{abs(mean_s):.2e} <= 3 SE {3 * se_s:.2e}", tm.s)
    assert abs(mean) <= 3 * se
    assert abs(mean_s) <= 3 * se_s
    assert tm.s < 120


def test_c04_mixing(criterion):
    with Timer() as tm:
        lin = run_mixing(RunConfig().replace(model={"name": "linear"}, noise=dict(QUIET)))
        cub = run_mixing(RunConfig().replace(experiment={"mixing_pairs": 1000}))
    closed = 100 + 2 * math.pi ** 2 + 1
    rel = abs(lin.results["rate"] - closed) / closed
    lo, hi = cub.results["ci"]
    ok = rel <= 0.02 and cub.results["rate"] > 0 and lo > 0 and tm.s < 300
    criterion(4, "mixing", ok, f"linear rate {lin.results['rate']:.3f} vs {closed:.3f} "
              f"({100 * rel:.2f}%); cubic-gl rate {cub.results['rate']:.3f} "
              f"CI [{lo:.3f}, {hi:.3f}]", tm.s)
    assert rel <= 0.02
    assert lo > 0
    assert tm.s < 300


def test_c05_averaged_drift_correctness(criterion):
    with Timer() as tm:
        man = SeedManifest(5)
        m = builtin_model("cubic-gl", {"slow_coupling": 0.0})
        x = Field(np.array([1.0, -0.4, 0.3, 0.0, 0.1, 0.0, 0.0, 0.05]), m.basis)
        est = averaged_drift(m, x, 10.0, 64, 0.5, man)
        exact = apply_pointwise(lambda t, xi, a: -a * a * a, 0.0, x)
        ok_a = (np.array_equal(est.drift.coefficients, exact.coefficients)
                and not np.any(est.stderr.coefficients))
        lin = builtin_model("linear", {"f_fast": 0.0, "g_fast": 0.0})
        errs = []
        for c in (0.5, 1.0, 2.0):
            d = averaged_drift(lin, Field.mode(lin.basis, 1, c), 10.0, 4, 0.5, man)
            target = c / (lin.alpha + 2 * math.pi ** 2 + 1)
            errs.append(abs(d.drift.coefficients[0] - target) / target)
    ok = ok_a and max(errs) <= 0.01 and tm.s < 300
    criterion(5, "averaged drift correctness", ok,
              f"(a) exact={ok_a}; (b) max rel error {max(errs):.4f} <= 0.01", tm.s)
    assert ok_a
    assert max(errs) <= 0.01
    assert tm.s < 300


def test_c06_finite_T_decay(criterion):
    with Timer() as tm:
        rep = run_time_average(RunConfig())
    worst = max(c.lhs for c in rep.checks if c.name.startswith("T_vs_2T"))
    d_T, d_2T = rep.results["deviation_from_4T"]
    ok = rep.passed and tm.s < 600
    criterion(6, "finite-T averages decay", ok,
              f"max |B_T - B_2T|/pooled SE {worst:.2f} <= 2; deviation from 4T "
              f"{d_T:.2f} -> {d_2T:.2f}", tm.s)
    assert rep.passed, rep.summary()
    assert tm.s < 600


def test_c07_khasminskii_auxiliary(criterion):
    with Timer() as tm:
        rep = run_khasminskii(RunConfig())
    v = rep.results["sup_mean_error"]
    ci = rep.results["ci"]
    ok = rep.passed and tm.s < 600
    criterion(7, "Khasminskii auxiliary process", ok,
              f"E||vhat - v||^2: {v[0]:.3e} CI [{ci[0][0]:.3e}, {ci[0][1]:.3e}] at 0.1 -> "
              f"{v[1]:.3e} CI [{ci[1][0]:.3e}, {ci[1][1]:.3e}] at 0.01", tm.s)
    assert rep.passed, rep.summary()
    assert tm.s < 600


def test_c08_averaging_principle(criterion):
    with Timer() as tm:
        rep = run_convergence(RunConfig())
    med = rep.results["medians"]
    ok = rep.passed and not rep.flags and tm.s < 1800
    criterion(8, "averaging principle", ok,
              "medians " + " > ".join(f"{x:.3e}" for x in med) + f"; flags {rep.flags}", tm.s)
    assert rep.passed, rep.summary()
    assert not rep.flags
    assert tm.s < 1800


def test_c09_moment_uniformity(criterion):
    with Timer() as tm:
        rep = run_moments(RunConfig())
        # from e_1 the supremum sits at t = 0; from rest it is set by the noise alone
        rest = run_moments(RunConfig().replace(experiment={"x0": "zero"}))
    parts = [f"x0={x0} p={c.name[-2]}: {c.lhs:.3g} <= {c.rhs:.3g}"
             for x0, r in (("e1", rep), ("0", rest)) for c in r.checks]
    ok = rep.passed and rest.passed and tm.s < 600
    criterion(9, "moment uniformity", ok, "; ".join(parts), tm.s)
    assert rep.passed, rep.summary()
    assert rest.passed, rest.summary()
    assert tm.s < 600


REPLAY_SETS = {
    "validate": ["--budget", "2000"],
    "simulate": [],
    "average": ["--set", "experiment.average_M_ens=8", "--set", "experiment.average_T=2.0"],
    "converge": ["--set", "experiment.cache_T_avg=2.0", "--set", "experiment.cache_M_ens=8",
                 "--set", "experiment.cache_q=0.3"],
    "mix": ["--set", "experiment.mixing_pairs=50"],
    "moments": ["--eps", "1.0,0.1"],
    "khasminskii": [],
    "almost-periodic": ["--set", "experiment.ap_ensemble=50"],
}


def test_c10_replay_determinism(criterion, tmp_path):
    with Timer() as tm:
        bad = []
        for cmd, extra in REPLAY_SETS.items():
            out = tmp_path / cmd
            common = [] if cmd == "validate" else ["--T", "0.2", "--paths", "8", "--set",
                                                   "experiment.bootstrap=100"]
            code = main([cmd, "--out", str(out), "--seed", "11", "--quiet"] + common + extra)
            assert code in (0, 1), f"{cmd} exited with {code}"
            if main(["replay", str(out / "manifest.json"), "--quiet"]) != 0:
                bad.append(cmd)
            man = json.loads((out / "manifest.json").read_text())
            assert any(k.endswith(".csv") for k in man["outputs"])
    ok = not bad
    criterion(10, "replay determinism", ok,
              f"{len(REPLAY_SETS) - len(bad)}/{len(REPLAY_SETS)} experiments byte-identical",
              tm.s)
    assert not bad, bad
