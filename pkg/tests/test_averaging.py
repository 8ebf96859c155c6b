import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slowfast.averaging import (AveragedDriftCache, KhasminskiiSchedule, auxiliary_fast,
                                auxiliary_fast_ensemble, averaged_drift,
                                averaged_drift_cached, averaged_drift_profile,
                                estimate_mixing_rate, khasminskii_delta,
                                linear_averaged_drift, linear_averaged_gains,
                                sample_evolution_family, schedule_trend_ok)
from slowfast.model import builtin_model
from slowfast.noise import SeedManifest
from slowfast.solver import SolverConfig, solve_coupled_ensemble
from slowfast.spectral import Field, apply_pointwise

MAN = SeedManifest(99)
QUIET_FAST = {"f_fast": 0.0, "g_fast": 0.0}
QUIET = dict(QUIET_FAST, f_slow=0.0, g_slow=0.0)


def test_linear_mixing_rate_closed_form():
    m = builtin_model("linear", QUIET, validate=False)
    b = m.basis
    est = estimate_mixing_rate(m, Field.zero(b), Field.mode(b, 1), Field.zero(b), 1.0, 20, MAN)
    rate = m.alpha + 2 * np.pi ** 2 + 1
    assert abs(est.rate - rate) <= 0.02 * rate
    assert est.ok


def test_y_independent_drift_is_exact():
    m = builtin_model("cubic-gl", {"slow_coupling": 0.0}, validate=False)
    x = Field(np.array([0.8, -0.3, 0.2, 0, 0, 0.1, 0, 0]), m.basis)
    est = averaged_drift(m, x, 2.0, 16, 0.5, MAN)
    ref = apply_pointwise(lambda t, xi, a: -a * a * a, 0.0, x)
    np.testing.assert_array_equal(est.drift.coefficients, ref.coefficients)
    assert not np.any(est.stderr.coefficients)


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_linear_averaged_drift_matches_equilibrium(c):
    m = builtin_model("linear", QUIET_FAST, validate=False)
    b = m.basis
    drift, se = averaged_drift(m, Field.mode(b, 1, c), 4.0, 4, 0.5, MAN)
    target = c / (m.alpha + 2 * np.pi ** 2 + 1)
    assert abs(drift.coefficients[0] - target) <= 0.01 * target


def test_linear_gains_agree_with_monte_carlo():
    m = builtin_model("linear", validate=False)
    b = m.basis
    g = linear_averaged_gains(m)
    assert g[0] == pytest.approx(1 / (m.alpha + 2 * np.pi ** 2 + 1), rel=0.01)
    assert np.all(np.diff(g) < 0)
    est = averaged_drift(m, Field.mode(b, 1), 8.0, 32, 0.5, MAN)
    assert abs(est.drift.coefficients[0] - g[0]) <= 3 * est.stderr.coefficients[0] + 1e-6
    with pytest.raises(ValueError):
        linear_averaged_drift(builtin_model("cubic-gl", validate=False))


def test_profile_windows_are_nested_and_consistent():
    m = builtin_model("cubic-gl", validate=False)
    x = Field.mode(m.basis, 1)
    ests = averaged_drift_profile(m, x, [1.0, 2.0], 8, 0.5, MAN, dt=0.01)
    single = averaged_drift(m, x, 2.0, 8, 0.5, MAN, dt=0.01)
    np.testing.assert_allclose(ests[1].drift.coefficients, single.drift.coefficients,
                               rtol=1e-12, atol=1e-15)
    assert [e.T_avg for e in ests] == [1.0, 2.0]
    # windows are rounded up to whole periods of the fast modulation
    ests = averaged_drift_profile(m, x, [1.0, 1.5], 4, 0.5, MAN)
    assert [e.T_avg for e in ests] == [1.0, 2.0]


def test_cache_hits_and_quantization():
    m = builtin_model("cubic-gl", validate=False)
    cache = AveragedDriftCache(m, MAN, q=0.1, T_avg=1.0, M_ens=4)
    x = Field.mode(m.basis, 1)
    first = averaged_drift_cached(cache, m, x, 0.1, MAN)
    assert (cache.misses, len(cache)) == (1, 1)
    again = averaged_drift_cached(cache, m, x, 0.1, MAN)
    assert cache.misses == 1 and cache.hits == 1
    assert again is first
    near = Field(x.coefficients + np.r_[0.05, np.zeros(7)], m.basis)
    assert np.max(np.abs(near.nodal - x.nodal)) <= 0.1
    assert averaged_drift_cached(cache, m, near, 0.1, MAN) is first
    assert cache.misses == 1
    with pytest.raises(ValueError):
        cache.locate(x.coefficients[None], 0.01)


def test_cache_is_deterministic_and_round_trips():
    m = builtin_model("cubic-gl", validate=False)
    X = np.array([Field.mode(m.basis, 1, a).coefficients for a in (0.2, 1.0, 0.6)])
    runs = []
    for order in ([0, 1, 2], [2, 1, 0]):
        cache = AveragedDriftCache(m, MAN, q=0.1, T_avg=1.0, M_ens=4)
        cache.batch_drift(X[order], corrected=False)
        runs.append({k: e.drift.coefficients for k, e in zip(cache.keys, cache.entries)})
    # an entry depends on its state only, not on when it was created
    assert runs[0].keys() == runs[1].keys()
    for k in runs[0]:
        np.testing.assert_array_equal(runs[0][k], runs[1][k])
    back = AveragedDriftCache.from_dict(m, cache.to_dict())
    np.testing.assert_array_equal(back.batch_drift(X, corrected=False),
                                  cache.batch_drift(X, corrected=False))
    assert back.misses == 0


def test_cache_interpolation_error_on_linear_grid():
    m = builtin_model("linear", validate=False)
    b = m.basis
    q = 0.1
    cache = AveragedDriftCache(m, MAN, q=q, T_avg=4.0, M_ens=16)
    grid = np.arange(-1.0, 1.0 + 1e-9, q / np.sqrt(2))  # nodal spacing q along e_1
    cache.batch_drift(np.outer(grid, np.eye(8)[0]), q, corrected=False)
    exact = linear_averaged_drift(m)
    lip = float(np.max(exact.gain))
    rng = np.random.default_rng(0)
    for c in rng.uniform(-1, 1, 10):
        X = c * np.eye(8)[:1]
        j = int(cache.locate(X, q)[0])
        got = b.to_nodal(cache.entries[j].drift.coefficients)
        want = b.to_nodal(exact.batch(X)[0])
        bound = q * lip + 2 * np.max(cache.entries[j].nodal_stderr)
        assert np.max(np.abs(got - want)) <= bound


def test_corrected_evaluation_is_exact_for_the_cubic_part():
    m = builtin_model("cubic-gl", {"slow_coupling": 0.0}, validate=False)
    cache = AveragedDriftCache(m, MAN, q=0.2, T_avg=1.0, M_ens=4, sensitivities=True)
    X = np.array([Field.mode(m.basis, 1, a).coefficients for a in (1.0, 1.05)])
    out = cache.batch_drift(X)
    ref = [apply_pointwise(lambda t, xi, a: -a ** 3, 0.0, Field(x, m.basis)).coefficients
           for x in X]
    np.testing.assert_allclose(out, ref, atol=1e-12)
    assert len(cache) == 1


@pytest.mark.parametrize("eps,expected", [(0.01, 0.0230259), (0.1, 0.115129)])
def test_khasminskii_delta(eps, expected):
    assert khasminskii_delta(eps, 0.5) == pytest.approx(expected, abs=5e-7)


def test_khasminskii_grid_trend_and_errors():
    grid = [0.1, 0.01, 0.001]
    d = [khasminskii_delta(e) for e in grid]
    assert d[0] > d[1] > d[2]
    assert d[0] / grid[0] < d[1] / grid[1] < d[2] / grid[2]
    assert schedule_trend_ok(grid, 0.5)
    for bad in (0.0, 1.0, 2.0):
        with pytest.raises(ValueError):
            khasminskii_delta(bad)
    with pytest.raises(ValueError):
        khasminskii_delta(0.1, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 0.5), st.floats(0.1, 2.0))
def test_schedule_covers_horizon(eps, kappa):
    s = KhasminskiiSchedule(eps, kappa, 1.0, 0.001)
    assert s.window >= 0.001
    assert s.n_windows >= 1
    assert s.window_of_step(int(round(1.0 / 0.001)) - 1) == s.n_windows - 1
    assert list(s.restart_steps) == [k * s.steps_per_window for k in range(s.n_windows)]


def _couple(m, eps, P, T=0.5):
    cfg = SolverConfig(h=0.005, T=T)
    sched = KhasminskiiSchedule(eps, 0.5, T, cfg.h)
    x0 = Field.mode(m.basis, 1)
    ens = solve_coupled_ensemble(m, x0, 0.0 * x0, eps, cfg, MAN, np.arange(P))
    return cfg, sched, ens


def test_auxiliary_equals_fast_for_constant_slow_input():
    m = builtin_model("linear", {"slow_coupling": 0.0, "f_slow": 0.0, "g_slow": 0.0},
                      validate=False)
    cfg = SolverConfig(h=0.005, T=0.5)
    sched = KhasminskiiSchedule(0.1, 0.5, 0.5, cfg.h)
    z = Field.zero(m.basis)
    ens = solve_coupled_ensemble(m, z, z, 0.1, cfg, MAN, np.arange(3))
    assert not np.any(ens.slow.states)
    aux, tau = auxiliary_fast_ensemble(m, ens.slow.states, ens.fast.states, 0.1, sched, MAN,
                                       cfg, np.arange(3))
    np.testing.assert_array_equal(aux, ens.fast.states)


def test_auxiliary_single_path_matches_ensemble():
    m = builtin_model("cubic-gl", validate=False)
    cfg, sched, ens = _couple(m, 0.05, 2)
    aux, _ = auxiliary_fast_ensemble(m, ens.slow.states, ens.fast.states, 0.05, sched, MAN,
                                     cfg, np.arange(2))
    k0 = sched.restart_steps
    slow = [(k, Field(ens.slow.states[1, n], m.basis)) for k, n in enumerate(k0)]
    fast = [(k, Field(ens.fast.states[1, n], m.basis)) for k, n in enumerate(k0)]
    rec = auxiliary_fast(m, slow, 0.05, sched, MAN, fast, cfg, path_index=1)
    np.testing.assert_allclose(rec.states, aux[1], rtol=1e-12, atol=1e-14)
    with pytest.raises(ValueError, match="mismatch"):
        auxiliary_fast(m, slow[:-1], 0.05, sched, MAN, fast, cfg, path_index=1)


def test_auxiliary_error_linear_window_bound():
    m = builtin_model("linear", QUIET, validate=False)
    eps = 0.01
    cfg, sched, ens = _couple(m, eps, 1)
    aux, _ = auxiliary_fast_ensemble(m, ens.slow.states, ens.fast.states, eps, sched, MAN,
                                     cfg, [0])
    # mode 1: w' = -(lam / eps) w + (u(k delta) - u(t)) / eps, so |w| ~ delta |u'| / lam
    u = ens.slow.states[0, :, 0]
    t = ens.slow.times
    lip = np.max(np.abs(np.diff(u) / np.diff(t))[len(t) // 10:])
    lam = m.alpha + 2 * np.pi ** 2 + 1
    bound = sched.window * lip / lam
    err = np.max(np.abs(aux[0, len(t) // 10:, 0] - ens.fast.states[0, len(t) // 10:, 0]))
    assert 0.5 * bound <= err <= 2 * bound


def test_evolution_family_burn_in_guard():
    m = builtin_model("cubic-gl", validate=False)
    x = Field.mode(m.basis, 1)
    fam = sample_evolution_family(m, x, 1.0, 16, 0.5, MAN)
    assert fam.samples.shape == (16, 8)
    with pytest.raises(ValueError, match="burn-in"):
        sample_evolution_family(m, x, 1.0, 16, 0.1, MAN, rate=20.0)
    with pytest.raises(ValueError):
        sample_evolution_family(m, x, 1.0, 1, 0.5, MAN)


def test_forgetting_of_launch_time():
    m = builtin_model("cubic-gl", validate=False)
    x = Field.mode(m.basis, 1)
    a = sample_evolution_family(m, x, 2.0, 400, 0.5, MAN, tag=("f", 1))
    b = sample_evolution_family(m, x, 2.0, 400, 1.0, MAN, tag=("f", 2))
    se = np.hypot(a.samples[:, 0].std(ddof=1), b.samples[:, 0].std(ddof=1)) / 20
    assert abs(a.samples[:, 0].mean() - b.samples[:, 0].mean()) <= 2 * se
