"""Frozen fast dynamics: forgetting rate, averaged slow drift, Khasminskii windows.

The evolution family of measures of the frozen fast equation is realized by
ensembles after a burn-in.  The averaged drift is an ensemble-and-time mean of
``b1(t, x, v^x(t))``; estimates are cached by slow state and, for states near
a cached one, corrected to first order with pathwise (common-noise)
sensitivities of the fast ensemble.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.spatial import cKDTree

from .model import ModelSpec
from .noise import SeedManifest
from .solver import SolverConfig, TrajectoryRecord, fast_window_ensemble, frozen_fast_ensemble
from .spectral import Field

MIN_ENSEMBLE = 2
BURN_IN_MULTIPLE = 5.0


def _coeffs(x, basis):
    if isinstance(x, Field):
        return np.array(x.coefficients)
    x = np.asarray(x, dtype=float)
    if x.shape != (basis.mode_count,):
        raise ValueError("state has the wrong number of modes")
    return x


# ----------------------------------------------------------------------------
# forgetting rate

@dataclass
class MixingEstimate:
    """Exponential forgetting rate of the frozen fast equation from coupled pairs."""

    rate: float
    ci: tuple
    n_pairs: int
    times: np.ndarray = field(repr=False)
    mean_distance: np.ndarray = field(repr=False)
    degenerate: bool = False
    contracting: bool = True
    fit_window: tuple = (0.0, 0.0)
    note: str = ""

    @property
    def ok(self):
        return not self.degenerate and self.contracting and self.ci[0] > 0

    def to_dict(self):
        return {"rate": self.rate, "ci": list(self.ci), "n_pairs": self.n_pairs,
                "degenerate": self.degenerate, "contracting": self.contracting,
                "fit_window": list(self.fit_window), "note": self.note}


def _log_slope(t, d):
    """Least-squares slope of ``log d`` against ``t`` on the usable (positive) range."""
    keep = np.isfinite(d) & (d > 0)
    if keep.sum() < 3:
        return np.nan
    t, ld = t[keep], np.log(d[keep])
    tc = t - t.mean()
    return float(np.sum(tc * (ld - ld.mean())) / np.sum(tc * tc))


def estimate_mixing_rate(model: ModelSpec, x, y1, y2, T: float, ensemble: int,
                         manifest: SeedManifest, dt: Optional[float] = None, s: float = 0.0,
                         n_boot: int = 400, floor: float = 1e-250,
                         tag=("mixing",)) -> MixingEstimate:
    """Fit ``log E||v(t; y1) - v(t; y2)||`` linearly in ``t`` over ``[s, s + T]``.

    Both members of a pair use the same noise.  The fit uses times where the
    mean distance stays above ``floor`` times its initial value.  The 95% CI is
    a percentile bootstrap over pairs.
    """
    basis = model.basis
    y1c, y2c = _coeffs(y1, basis), _coeffs(y2, basis)
    if np.array_equal(y1c, y2c):
        return MixingEstimate(float("nan"), (float("nan"), float("nan")), int(ensemble),
                              np.zeros(0), np.zeros(0), degenerate=True, contracting=False,
                              note="y1 == y2: distance identically zero, fit rejected")
    E = int(ensemble)
    dt = dt or model.fast_time_step()
    rows = np.concatenate([np.arange(E), np.arange(E)])
    Y0 = np.concatenate([np.broadcast_to(y1c, (E, basis.mode_count)),
                         np.broadcast_to(y2c, (E, basis.mode_count))])
    dist = []
    times = []

    def on_step(t, V, Vn, active):
        times.append(t)
        dist.append(np.max(np.abs(Vn[:E] - Vn[E:]), axis=1))

    _, _, tau = frozen_fast_ensemble(model, _coeffs(x, basis), Y0, s, s + T, dt, manifest,
                                     np.arange(E), tag=tag, row_member=rows,
                                     record_stride=None, on_step=on_step)
    d0 = float(np.max(np.abs(basis.to_nodal(y1c - y2c))))
    times = np.concatenate([[s], times])
    D = np.column_stack([np.full(E, d0)] + dist)  # (pairs, times)
    ok = np.isfinite(tau[:E]) | np.isfinite(tau[E:])
    D = D[~ok] if np.any(ok) else D
    mean_d = D.mean(axis=0)
    usable = mean_d > floor * d0
    last = int(np.flatnonzero(usable)[-1]) + 1 if np.any(usable) else 0
    tt = times[:last]
    rate = -_log_slope(tt, mean_d[:last])
    rng = np.random.default_rng(manifest.seed_sequence(0, *tag, "bootstrap"))
    boots = []
    n = D.shape[0]
    for _ in range(n_boot):
        idx = rng.integers(0, n, n)
        boots.append(-_log_slope(tt, D[idx, :last].mean(axis=0)))
    boots = np.array(boots)
    boots = boots[np.isfinite(boots)]
    ci = ((float(np.quantile(boots, 0.025)), float(np.quantile(boots, 0.975)))
          if boots.size else (float("nan"), float("nan")))
    contracting = bool(np.isfinite(rate) and rate > 0)
    note = "" if contracting else "non-contracting fit: mixing failure"
    if np.any(ok):
        note = (note + "; " if note else "") + f"{int(ok.sum())} pairs stopped and dropped"
    return MixingEstimate(float(rate), ci, E, times, mean_d, False, contracting,
                          (float(tt[0]) if len(tt) else s, float(tt[-1]) if len(tt) else s),
                          note)


# ----------------------------------------------------------------------------
# evolution family samples

@dataclass
class EvolutionFamilyEstimate:
    x: np.ndarray
    t: float
    samples: np.ndarray
    burn_in: float
    rate: Optional[float] = None
    dropped: int = 0

    def __post_init__(self):
        if self.samples.shape[0] < MIN_ENSEMBLE:
            raise ValueError(f"ensemble smaller than the minimum {MIN_ENSEMBLE}")
        if self.rate is not None and self.rate > 0 and \
                self.burn_in < BURN_IN_MULTIPLE / self.rate * (1 - 1e-9):
            raise ValueError(f"burn-in {self.burn_in} shorter than "
                             f"{BURN_IN_MULTIPLE}/rate = {BURN_IN_MULTIPLE / self.rate}")


def sample_evolution_family(model: ModelSpec, x, t: float, ensemble: int, burn_in: float,
                            manifest: SeedManifest, y0=None, rate=None, dt=None,
                            tag=("family",)) -> EvolutionFamilyEstimate:
    """Samples of ``eta^x(t)``: frozen fast paths launched at ``t - burn_in``."""
    basis = model.basis
    y0 = np.zeros(basis.mode_count) if y0 is None else _coeffs(y0, basis)
    dt = dt or model.fast_time_step()
    final = []

    def on_step(tt, V, Vn, active):
        final[:] = [V.copy()]

    _, _, tau = frozen_fast_ensemble(model, _coeffs(x, basis), y0, t - burn_in, t, dt, manifest,
                                     np.arange(int(ensemble)), tag=tag, record_stride=None,
                                     on_step=on_step)
    stopped = np.isfinite(tau)
    return EvolutionFamilyEstimate(_coeffs(x, basis), float(t), final[-1][~stopped],
                                   float(burn_in), rate, int(stopped.sum()))


# ----------------------------------------------------------------------------
# averaged drift

@dataclass
class DriftEstimate:
    """Ensemble-and-time average of ``b1(t, x, v^x(t))``.

    Unpacks as ``(drift, stderr)``.  ``stderr`` holds per-coefficient standard
    errors; ``nodal_stderr`` the per-node ones.
    """

    x: np.ndarray
    drift: Field
    stderr: Field
    nodal_stderr: np.ndarray
    n_used: int
    n_dropped: int
    T_avg: float
    burn_in: float
    unreliable: bool = False
    # first-order correction data (subsampled fast states and sensitivities)
    sample_times: Optional[np.ndarray] = field(default=None, repr=False)
    sample_states: Optional[np.ndarray] = field(default=None, repr=False)
    sample_jacobians: Optional[np.ndarray] = field(default=None, repr=False)

    def __iter__(self):
        yield self.drift
        yield self.stderr

    def corrected(self, model: ModelSpec, X: np.ndarray) -> np.ndarray:
        """First-order corrected drift coefficients at the rows of ``X``."""
        X = np.atleast_2d(X)
        base = self.drift.coefficients
        if self.sample_times is None:
            return np.broadcast_to(base, X.shape).copy()
        basis = model.basis
        b1 = model.slow_reaction.b
        xi = basis.nodes
        dX = X - self.x
        Xn = basis.to_nodal(X)  # (P, M)
        xn = basis.to_nodal(self.x)
        ts = self.sample_times[:, None]
        ref = b1(ts, xi, xn, self.sample_states).mean(axis=0)
        out = np.empty_like(X)
        for i in range(X.shape[0]):
            ys = self.sample_states + np.einsum("k,skm->sm", dX[i], self.sample_jacobians)
            val = b1(ts, xi, Xn[i], ys).mean(axis=0)
            out[i] = base + basis.to_coefficients(val - ref)
        return out

    def to_dict(self):
        return {"x": self.x.tolist(), "drift": self.drift.coefficients.tolist(),
                "stderr": self.stderr.coefficients.tolist(),
                "nodal_stderr": self.nodal_stderr.tolist(), "n_used": self.n_used,
                "n_dropped": self.n_dropped, "T_avg": self.T_avg, "burn_in": self.burn_in,
                "unreliable": self.unreliable}


def _period_round(model, T_avg):
    P = model.fast_operator.period
    if P is None:
        return float(T_avg)
    return math.ceil(T_avg / P - 1e-9) * P


def averaged_drift(model: ModelSpec, x, T_avg: float, M_ens: int, burn_in: float,
                   manifest: SeedManifest, y0=None, dt: Optional[float] = None,
                   radius: float = 50.0, tag=("avg",), sensitivities: bool = False,
                   fd_step: float = 1e-3, n_samples: int = 512) -> DriftEstimate:
    """Estimate the averaged drift at ``x``.

    Runs ``M_ens`` frozen fast paths from ``y0`` (zero by default), discards
    ``[0, burn_in]`` and averages ``b1`` over ``[burn_in, burn_in + T_avg]``
    with the right-endpoint rule.  For a periodic fast operator ``T_avg`` is
    rounded up to whole periods.  Paths that hit the truncation radius are
    dropped; more than 10% dropped flags the estimate unreliable.

    With ``sensitivities`` every member also runs ``N`` common-noise copies
    with ``x`` shifted by ``fd_step`` along each mode; a subsample of states
    and finite-difference Jacobians is kept for :meth:`DriftEstimate.corrected`.
    """
    return averaged_drift_profile(model, x, [T_avg], M_ens, burn_in, manifest, y0, dt,
                                  radius, tag, sensitivities, fd_step, n_samples)[0]


def averaged_drift_profile(model: ModelSpec, x, T_list: Sequence[float], M_ens: int,
                           burn_in: float, manifest: SeedManifest, y0=None,
                           dt: Optional[float] = None, radius: float = 50.0, tag=("avg",),
                           sensitivities: bool = False, fd_step: float = 1e-3,
                           n_samples: int = 512) -> List[DriftEstimate]:
    """Finite-``T`` averages for several ``T`` from one run (nested windows, same paths).

    Every ``T`` must be a whole multiple of the smallest one.
    """
    if not burn_in > 0 or not min(T_list) > 0:
        raise ValueError("burn_in and T_avg must be positive")
    basis = model.basis
    N = basis.mode_count
    xc = _coeffs(x, basis)
    y0 = np.zeros(N) if y0 is None else _coeffs(y0, basis)
    M = int(M_ens)
    T_list = [_period_round(model, T) for T in T_list]
    T0 = min(T_list)
    dt = dt or model.fast_time_step()
    dt = T0 / max(1, math.ceil(T0 / dt - 1e-9))
    n_list = []
    for T in T_list:
        n = T / dt
        if abs(n - round(n)) > 1e-6:
            raise ValueError("averaging lengths must be whole multiples of the smallest")
        n_list.append(int(round(n)))
    n_avg = max(n_list)
    n_burn = max(1, math.ceil(burn_in / dt - 1e-9))
    burn = n_burn * dt
    b1 = model.slow_reaction.b
    xi = basis.nodes

    if sensitivities:
        X = np.concatenate([np.broadcast_to(xc, (M, N)),
                            np.repeat(xc + fd_step * np.eye(N), M, axis=0)])
        row_member = np.tile(np.arange(M), N + 1)
    else:
        X = np.broadcast_to(xc, (M, N))
        row_member = np.arange(M)
    xn = np.clip(basis.to_nodal(xc), -radius, radius)

    # deviations from a reference value: an integrand that does not move is averaged exactly
    ref = None
    acc = np.zeros((M, basis.node_count))
    snaps = {}
    per_sample = max(1, n_samples // M) if sensitivities else 0
    sample_steps = set(np.linspace(n_burn + 1, n_burn + n_avg, per_sample).round().astype(int)) \
        if per_sample else set()
    st, sy, sj = [], [], []
    count = [0]

    def on_step(t, V, Vn, active):
        nonlocal ref
        count[0] += 1
        k = count[0]
        if k <= n_burn:
            return
        vals = b1(t, xi, xn, np.clip(Vn[:M], -radius, radius))
        vals = np.broadcast_to(vals, (M, basis.node_count))
        if ref is None:
            ref = np.array(vals[0])
        acc[:] += vals - ref
        if k - n_burn in n_list:
            snaps[k - n_burn] = acc.copy()
        if k in sample_steps:
            st.append(np.full(M, t))
            sy.append(np.array(Vn[:M]))
            J = (Vn[M:].reshape(N, M, -1) - Vn[:M][None]) / fd_step
            sj.append(np.transpose(J, (1, 0, 2)))

    _, _, tau = frozen_fast_ensemble(model, X, y0, 0.0, burn + n_avg * dt, dt, manifest,
                                     np.arange(M), tag=tag, row_member=row_member,
                                     radius=radius, record_stride=None, on_step=on_step)
    stopped = np.isfinite(tau).reshape(-1, M).any(axis=0)
    keep = ~stopped
    n_used = int(keep.sum())
    if n_used == 0:
        raise FloatingPointError("every averaging path hit the truncation radius")
    out = []
    for T, n in zip(T_list, n_list):
        dev = snaps[n][keep] / n
        drift = Field(basis.to_coefficients(ref + dev.mean(axis=0)), basis)
        if n_used > 1:
            # spread of the deviations: exactly zero when the integrand never moves
            nse = dev.std(axis=0, ddof=1) / math.sqrt(n_used)
            cse = basis.to_coefficients(dev).std(axis=0, ddof=1) / math.sqrt(n_used)
        else:
            nse = np.full(basis.node_count, np.inf)
            cse = np.full(N, np.inf)
        est = DriftEstimate(xc, drift, Field(cse, basis), nse, n_used, int(stopped.sum()),
                            float(T), float(burn), bool(stopped.sum() > 0.1 * M))
        if sensitivities and st and n == n_avg:
            est.sample_times = np.concatenate([a[keep] for a in st])
            est.sample_states = np.concatenate([a[keep] for a in sy])
            est.sample_jacobians = np.concatenate([a[keep] for a in sj])
        out.append(est)
    return out


def linear_averaged_gains(model: ModelSpec, periods: int = 4) -> np.ndarray:
    """Per-mode gain ``c_k``: time mean of the periodic solution of ``y' = -a_k(t) y + 1``.

    For the ``linear`` catalog model ``a_k(t) = gamma_2(t) alpha_k + alpha + 1``
    and the averaged drift is ``B(x)_k = slow_coupling * fast_coupling * c_k x_k``.
    """
    op = model.fast_operator
    P = op.period or 1.0
    lam = model.basis.eigenvalues
    out = np.empty(len(lam))
    for k, ak in enumerate(lam):
        def rhs(t, y, ak=ak):
            return -(float(op.gamma(t)) * ak + model.alpha + 1.0) * y + 1.0
        y0 = 1.0 / (op.gamma_mean() * ak + model.alpha + 1.0)
        sol = integrate.solve_ivp(rhs, (0.0, periods * P), [y0], method="DOP853",
                                  rtol=1e-11, atol=1e-14, dense_output=True)
        val, _ = integrate.quad(lambda t: float(sol.sol(t)[0]), (periods - 1) * P,
                                periods * P, epsabs=1e-14, epsrel=1e-11, limit=200)
        out[k] = val / P
    return out


def linear_averaged_drift(model: ModelSpec):
    """Exact averaged drift of the ``linear`` catalog model as a batch map."""
    if model.name != "linear":
        raise ValueError("closed-form averaged drift only exists for the linear model")
    cs = float(model.knobs.get("slow_coupling", 1.0))
    cf = float(model.knobs.get("fast_coupling", 1.0))
    gain = cs * cf * linear_averaged_gains(model)

    def batch(X):
        return np.asarray(X) * gain

    def single(f: Field) -> Field:
        return Field(f.coefficients * gain, f.basis)

    single.batch = batch
    single.gain = gain
    return single


# ----------------------------------------------------------------------------
# cache

def _key(coeffs, q, modes=8):
    return tuple(int(v) for v in np.round(np.asarray(coeffs[:modes]) / q))


class AveragedDriftCache:
    """Averaged-drift estimates keyed by slow state.

    A query is a hit when a stored state lies within ``tolerance`` of it in the
    nodal sup-norm.  Misses run :func:`averaged_drift` at the queried state;
    the noise of an entry is derived from its quantized key.  Insertions are
    serialized by a lock.
    """

    def __init__(self, model: ModelSpec, manifest: SeedManifest, q: float = 0.05,
                 T_avg: float = 20.0, M_ens: int = 64, burn_in: float = 0.5,
                 sensitivities: bool = False, radius: float = 50.0, key_modes: int = 8,
                 dt: Optional[float] = None, n_samples: int = 512):
        if not q > 0:
            raise ValueError("quantization q must be positive")
        self.model = model
        self.manifest = manifest
        self.q = float(q)
        self.T_avg = float(T_avg)
        self.M_ens = int(M_ens)
        self.burn_in = float(burn_in)
        self.sensitivities = bool(sensitivities)
        self.radius = float(radius)
        self.key_modes = int(key_modes)
        self.dt = dt
        self.n_samples = int(n_samples)
        self.entries: List[DriftEstimate] = []
        self.keys: List[tuple] = []
        self._nodal = np.zeros((0, model.basis.node_count))
        self._tree = None
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self):
        return len(self.entries)

    @property
    def unreliable(self):
        return any(e.unreliable for e in self.entries)

    def key(self, coeffs):
        return _key(coeffs, self.q, self.key_modes)

    def _lookup(self, nodal, tolerance):
        if self._tree is None:
            if not self.entries:
                return np.full(len(nodal), -1)
            self._tree = cKDTree(self._nodal)
        d, i = self._tree.query(nodal, k=1, p=np.inf)
        return np.where(d <= tolerance, i, -1)

    def _compute(self, x):
        key = self.key(x)
        return averaged_drift(self.model, x, self.T_avg, self.M_ens, self.burn_in,
                              self.manifest, dt=self.dt, radius=self.radius,
                              tag=("cache",) + key, sensitivities=self.sensitivities,
                              n_samples=self.n_samples), key

    def _insert(self, est, key):
        with self._lock:
            self.entries.append(est)
            self.keys.append(key)
            self._nodal = np.vstack([self._nodal, self.model.basis.to_nodal(est.x)])
            self._tree = None
            return len(self.entries) - 1

    def locate(self, X, tolerance=None):
        """Entry index for every row of ``X`` (coefficients), filling misses in row order."""
        tol = self.q if tolerance is None else float(tolerance)
        if tol < self.q:
            raise ValueError("tolerance must be >= the cache quantization q")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        nodal = self.model.basis.to_nodal(X)
        idx = self._lookup(nodal, tol)
        self.hits += int(np.sum(idx >= 0))
        while np.any(idx < 0):
            i = int(np.flatnonzero(idx < 0)[0])
            est, key = self._compute(X[i])
            self.misses += 1
            j = self._insert(est, key)
            miss = idx < 0
            d = np.max(np.abs(nodal[miss] - self._nodal[j]), axis=1)
            sub = np.flatnonzero(miss)[d <= tol]
            idx[sub] = j
            self.hits += max(0, len(sub) - 1)
        return idx

    def batch_drift(self, X, tolerance=None, corrected=True):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        idx = self.locate(X, tolerance)
        out = np.empty_like(X)
        for j in np.unique(idx):
            rows = idx == j
            e = self.entries[j]
            out[rows] = e.corrected(self.model, X[rows]) if corrected else e.drift.coefficients
        return out

    def as_drift(self, tolerance=None, corrected=True):
        """Callable ``Field -> Field`` (with a ``batch`` attribute) for the averaged solver."""
        basis = self.model.basis

        def single(f: Field) -> Field:
            return Field(self.batch_drift(f.coefficients[None], tolerance, corrected)[0], basis)

        single.batch = lambda X: self.batch_drift(X, tolerance, corrected)
        return single

    def to_dict(self):
        return {"q": self.q, "T_avg": self.T_avg, "M_ens": self.M_ens,
                "burn_in": self.burn_in, "sensitivities": self.sensitivities,
                "key_modes": self.key_modes, "manifest": self.manifest.to_dict(),
                "entries": [dict(e.to_dict(), key=list(k))
                            for e, k in zip(self.entries, self.keys)]}

    @classmethod
    def from_dict(cls, model, d):
        cache = cls(model, SeedManifest(d["manifest"]["master_seed"]), d["q"], d["T_avg"],
                    d["M_ens"], d["burn_in"], d["sensitivities"], key_modes=d["key_modes"])
        basis = model.basis
        for e in d["entries"]:
            est = DriftEstimate(np.array(e["x"]), Field(e["drift"], basis),
                                Field(e["stderr"], basis), np.array(e["nodal_stderr"]),
                                e["n_used"], e["n_dropped"], e["T_avg"], e["burn_in"],
                                e["unreliable"])
            cache._insert(est, tuple(e["key"]))
        return cache


def averaged_drift_cached(cache: AveragedDriftCache, model: ModelSpec, x, tolerance: float,
                          manifest: SeedManifest) -> Field:
    """Cached averaged drift: the stored entry within ``tolerance`` of ``x`` (or a new one)."""
    if model is not cache.model or manifest.master_seed != cache.manifest.master_seed:
        raise ValueError("cache was built for a different model or manifest")
    j = int(cache.locate(_coeffs(x, model.basis)[None], tolerance)[0])
    return cache.entries[j].drift


# ----------------------------------------------------------------------------
# Khasminskii windows

def khasminskii_delta(epsilon: float, kappa: float = 0.5) -> float:
    """``delta = eps ln(eps^-kappa) = kappa eps ln(1/eps)``."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1) (log(1/eps) must be positive)")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    return float(epsilon * kappa * math.log(1.0 / epsilon))


@dataclass
class KhasminskiiSchedule:
    """Window partition of ``[0, T]``; window length rounded to whole macro steps."""

    epsilon: float
    kappa: float
    T: float
    h: float

    def __post_init__(self):
        self.delta = khasminskii_delta(self.epsilon, self.kappa)
        self.steps_per_window = max(1, int(round(self.delta / self.h)))
        self.window = self.steps_per_window * self.h
        self.n_windows = max(1, int(math.floor(self.T / self.window + 1e-9)))

    def window_of_step(self, n: int) -> int:
        return min(n // self.steps_per_window, self.n_windows - 1)

    @property
    def restart_steps(self):
        return [k * self.steps_per_window for k in range(self.n_windows)]

    def to_dict(self):
        return {"epsilon": self.epsilon, "kappa": self.kappa, "delta": self.delta,
                "window": self.window, "steps_per_window": self.steps_per_window,
                "n_windows": self.n_windows}


def schedule_trend_ok(eps_grid: Sequence[float], kappa: float = 0.5) -> bool:
    """``delta`` decreasing and ``delta / eps`` increasing along a decreasing grid."""
    eps = sorted(eps_grid, reverse=True)
    d = [khasminskii_delta(e, kappa) for e in eps]
    r = [di / e for di, e in zip(d, eps)]
    return all(a > b for a, b in zip(d, d[1:])) and all(a < b for a, b in zip(r, r[1:]))


def auxiliary_fast_ensemble(model: ModelSpec, slow_states, fast_states, epsilon: float,
                            schedule: KhasminskiiSchedule, manifest: SeedManifest,
                            config: SolverConfig, paths, eps_tag=None):
    """Auxiliary fast motion for a batch shadowing recorded coupled paths.

    ``slow_states``/``fast_states`` are ``(P, n_macro + 1, N)`` arrays recorded
    at every macro step (record_stride 1).  Returns ``(states, stopping_times)``.
    """
    n_macro = config.n_macro
    if config.record_stride != 1 or slow_states.shape[1] != n_macro + 1:
        raise ValueError("auxiliary motion needs the coupled record at every macro step")
    if abs(schedule.h - config.h) > 1e-15:
        raise ValueError("schedule and solver use different macro steps")
    P, _, N = slow_states.shape
    win = np.array([schedule.window_of_step(n) for n in range(n_macro)])
    starts = win * schedule.steps_per_window
    inputs = slow_states[:, starts]
    inputs = np.concatenate([inputs, inputs[:, -1:]], axis=1)
    restarts = np.array(fast_states)
    return fast_window_ensemble(model, inputs, restarts, schedule.restart_steps, epsilon,
                                config, manifest, paths, eps_tag)


def auxiliary_fast(model: ModelSpec, slow_snapshots, epsilon: float,
                   schedule: KhasminskiiSchedule, manifest: SeedManifest,
                   fast_snapshots, config: SolverConfig, path_index: int = 0,
                   eps_tag=None) -> TrajectoryRecord:
    """Auxiliary fast motion of one path.

    ``slow_snapshots`` is a sequence of ``(k, u(k delta))`` and
    ``fast_snapshots`` of ``(k, v(k delta))``, one per window.
    """
    basis = model.basis
    slow = sorted(slow_snapshots, key=lambda kv: kv[0])
    fast = sorted(fast_snapshots, key=lambda kv: kv[0])
    for snaps in (slow, fast):
        if [k for k, _ in snaps] != list(range(schedule.n_windows)):
            raise ValueError(f"window/snapshot mismatch: need windows 0..{schedule.n_windows - 1}")
    n_macro = config.n_macro
    N = basis.mode_count
    inputs = np.empty((1, n_macro + 1, N))
    restarts = np.full((1, n_macro + 1, N), np.nan)
    for n in range(n_macro + 1):
        inputs[0, n] = _coeffs(slow[schedule.window_of_step(min(n, n_macro - 1))][1], basis)
    for k, v in fast:
        restarts[0, k * schedule.steps_per_window] = _coeffs(v, basis)
    states, tau = fast_window_ensemble(model, inputs, restarts, schedule.restart_steps, epsilon,
                                       config, manifest, [path_index], eps_tag)
    times = np.arange(n_macro + 1) * config.h
    keep = times < tau[0]
    return TrajectoryRecord(times[keep], states[0, keep], basis, float(tau[0]), False,
                            {"master_seed": manifest.master_seed, "path_index": path_index,
                             "delta": schedule.window})
