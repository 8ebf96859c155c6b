"""Mild-solution steppers: coupled slow-fast system, frozen fast equation, averaged equation.

All three use stochastic exponential Euler on spectral coefficients: the
diagonal linear part is applied exactly, drift is weighted with ``phi1``,
Wiener terms with the rms of the evolution over the step, and jumps (summed
over a step) are added at the end of the step together with their
compensator.  Paths are integrated as a batch; a path that leaves the
truncation ball is frozen and its later records are NaN.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .evolution import EvolutionStep, first_order_drift_nodal
from .model import ModelSpec, _zero_f, _zero_g
from .noise import JumpSchedule, SeedManifest, jump_integral_nodal, sample_jumps
from .spectral import BlowUpError, Field

INF = float("inf")


@dataclass
class SolverConfig:
    """Time grid and guards.

    ``fast_dt`` is the target fast-time step (in units of ``eps``); the number
    of micro-substeps per macro step is ``ceil(h / (eps * fast_dt))`` unless
    ``micro_substeps`` forces a larger value.
    """

    h: float = 0.01
    T: float = 1.0
    truncation_radius: float = 50.0
    record_stride: int = 1
    fast_dt: Optional[float] = None
    micro_substeps: Optional[int] = None
    fast_clock: str = "fast"

    def __post_init__(self):
        if self.fast_clock not in ("fast", "real"):
            raise ValueError("fast_clock must be 'fast' or 'real'")
        if not self.h > 0:
            raise ValueError("macro step h must be positive")
        if not self.T > 0 or self.h > self.T * (1 + 1e-12):
            raise ValueError("need 0 < h <= T")
        if not self.truncation_radius > 0:
            raise ValueError("truncation radius must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        n = self.T / self.h
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"T={self.T} is not an integer multiple of h={self.h}")

    @property
    def n_macro(self) -> int:
        return int(round(self.T / self.h))

    def clock(self, eps: float) -> float:
        """Time-argument scale of the fast coefficients (``t / eps`` on the fast clock)."""
        return 1.0 / eps if self.fast_clock == "fast" else 1.0

    def substeps(self, eps: float, model: ModelSpec) -> int:
        target = self.fast_dt or model.fast_time_step()
        need = max(1, math.ceil(self.h / (eps * target) - 1e-9))
        if self.micro_substeps is not None:
            return max(int(self.micro_substeps), need)
        return need

    def to_dict(self):
        return {"h": self.h, "T": self.T, "truncation_radius": self.truncation_radius,
                "record_stride": self.record_stride, "fast_dt": self.fast_dt,
                "micro_substeps": self.micro_substeps, "fast_clock": self.fast_clock}


@dataclass
class TrajectoryRecord:
    """Recorded states of one path.  States after the stopping time are absent."""

    times: np.ndarray
    states: np.ndarray
    basis: object = field(repr=False)
    stopping_time: float = INF
    blown_up: bool = False
    seeds: Dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def field(self, i) -> Field:
        return Field(self.states[i], self.basis)

    @property
    def final(self) -> Field:
        return self.field(-1)

    def nodal(self):
        return self.basis.to_nodal(self.states)

    def sup_norms(self):
        return np.max(np.abs(self.nodal()), axis=-1)


@dataclass
class EnsembleRecord:
    """Batch of trajectories on a shared grid: ``states[path, record, mode]``."""

    times: np.ndarray
    states: np.ndarray
    basis: object = field(repr=False)
    stopping_times: np.ndarray = None
    blown_up: np.ndarray = None
    path_indices: np.ndarray = None
    seeds: Dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.states.shape[0]

    def nodal(self):
        return self.basis.to_nodal(self.states)

    def sup_norms(self):
        """``sup over nodes`` per path and record (NaN after stopping)."""
        return np.max(np.abs(self.nodal()), axis=-1)

    @property
    def stopped(self):
        return np.isfinite(self.stopping_times)

    def path(self, i) -> TrajectoryRecord:
        keep = self.times < self.stopping_times[i]
        seeds = dict(self.seeds, path_index=int(self.path_indices[i]))
        return TrajectoryRecord(self.times[keep], self.states[i, keep], self.basis,
                                float(self.stopping_times[i]), bool(self.blown_up[i]), seeds)


@dataclass
class CoupledEnsemble:
    slow: EnsembleRecord
    fast: EnsembleRecord
    epsilon: float
    micro_substeps: int

    @property
    def stopped(self):
        return self.slow.stopped


def _as_rows(x, basis, P):
    if isinstance(x, Field):
        x = x.coefficients
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = np.broadcast_to(x, (P, basis.mode_count))
    if x.shape != (P, basis.mode_count):
        raise ValueError(f"initial data shape {x.shape} does not match {P} paths x "
                         f"{basis.mode_count} modes")
    return np.array(x)


def _clip(nodal, radius):
    # identity (bitwise) wherever |value| <= radius
    return np.clip(nodal, -radius, radius)


def _has_wiener(nspec, spectrum):
    return nspec.f is not _zero_f and not spectrum.is_zero()


def _has_jumps(nspec):
    return nspec.g is not _zero_g


def _eps_tag(eps):
    return f"eps={float(eps)!r}"


class _Component:
    """Per-step kernel of one equation (slow: eps=1, beta=0; fast: beta=alpha)."""

    def __init__(self, model: ModelSpec, which: str, eps: float, radius: float,
                 clock: float = 1.0):
        self.model = model
        self.basis = basis = model.basis
        self.eps = float(eps)
        self.radius = float(radius)
        self.clock = float(clock)
        if which == "slow":
            op, spectrum, nspec, shift = (model.slow_operator, model.wiener_slow,
                                          model.slow_noise, 0.0)
            self.truncate_noise = True
        else:
            op, spectrum, nspec, shift = (model.fast_operator, model.wiener_fast,
                                          model.fast_noise, model.alpha)
            self.truncate_noise = False
        self.op = op
        self.nspec = nspec
        self.evo = EvolutionStep(op, basis, shift=shift, epsilon=eps, clock=self.clock)
        self.lam = spectrum.padded(basis.mode_count)
        self.n_w = spectrum.size
        self.wiener = _has_wiener(nspec, spectrum)
        self.jumps = _has_jumps(nspec)
        self.E_w = basis.eigenfunction_values[: self.n_w]
        self._factors = {}
        self._zero_state = np.zeros(basis.node_count)

    def factors(self, t0, t1):
        key = (t0, t1)
        f = self._factors.get(key)
        if f is None:
            f = self.evo.factors(t0, t1)
            if len(self._factors) < 200_000:
                self._factors[key] = f
        return f

    def grid_factors(self, t0, dt, K):
        times = t0 + np.arange(K + 1) * dt
        return self.evo.grid_factors(times)

    def advance(self, C, nodal, drift_nodal, t0, t1, normals=None, jump_rows=None,
                jump_marks=None, fac=None):
        """One exponential-Euler step; ``drift_nodal`` excludes the first-order term."""
        basis, eps = self.basis, self.eps
        dt = t1 - t0
        mult, phi, nw = self.factors(t0, t1) if fac is None else fac
        tc = t0 * self.clock
        lo = first_order_drift_nodal(self.op, basis, C, tc)
        if lo is not None:
            drift_nodal = drift_nodal + lo
        xi = basis.nodes
        arg = _clip(nodal, self.radius) if self.truncate_noise else nodal
        if self.jumps:
            at = self._zero_state if self.nspec.state_independent else arg
            comp = jump_integral_nodal(self.model.jump_spec, self.nspec.g, self.nspec.jump_affine,
                                       tc, xi, at)
            # compensator of the 1/eps-rate jump measure, applied with the jumps
            pending = -(dt / eps) * comp
            if jump_rows is not None and jump_rows.size:
                vals = np.broadcast_to(
                    self.nspec.g(tc, xi, arg[jump_rows], jump_marks[:, None]),
                    (jump_rows.size, basis.node_count))
                pending = np.array(np.broadcast_to(pending, nodal.shape))
                np.add.at(pending, jump_rows, vals)
        else:
            pending = None
        if pending is not None and pending.shape != nodal.shape:
            pending = np.broadcast_to(pending, nodal.shape)
        out = mult * C + (dt / eps) * phi * basis.to_coefficients(drift_nodal)
        if self.wiener and normals is not None:
            dW = (self.lam[: self.n_w] * math.sqrt(dt) * normals) @ self.E_w
            fv = self.nspec.f(tc, xi, self._zero_state if self.nspec.state_independent else arg)
            out = out + (nw / math.sqrt(eps)) * basis.to_coefficients(fv * dW)
        if pending is not None:
            out = out + basis.to_coefficients(pending)
        return out


def _stop_check(nodal, radius):
    s = np.max(np.abs(nodal), axis=-1)
    breach = ~(s < radius)
    return breach, ~np.isfinite(s)


def _draw(streams, shape):
    return np.stack([s.standard_normal(shape) for s in streams])


def _jump_schedule(manifest, path_indices, tag, jump_spec, T, rate_scale, dt, n_steps):
    events = [sample_jumps(jump_spec, (0.0, T), rate_scale,
                           manifest.stream(int(p), *tag, "jump")) for p in path_indices]
    return JumpSchedule(events, 0.0, dt, n_steps)


def _path_array(paths):
    if isinstance(paths, (int, np.integer)):
        return np.arange(int(paths))
    return np.asarray(list(paths), dtype=np.int64)


class _SlowNoise:
    """Slow-component noise for a batch of paths: shared by coupled and averaged runs."""

    def __init__(self, model, config, manifest, path_indices):
        comp = _Component(model, "slow", 1.0, config.truncation_radius)
        n = config.n_macro
        P = len(path_indices)
        if comp.wiener:
            self.normals = _draw([manifest.stream(int(p), "slow", "wiener") for p in path_indices],
                                 (n, comp.n_w))
        else:
            self.normals = None
        if comp.jumps:
            self.jumps = _jump_schedule(manifest, path_indices, ("slow",), model.jump_spec,
                                        config.T, 1.0, config.h, n)
        else:
            self.jumps = JumpSchedule.empty(n)
        self.P = P

    def at(self, n):
        z = self.normals[:, n] if self.normals is not None else None
        rows, marks = self.jumps.at(n)
        return z, rows, marks


def solve_coupled_ensemble(model: ModelSpec, x0, y0, epsilon: float, config: SolverConfig,
                           manifest: SeedManifest, paths=1, eps_tag=None,
                           slow_noise: Optional[_SlowNoise] = None) -> CoupledEnsemble:
    """Integrate the slow-fast system for a batch of paths.

    Per macro step the fast component runs ``K`` micro-substeps with the slow
    state frozen at the macro-step start; the slow drift is the average of
    ``b1(t_j, u_n, v_j)`` over the micro-substep starts.  On the fast clock the
    time arguments of the fast coefficients and of ``b1`` are ``t / eps``.
    """
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    basis = model.basis
    path_indices = _path_array(paths)
    P = len(path_indices)
    U = _as_rows(x0, basis, P)
    V = _as_rows(y0, basis, P)
    n_rad = config.truncation_radius
    Un, Vn = basis.to_nodal(U), basis.to_nodal(V)
    if np.any(np.max(np.abs(Un), axis=1) >= n_rad) or np.any(np.max(np.abs(Vn), axis=1) >= n_rad):
        raise ValueError("initial data must have sup-norm below the truncation radius")

    K = config.substeps(epsilon, model)
    h = config.h
    dtm = h / K
    n_macro = config.n_macro
    tag = ("fast", eps_tag or _eps_tag(epsilon))
    slow = _Component(model, "slow", 1.0, n_rad)
    clk = config.clock(epsilon)
    fast = _Component(model, "fast", epsilon, n_rad, clk)
    if slow_noise is None:
        slow_noise = _SlowNoise(model, config, manifest, path_indices)
    fast_streams = ([manifest.stream(int(p), *tag, "wiener") for p in path_indices]
                    if fast.wiener else None)
    fast_jumps = (_jump_schedule(manifest, path_indices, tag, model.jump_spec, config.T,
                                 1.0 / epsilon, dtm, n_macro * K)
                  if fast.jumps else JumpSchedule.empty(n_macro * K))
    b1, b2 = model.slow_reaction.b, model.fast_reaction.b
    xi = basis.nodes

    rec = _Recorder(basis, n_macro, config.record_stride, P, 2)
    rec.store(0, 0.0, U, V)
    active = np.ones(P, dtype=bool)
    tau = np.full(P, INF)
    blown = np.zeros(P, dtype=bool)

    for n in range(n_macro):
        t_n = n * h
        Uc = _clip(Un, n_rad)
        acc = np.zeros_like(Un)
        Z = _draw(fast_streams, (K, fast.n_w)) if fast_streams is not None else None
        F = fast.grid_factors(t_n, dtm, K)
        for j in range(K):
            t0 = t_n + j * dtm
            t1 = t_n + (j + 1) * dtm
            Vc = _clip(Vn, n_rad)
            acc += b1(t0 * clk, xi, Uc, Vc)
            rows, marks = fast_jumps.at(n * K + j)
            V_new = fast.advance(V, Vn, b2(t0 * clk, xi, Uc, Vc), t0, t1,
                                 None if Z is None else Z[:, j], rows, marks,
                                 (F[0][j], F[1][j], F[2][j]))
            Vn_new = basis.to_nodal(V_new)
            breach, bad = _stop_check(Vn_new, n_rad)
            hit = breach & active
            if np.any(hit):
                tau[hit] = t1
                blown[hit & bad] = True
                active &= ~hit
            V = np.where(active[:, None], V_new, V)
            Vn = np.where(active[:, None], Vn_new, Vn)
        z, rows, marks = slow_noise.at(n)
        U_new = slow.advance(U, Un, acc / K, t_n, t_n + h, z, rows, marks)
        Un_new = basis.to_nodal(U_new)
        breach, bad = _stop_check(Un_new, n_rad)
        hit = breach & active
        if np.any(hit):
            tau[hit] = t_n + h
            blown[hit & bad] = True
            active &= ~hit
        U = np.where(active[:, None], U_new, U)
        Un = np.where(active[:, None], Un_new, Un)
        rec.maybe_store(n + 1, t_n + h, active, U, V)

    seeds = {"master_seed": manifest.master_seed, "fast_tag": tag[1]}
    times, (Us, Vs) = rec.result()
    return CoupledEnsemble(
        EnsembleRecord(times, Us, basis, tau, blown, path_indices, seeds),
        EnsembleRecord(times, Vs, basis, tau.copy(), blown.copy(), path_indices, seeds),
        float(epsilon), K)


class _Recorder:
    def __init__(self, basis, n_steps, stride, P, n_comp):
        self.idx = list(range(0, n_steps + 1, stride))
        self.pos = {k: i for i, k in enumerate(self.idx)}
        self.times = np.zeros(len(self.idx))
        self.data = [np.full((P, len(self.idx), basis.mode_count), np.nan)
                     for _ in range(n_comp)]

    def store(self, k, t, *arrays):
        i = self.pos[k]
        self.times[i] = t
        for d, a in zip(self.data, arrays):
            d[:, i] = a

    def maybe_store(self, k, t, active, *arrays):
        i = self.pos.get(k)
        if i is None:
            return
        self.times[i] = t
        for d, a in zip(self.data, arrays):
            d[active, i] = a[active]

    def result(self):
        return self.times, self.data


def solve_coupled(model: ModelSpec, x0: Field, y0: Field, epsilon: float,
                  config: SolverConfig, manifest: SeedManifest, path_index: int = 0):
    """Single path of the coupled system -> ``(slow record, fast record)``."""
    ens = solve_coupled_ensemble(model, x0, y0, epsilon, config, manifest, [path_index])
    u, v = ens.slow.path(0), ens.fast.path(0)
    if u.blown_up:
        raise BlowUpError(f"state became non-finite; last valid time < {u.stopping_time}",
                          time=u.stopping_time)
    return u, v


def solve_averaged_ensemble(model: ModelSpec, avg_drift: Callable, x0, config: SolverConfig,
                            manifest: SeedManifest, paths=1,
                            slow_noise: Optional[_SlowNoise] = None) -> EnsembleRecord:
    """Slow stepper with ``avg_drift(coefficients[P, N]) -> coefficients`` as drift.

    The slow noise substreams are the ones used by :func:`solve_coupled_ensemble`
    with the same manifest and path indices.
    """
    basis = model.basis
    path_indices = _path_array(paths)
    P = len(path_indices)
    U = _as_rows(x0, basis, P)
    n_rad = config.truncation_radius
    Un = basis.to_nodal(U)
    if np.any(np.max(np.abs(Un), axis=1) >= n_rad):
        raise ValueError("initial data must have sup-norm below the truncation radius")
    h = config.h
    n_macro = config.n_macro
    slow = _Component(model, "slow", 1.0, n_rad)
    if slow_noise is None:
        slow_noise = _SlowNoise(model, config, manifest, path_indices)
    rec = _Recorder(basis, n_macro, config.record_stride, P, 1)
    rec.store(0, 0.0, U)
    active = np.ones(P, dtype=bool)
    tau = np.full(P, INF)
    blown = np.zeros(P, dtype=bool)
    for n in range(n_macro):
        t_n = n * h
        X = U
        over = np.max(np.abs(Un), axis=1) > n_rad
        if np.any(over):
            # truncated averaged drift: evaluate at the clipped state
            X = np.array(U)
            X[over] = basis.to_coefficients(_clip(Un[over], n_rad))
        D = np.asarray(avg_drift(X), dtype=float)
        z, rows, marks = slow_noise.at(n)
        U_new = slow.advance(U, Un, basis.to_nodal(D), t_n, t_n + h, z, rows, marks)
        Un_new = basis.to_nodal(U_new)
        breach, bad = _stop_check(Un_new, n_rad)
        hit = breach & active
        if np.any(hit):
            tau[hit] = t_n + h
            blown[hit & bad] = True
            active &= ~hit
        U = np.where(active[:, None], U_new, U)
        Un = np.where(active[:, None], Un_new, Un)
        rec.maybe_store(n + 1, t_n + h, active, U)
    times, (Us,) = rec.result()
    return EnsembleRecord(times, Us, basis, tau, blown, path_indices,
                          {"master_seed": manifest.master_seed})


def solve_averaged(model: ModelSpec, avg_drift: Callable, x0: Field, T: float,
                   config: SolverConfig, manifest: SeedManifest, path_index: int = 0):
    """Single path of the averaged equation; ``avg_drift`` maps Field -> Field."""
    if abs(T - config.T) > 1e-12:
        config = dataclasses.replace(config, T=T)
    basis = model.basis

    def batch(X):
        return np.stack([avg_drift(Field(row, basis)).coefficients for row in X])

    rec = solve_averaged_ensemble(model, getattr(avg_drift, "batch", batch), x0, config,
                                  manifest, [path_index]).path(0)
    if rec.blown_up:
        raise BlowUpError("averaged state became non-finite", time=rec.stopping_time)
    return rec


# ----------------------------------------------------------------------------
# frozen fast equation (eps = 1, slow input fixed)

def frozen_fast_ensemble(model: ModelSpec, x_frozen, y0, s: float, T: float, dt: float,
                         manifest: SeedManifest, members, tag=("frozen",), row_member=None,
                         radius: float = 50.0, record_stride: Optional[int] = 1,
                         on_step: Optional[Callable] = None):
    """Batch of frozen fast paths ``v^x(t; s, y)`` on a uniform grid.

    Rows share noise with their member (``row_member[r]``), which gives common
    random numbers for sensitivity estimates.  ``on_step(t, V, Vn, active)`` is
    called after every step.  Returns ``(times, states, stopping_times)``;
    ``states`` is None when ``record_stride`` is None.
    """
    basis = model.basis
    members = _path_array(members)
    if row_member is None:
        row_member = np.arange(len(members))
    row_member = np.asarray(row_member)
    P = len(row_member)
    X = _as_rows(x_frozen, basis, P)
    V = _as_rows(y0, basis, P)
    if T < s:
        raise ValueError("need T >= s")
    n_steps = max(1, int(math.ceil((T - s) / dt - 1e-9)))
    dt = (T - s) / n_steps
    fast = _Component(model, "fast", 1.0, radius)
    Xn = _clip(basis.to_nodal(X), radius)
    Vn = basis.to_nodal(V)
    streams = ([manifest.stream(int(m), *tag, "wiener") for m in members]
               if fast.wiener else None)
    if fast.jumps:
        events = [sample_jumps(model.jump_spec, (s, T), 1.0, manifest.stream(int(m), *tag, "jump"))
                  for m in members]
        sched = JumpSchedule([events[k] for k in row_member], s, dt, n_steps)
    else:
        sched = JumpSchedule.empty(n_steps)
    b2 = model.fast_reaction.b
    xi = basis.nodes
    rec = _Recorder(basis, n_steps, record_stride, P, 1) if record_stride else None
    if rec is not None:
        rec.store(0, s, V)
    active = np.ones(P, dtype=bool)
    tau = np.full(P, INF)
    chunk = 256
    Z = None
    for n in range(n_steps):
        if streams is not None and n % chunk == 0:
            Z = _draw(streams, (min(chunk, n_steps - n), fast.n_w))[row_member]
        t0 = s + n * dt
        t1 = s + (n + 1) * dt
        rows, marks = sched.at(n)
        V_new = fast.advance(V, Vn, b2(t0, xi, Xn, _clip(Vn, radius)), t0, t1,
                             None if Z is None else Z[:, n % chunk], rows, marks)
        Vn_new = basis.to_nodal(V_new)
        breach, _ = _stop_check(Vn_new, radius)
        hit = breach & active
        if np.any(hit):
            tau[hit] = t1
            active &= ~hit
        V = np.where(active[:, None], V_new, V)
        Vn = np.where(active[:, None], Vn_new, Vn)
        if rec is not None:
            rec.maybe_store(n + 1, t1, active, V)
        if on_step is not None:
            on_step(t1, V, Vn, active)
    if rec is None:
        return None, None, tau
    times, (Vs,) = rec.result()
    return times, Vs, tau


def solve_frozen_fast(model: ModelSpec, x_frozen: Field, y0: Field, s: float, T: float,
                      config: SolverConfig, manifest: SeedManifest, path_index: int = 0,
                      dt: Optional[float] = None) -> TrajectoryRecord:
    """Fast equation with the slow input frozen at ``x_frozen``, eps = 1."""
    dt = dt or config.fast_dt or model.fast_time_step()
    times, states, tau = frozen_fast_ensemble(
        model, x_frozen, y0, s, T, dt, manifest, [path_index],
        radius=config.truncation_radius, record_stride=config.record_stride)
    keep = times < tau[0]
    return TrajectoryRecord(times[keep], states[0, keep], model.basis, float(tau[0]),
                            False, {"master_seed": manifest.master_seed,
                                    "path_index": path_index, "tag": "frozen"})


def fast_window_ensemble(model: ModelSpec, slow_inputs, v_restarts, restart_steps, epsilon: float,
                         config: SolverConfig, manifest: SeedManifest, paths, eps_tag=None):
    """Fast component driven by a prescribed slow input, reusing the coupled noise.

    ``slow_inputs[p, n]`` (coefficients) is the slow state seen during macro
    step ``n``; at every macro index in ``restart_steps`` the fast state is
    reset to ``v_restarts[p, n]``.  With the true slow trajectory as input and
    no restarts this reproduces the coupled fast component bit for bit.
    """
    basis = model.basis
    path_indices = _path_array(paths)
    P = len(path_indices)
    K = config.substeps(epsilon, model)
    h = config.h
    dtm = h / K
    n_macro = config.n_macro
    n_rad = config.truncation_radius
    tag = ("fast", eps_tag or _eps_tag(epsilon))
    clk = config.clock(epsilon)
    fast = _Component(model, "fast", epsilon, n_rad, clk)
    fast_streams = ([manifest.stream(int(p), *tag, "wiener") for p in path_indices]
                    if fast.wiener else None)
    fast_jumps = (_jump_schedule(manifest, path_indices, tag, model.jump_spec, config.T,
                                 1.0 / epsilon, dtm, n_macro * K)
                  if fast.jumps else JumpSchedule.empty(n_macro * K))
    b1, b2 = model.slow_reaction.b, model.fast_reaction.b
    xi = basis.nodes
    restart = set(int(k) for k in restart_steps)
    out = np.full((P, n_macro + 1, basis.mode_count), np.nan)
    V = np.array(v_restarts[:, 0])
    Vn = basis.to_nodal(V)
    out[:, 0] = V
    active = np.ones(P, dtype=bool)
    tau = np.full(P, INF)
    for n in range(n_macro):
        t_n = n * h
        if n in restart and n > 0:
            fresh = np.array(v_restarts[:, n])
            ok = np.all(np.isfinite(fresh), axis=1)
            V = np.where(ok[:, None], fresh, V)
            Vn = basis.to_nodal(V)
        Uc = _clip(basis.to_nodal(np.nan_to_num(slow_inputs[:, n])), n_rad)
        Z = _draw(fast_streams, (K, fast.n_w)) if fast_streams is not None else None
        F = fast.grid_factors(t_n, dtm, K)
        for j in range(K):
            t0 = t_n + j * dtm
            t1 = t_n + (j + 1) * dtm
            Vc = _clip(Vn, n_rad)
            rows, marks = fast_jumps.at(n * K + j)
            V_new = fast.advance(V, Vn, b2(t0 * clk, xi, Uc, Vc), t0, t1,
                                 None if Z is None else Z[:, j], rows, marks,
                                 (F[0][j], F[1][j], F[2][j]))
            Vn_new = basis.to_nodal(V_new)
            breach, _ = _stop_check(Vn_new, n_rad)
            hit = breach & active
            if np.any(hit):
                tau[hit] = t1
                active &= ~hit
            V = np.where(active[:, None], V_new, V)
            Vn = np.where(active[:, None], Vn_new, Vn)
        out[active, n + 1] = V[active]
    return out, tau
