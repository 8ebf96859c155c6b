"""Truncated Q-Wiener increments, finite-activity Poisson jumps, seed streams."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .spectral import Field, NoiseSpectrum, SpectralBasis


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class JumpSpec:
    """Finite Levy measure ``nu = total_rate * law`` on a scalar mark space.

    ``law`` is ``("uniform", a, b)`` or ``("atoms", values, probabilities)``.
    """

    total_rate: float = 1.0
    law: Tuple = ("uniform", -1.0, 1.0)

    def __post_init__(self):
        if not (self.total_rate > 0 and np.isfinite(self.total_rate)):
            raise ValueError("total_rate must be finite and positive")
        kind = self.law[0]
        if kind == "uniform":
            _, a, b = self.law
            if not b > a:
                raise ValueError("uniform mark law needs a < b")
            object.__setattr__(self, "law", ("uniform", float(a), float(b)))
        elif kind == "atoms":
            _, values, probs = self.law
            values = tuple(float(v) for v in values)
            probs = np.asarray(probs, dtype=float)
            if len(values) != len(probs) or np.any(probs < 0) or abs(probs.sum() - 1) > 1e-12:
                raise ValueError("atoms need matching values and probabilities summing to 1")
            object.__setattr__(self, "law", ("atoms", values, tuple(probs.tolist())))
        else:
            raise ValueError(f"unknown mark law {kind!r}")

    @property
    def mark_range(self):
        if self.law[0] == "uniform":
            return self.law[1], self.law[2]
        return min(self.law[1]), max(self.law[1])

    @property
    def mark_moments(self):
        """``(int z nu(dz), int z^2 nu(dz))``."""
        if self.law[0] == "uniform":
            _, a, b = self.law
            m1 = 0.5 * (a + b)
            m2 = (a * a + a * b + b * b) / 3.0
        else:
            v = np.asarray(self.law[1])
            p = np.asarray(self.law[2])
            m1 = float(np.sum(p * v))
            m2 = float(np.sum(p * v * v))
        return self.total_rate * m1, self.total_rate * m2

    def sample_marks(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.law[0] == "uniform":
            return rng.uniform(self.law[1], self.law[2], size=n)
        return rng.choice(np.asarray(self.law[1]), size=n, p=np.asarray(self.law[2]))

    def quadrature(self, order: int = 16):
        """Nodes and weights with ``sum w h(z) ~ int h(z) nu(dz)``."""
        if self.law[0] == "atoms":
            return np.asarray(self.law[1]), self.total_rate * np.asarray(self.law[2])
        _, a, b = self.law
        x, w = np.polynomial.legendre.leggauss(order)
        z = 0.5 * (b - a) * x + 0.5 * (a + b)
        return z, self.total_rate * 0.5 * w


@dataclass(frozen=True)
class JumpEvents:
    times: np.ndarray
    marks: np.ndarray
    interval: Tuple[float, float] = (0.0, 0.0)

    def __len__(self):
        return len(self.times)


def _tag_code(part) -> int:
    if isinstance(part, (int, np.integer)):
        v = int(part)
        return 2 * v if v >= 0 else -2 * v - 1
    return zlib.crc32(str(part).encode("utf-8"))


@dataclass(frozen=True)
class SeedManifest:
    """Counter-based substreams: ``(master_seed, path_index, tag...)`` -> Philox.

    Derivation is a pure function of its arguments, so any path can be
    regenerated in isolation and ensembles can be split across workers.
    """

    master_seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    def seed_sequence(self, path_index: int, *tag) -> np.random.SeedSequence:
        key = tuple(_tag_code(p) for p in tag) + (int(path_index),)
        return np.random.SeedSequence(int(self.master_seed), spawn_key=key)

    def stream(self, path_index: int, *tag) -> np.random.Generator:
        ss = self.seed_sequence(path_index, *tag)
        return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))

    def to_dict(self):
        return {"master_seed": int(self.master_seed)}


def wiener_increment(spectrum: NoiseSpectrum, basis: SpectralBasis, dt: float,
                     stream: np.random.Generator) -> Field:
    """``sum_k lambda_k sqrt(dt) xi_k e_k`` with standard normal ``xi_k``."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    lam = spectrum.padded(basis.mode_count)
    xi = np.zeros(basis.mode_count)
    xi[: spectrum.size] = stream.standard_normal(spectrum.size)
    return Field(lam * np.sqrt(dt) * xi, basis)


def sample_jumps(jump_spec: JumpSpec, interval, rate_scale: float,
                 stream: np.random.Generator) -> JumpEvents:
    """Homogeneous Poisson events on ``[s, t]`` at intensity ``total_rate * rate_scale``."""
    s, t = map(float, interval)
    if s > t:
        raise ValueError("interval must satisfy s <= t")
    if not rate_scale > 0:
        raise ValueError("rate_scale must be positive")
    rate = jump_spec.total_rate * rate_scale
    length = t - s
    times = []
    total = 0.0
    chunk = max(16, int(rate * length * 1.2) + 16)
    while True:
        gaps = stream.exponential(1.0 / rate, size=chunk)
        cum = total + np.cumsum(gaps)
        keep = cum[cum <= length]
        times.append(keep)
        if keep.size < chunk:
            break
        total = cum[-1]
    times = s + np.concatenate(times)
    marks = jump_spec.sample_marks(stream, times.size)
    return JumpEvents(times, marks, (s, t))


def jump_integral_nodal(jump_spec: JumpSpec, g, affine: bool, t: float, xi, x_nodal,
                        tol: float = 1e-9):
    """``int_Z g(t, xi, x(xi), z) nu(dz)`` at every node; broadcasts over rows."""
    x_nodal = np.asarray(x_nodal, dtype=float)
    if affine:
        m1, _ = jump_spec.mark_moments
        g0 = g(t, xi, x_nodal, 0.0)
        g1 = g(t, xi, x_nodal, 1.0)
        return np.broadcast_to(jump_spec.total_rate * g0 + (g1 - g0) * m1, x_nodal.shape)
    if jump_spec.law[0] == "atoms":
        z, w = jump_spec.quadrature()
        return sum(wi * np.broadcast_to(g(t, xi, x_nodal, zi), x_nodal.shape)
                   for zi, wi in zip(z, w))
    estimates = []
    for order in (16, 32):
        z, w = jump_spec.quadrature(order)
        estimates.append(sum(wi * np.broadcast_to(g(t, xi, x_nodal, zi), x_nodal.shape)
                             for zi, wi in zip(z, w)))
    scale = 1.0 + np.max(np.abs(estimates[1]), initial=0.0)
    if not np.max(np.abs(estimates[1] - estimates[0]), initial=0.0) <= tol * scale:
        raise QuadratureError("jump coefficient is not integrable to tolerance against nu")
    return estimates[1]


def compensator_drift(jump_spec: JumpSpec, g, state: Field, t: float,
                      rate_scale: float = 1.0) -> Field:
    """``-rate_scale * int_Z g(t, ., state(.), z) nu(dz)`` as a field.

    ``g`` is a NoiseCoeffSpec (its ``g`` and ``jump_affine`` attributes are
    used) or any callable ``g(t, xi, x, z)``; a bare callable goes through
    quadrature.
    """
    fn = getattr(g, "g", g)
    affine = bool(getattr(g, "jump_affine", False))
    basis = state.basis
    vals = jump_integral_nodal(jump_spec, fn, affine, t, basis.nodes, state.nodal)
    return Field(basis.to_coefficients(-rate_scale * vals), basis)


class JumpSchedule:
    """Jump events of a batch of paths binned into the steps of a uniform grid.

    Events in step ``j`` (times in ``[t0 + j dt, t0 + (j+1) dt)``) are applied at
    the end of that step.
    """

    def __init__(self, events: Sequence[JumpEvents], t0: float, dt: float, n_steps: int):
        rows, steps, marks = [], [], []
        for r, ev in enumerate(events):
            if len(ev) == 0:
                continue
            j = np.floor((ev.times - t0) / dt).astype(np.int64)
            j = np.clip(j, 0, n_steps - 1)
            rows.append(np.full(j.size, r))
            steps.append(j)
            marks.append(ev.marks)
        if rows:
            rows = np.concatenate(rows)
            steps = np.concatenate(steps)
            marks = np.concatenate(marks)
            order = np.lexsort((rows, steps))
            rows, steps, marks = rows[order], steps[order], marks[order]
        else:
            rows = np.zeros(0, dtype=np.int64)
            steps = np.zeros(0, dtype=np.int64)
            marks = np.zeros(0)
        self.rows, self.marks = rows, marks
        self.bounds = np.searchsorted(steps, np.arange(n_steps + 1))
        self.n_steps = n_steps
        self.count = rows.size

    def at(self, j: int):
        a, b = self.bounds[j], self.bounds[j + 1]
        return self.rows[a:b], self.marks[a:b]

    @classmethod
    def empty(cls, n_steps):
        return cls([], 0.0, 1.0, n_steps)


@dataclass
class NoisePath:
    """Reproducible noise for one path: a Wiener stream and a jump realization.

    Normals are drawn on demand in step order, so two consumers walking the
    same grid see identical increments.
    """

    manifest: SeedManifest
    path_index: int
    tag: Tuple = ()
    _wiener: Optional[np.random.Generator] = field(default=None, repr=False)

    def wiener_stream(self) -> np.random.Generator:
        if self._wiener is None:
            self._wiener = self.manifest.stream(self.path_index, *self.tag, "wiener")
        return self._wiener

    def draw(self, shape) -> np.ndarray:
        return self.wiener_stream().standard_normal(shape)

    def jumps(self, jump_spec: JumpSpec, interval, rate_scale: float) -> JumpEvents:
        rng = self.manifest.stream(self.path_index, *self.tag, "jump")
        return sample_jumps(jump_spec, interval, rate_scale, rng)
