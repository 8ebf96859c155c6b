"""Linear evolution families ``U_{beta,eps}(t, s)`` acting diagonally on modes.

Mode ``k`` is multiplied by ``exp(-(Gamma(s, t) alpha_k + beta (t - s)) / eps)``
where ``Gamma(s, t)`` integrates the time modulation.  The first-order part of
the operator is not diagonal in the sine basis and is left to the stepper as an
explicit term.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .model import OperatorSpec, gamma_integral
from .spectral import Field, SpectralBasis

_KEY_DIGITS = 12


def _phi1(a):
    """``(1 - exp(-a)) / a`` with the removable singularity at 0."""
    a = np.asarray(a, dtype=float)
    small = a < 1e-8
    safe = np.where(small, 1.0, a)
    return np.where(small, 1.0 - 0.5 * a, -np.expm1(-safe) / safe)


def _noise_weight(a):
    """``sqrt((1 - exp(-2a)) / (2a))``: rms of ``exp(-a (1 - r))`` over ``r in [0, 1]``."""
    return np.sqrt(_phi1(2.0 * np.asarray(a, dtype=float)))


@dataclass
class EvolutionStep:
    """Evolution family of one operator with shift ``beta`` and time scale ``eps``."""

    opspec: OperatorSpec
    basis: SpectralBasis
    shift: float = 0.0
    epsilon: float = 1.0
    use_primitive: bool = True
    # time-argument scale: the modulation is gamma(clock * t)
    clock: float = 1.0
    _cache: Dict[Tuple[float, float], float] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.shift < 0:
            raise ValueError("shift beta must be >= 0")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if not self.clock > 0:
            raise ValueError("clock must be positive")

    def gamma_integral(self, s: float, t: float) -> float:
        if s > t:
            raise ValueError(f"need s <= t, got s={s}, t={t}")
        key = (round(s, _KEY_DIGITS), round(t, _KEY_DIGITS))
        val = self._cache.get(key)
        if val is None:
            prim = self.opspec.gamma_primitive
            c = self.clock
            if self.use_primitive and prim is not None:
                val = float(prim(c * t) - prim(c * s)) / c
            else:
                val = gamma_integral(self.opspec, c * s, c * t) / c
            self._cache[key] = val
        return val

    def exponents(self, s: float, t: float) -> np.ndarray:
        """Per-mode decay exponents ``a_k`` of ``U(t, s)``."""
        G = self.gamma_integral(s, t)
        return (G * self.basis.eigenvalues + self.shift * (t - s)) / self.epsilon

    def multipliers(self, s: float, t: float) -> np.ndarray:
        return np.exp(-self.exponents(s, t))

    def factors(self, s: float, t: float):
        """``(multiplier, phi1, noise weight)`` for one step ``[s, t]``.

        ``phi1 * (t - s)`` approximates ``int_s^t U(t, r) dr`` with the
        modulation averaged over the step.
        """
        a = self.exponents(s, t)
        return np.exp(-a), _phi1(a), _noise_weight(a)

    def grid_factors(self, times):
        """Factors for the consecutive steps of ``times``, stacked as ``(K, N)`` arrays."""
        times = np.asarray(times, dtype=float)
        if np.any(np.diff(times) < 0):
            raise ValueError("time grid must be nondecreasing")
        prim = self.opspec.gamma_primitive
        if self.use_primitive and prim is not None:
            G = np.diff(np.asarray(prim(self.clock * times), dtype=float)) / self.clock
        else:
            G = np.array([self.gamma_integral(a, b) for a, b in zip(times[:-1], times[1:])])
        a = (G[:, None] * self.basis.eigenvalues + self.shift * np.diff(times)[:, None]) \
            / self.epsilon
        return np.exp(-a), _phi1(a), _noise_weight(a)


def evolve_linear(step: EvolutionStep, f: Field, s: float, t: float) -> Field:
    if s > t:
        raise ValueError(f"evolve_linear needs s <= t, got s={s}, t={t}")
    if s == t:
        return f
    return Field(f.coefficients * step.multipliers(s, t), f.basis)


def contraction_bound(step: EvolutionStep, s: float, t: float) -> float:
    """``exp(-(gamma_0 alpha_1 + beta) (t - s) / eps)``."""
    g0 = step.opspec.gamma_bounds[0]
    a1 = float(step.basis.eigenvalues[0])
    return float(np.exp(-(g0 * a1 + step.shift) * (t - s) / step.epsilon))


def first_order_drift_nodal(opspec: OperatorSpec, basis: SpectralBasis, coefficients, t,
                            xi=None):
    """``l(t, xi) * d/dxi u`` at the nodes for a batch of coefficient rows."""
    l = opspec.first_order_drift
    if l is None:
        return None
    grad = basis.gradient_nodal(coefficients)
    return np.asarray(l(t, basis.nodes if xi is None else xi), dtype=float) * grad


def first_order_drift_term(opspec: OperatorSpec, f: Field, t: float) -> Field:
    """Project ``<l(t, xi), grad f>`` back onto the basis."""
    vals = first_order_drift_nodal(opspec, f.basis, f.coefficients, t)
    if vals is None:
        return Field.zero(f.basis)
    return Field(f.basis.to_coefficients(vals), f.basis)
