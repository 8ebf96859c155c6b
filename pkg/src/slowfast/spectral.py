"""Spectral discretization on a 1-D interval.

Fields are stored as amplitudes in the orthonormal eigenbasis of the
(time-independent) Laplacian, together with values on a set of collocation
nodes.  Nonlinear coefficient functions are applied pointwise at the nodes and
projected back, so cubic terms need ``M >= 2N + 1`` nodes to avoid aliasing.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

BOUNDARY_KINDS = ("dirichlet", "neumann")

_basis_ids = itertools.count()


class BlowUpError(FloatingPointError):
    """A state or coefficient evaluation became non-finite."""

    def __init__(self, message, node=None, time=None):
        super().__init__(message)
        self.node = node
        self.time = time


class SpectralBasis:
    """Orthonormal eigenbasis of ``-d^2/dxi^2`` sampled on collocation nodes.

    Dirichlet: ``e_k = sqrt(2/L) sin(k pi xi / L)`` on equispaced interior
    nodes, ``alpha_k = (k pi / L)^2``.

    Neumann: cosine modes ``k = 0 .. N-1`` on midpoint nodes.  The operator is
    shifted to ``d^2/dxi^2 - 1`` so every eigenvalue stays strictly positive,
    ``alpha_k = (k pi / L)^2 + 1``.

    Both node sets are exact quadrature rules for products of two modes, which
    is what makes the discrete inner product orthonormal to rounding error.
    """

    def __init__(self, domain_length: float, boundary_kind: str, mode_count: int,
                 node_count: int):
        if not domain_length > 0:
            raise ValueError(f"domain length must be positive, got {domain_length}")
        if boundary_kind not in BOUNDARY_KINDS:
            raise ValueError(f"unknown boundary kind {boundary_kind!r}")
        if mode_count < 1:
            raise ValueError("mode_count must be >= 1")
        if node_count < 2 * mode_count + 1:
            raise ValueError(
                f"aliasing risk: node_count={node_count} < 2*mode_count+1="
                f"{2 * mode_count + 1}")

        L = float(domain_length)
        N, M = int(mode_count), int(node_count)
        self.domain_length = L
        self.boundary_kind = boundary_kind
        self.mode_count = N
        self.node_count = M
        self.basis_id = next(_basis_ids)

        if boundary_kind == "dirichlet":
            k = np.arange(1, N + 1)
            xi = L * np.arange(1, M + 1) / (M + 1)
            self.weight = L / (M + 1)
            arg = np.outer(k, xi) * np.pi / L
            values = np.sqrt(2.0 / L) * np.sin(arg)
            derivs = np.sqrt(2.0 / L) * (k[:, None] * np.pi / L) * np.cos(arg)
            self.eigenvalues = (k * np.pi / L) ** 2
            self.sup_norms = np.full(N, np.sqrt(2.0 / L))
        else:
            k = np.arange(N)
            xi = L * (np.arange(M) + 0.5) / M
            self.weight = L / M
            arg = np.outer(k, xi) * np.pi / L
            scale = np.where(k == 0, np.sqrt(1.0 / L), np.sqrt(2.0 / L))
            values = scale[:, None] * np.cos(arg)
            derivs = -scale[:, None] * (k[:, None] * np.pi / L) * np.sin(arg)
            self.eigenvalues = (k * np.pi / L) ** 2 + 1.0
            self.sup_norms = scale
        self.wavenumbers = k
        self.nodes = xi
        self.eigenfunction_values = values
        self.derivative_values = derivs
        # analysis matrix: coefficients = nodal @ self._analysis
        self._analysis = (self.weight * values).T.copy()
        for a in (self.nodes, self.eigenvalues, self.eigenfunction_values,
                  self.derivative_values, self._analysis, self.sup_norms):
            a.setflags(write=False)

    def __repr__(self):
        return (f"SpectralBasis(L={self.domain_length}, {self.boundary_kind}, "
                f"N={self.mode_count}, M={self.node_count})")

    def __eq__(self, other):
        if not isinstance(other, SpectralBasis):
            return NotImplemented
        return self.signature == other.signature

    def __hash__(self):
        return hash(self.signature)

    @property
    def signature(self):
        return (self.domain_length, self.boundary_kind, self.mode_count, self.node_count)

    # batched transforms on raw arrays; last axis is modes / nodes

    def to_nodal(self, coefficients):
        return np.asarray(coefficients) @ self.eigenfunction_values

    def to_coefficients(self, nodal):
        return np.asarray(nodal) @ self._analysis

    def gradient_nodal(self, coefficients):
        return np.asarray(coefficients) @ self.derivative_values

    def inner(self, f_nodal, g_nodal):
        return self.weight * np.sum(np.asarray(f_nodal) * np.asarray(g_nodal), axis=-1)

    def evaluate(self, coefficients, points, derivative: int = 0):
        """Evaluate a band-limited field (or its derivative) at arbitrary points."""
        points = np.asarray(points, dtype=float)
        L = self.domain_length
        k = self.wavenumbers
        arg = np.outer(k, points) * np.pi / L
        if self.boundary_kind == "dirichlet":
            scale = np.full(len(k), np.sqrt(2.0 / L))
            table = np.sin(arg) if derivative == 0 else (k[:, None] * np.pi / L) * np.cos(arg)
        else:
            scale = np.where(k == 0, np.sqrt(1.0 / L), np.sqrt(2.0 / L))
            table = np.cos(arg) if derivative == 0 else -(k[:, None] * np.pi / L) * np.sin(arg)
        if derivative not in (0, 1):
            raise ValueError("only derivative orders 0 and 1 are available")
        return np.asarray(coefficients) @ (scale[:, None] * table)

    def orthonormality_defect(self):
        gram = self.eigenfunction_values @ self._analysis
        return float(np.max(np.abs(gram - np.eye(self.mode_count))))


def make_basis(domain_length: float = 1.0, boundary_kind: str = "dirichlet",
               mode_count: int = 8, node_count: Optional[int] = None) -> SpectralBasis:
    if node_count is None:
        node_count = 2 * mode_count + 1
    return SpectralBasis(domain_length, boundary_kind, mode_count, node_count)


@dataclass(frozen=True, eq=False)
class Field:
    """A spatial function: spectral amplitudes on a basis."""

    coefficients: np.ndarray
    basis: SpectralBasis = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        if c.shape != (self.basis.mode_count,):
            raise ValueError(
                f"dimension mismatch: {c.shape} coefficients for a basis with "
                f"{self.basis.mode_count} modes")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @cached_property
    def nodal(self) -> np.ndarray:
        v = self.basis.to_nodal(self.coefficients)
        v.setflags(write=False)
        return v

    @property
    def basis_id(self) -> int:
        return self.basis.basis_id

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.coefficients)))

    def __add__(self, other):
        _check_same_basis(self, other)
        return Field(self.coefficients + other.coefficients, self.basis)

    def __sub__(self, other):
        _check_same_basis(self, other)
        return Field(self.coefficients - other.coefficients, self.basis)

    def __mul__(self, scalar):
        return Field(self.coefficients * float(scalar), self.basis)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(-self.coefficients, self.basis)

    @classmethod
    def zero(cls, basis):
        return cls(np.zeros(basis.mode_count), basis)

    @classmethod
    def mode(cls, basis, k: int, amplitude: float = 1.0):
        """``amplitude * e_k`` with k counted from 1 (the lowest mode)."""
        c = np.zeros(basis.mode_count)
        c[k - 1] = amplitude
        return cls(c, basis)

    @classmethod
    def constant(cls, basis, value: float):
        return analyze(np.full(basis.node_count, float(value)), basis)


def _check_same_basis(*fields):
    sig = fields[0].basis.signature
    for f in fields[1:]:
        if f.basis.signature != sig:
            raise ValueError("fields live on different bases")


def synthesize(f: Field) -> np.ndarray:
    return np.array(f.nodal)


def analyze(nodal, basis: SpectralBasis) -> Field:
    nodal = np.asarray(nodal, dtype=float)
    if nodal.shape != (basis.node_count,):
        raise ValueError(
            f"dimension mismatch: {nodal.shape} nodal values for {basis.node_count} nodes")
    return Field(basis.to_coefficients(nodal), basis)


def _check_finite(f: Field):
    if not f.is_finite():
        raise BlowUpError("non-finite field")


def sup_norm(f: Field) -> float:
    """Max of |f| over the collocation nodes (surrogate for the C-norm)."""
    _check_finite(f)
    return float(np.max(np.abs(f.nodal)))


def lp_norm(f: Field, p: float = 2.0) -> float:
    _check_finite(f)
    if np.isinf(p):
        return sup_norm(f)
    if p < 1:
        raise ValueError("p must be >= 1")
    w = f.basis.weight
    return float((w * np.sum(np.abs(f.nodal) ** p)) ** (1.0 / p))


def apply_pointwise(fn: Callable, t: float, *fields: Field) -> Field:
    """Nemytskii operator: ``xi -> fn(t, xi, f1(xi), f2(xi), ...)`` re-analyzed.

    ``fn`` receives numpy arrays over the nodes and must broadcast.
    """
    if not fields:
        raise ValueError("apply_pointwise needs at least one field")
    _check_same_basis(*fields)
    basis = fields[0].basis
    values = np.broadcast_to(
        np.asarray(fn(t, basis.nodes, *(f.nodal for f in fields)), dtype=float),
        (basis.node_count,))
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        node = float(basis.nodes[bad[0]])
        raise BlowUpError(f"coefficient function is non-finite at node xi={node:.6g}",
                          node=node, time=t)
    return analyze(values, basis)


@dataclass(frozen=True)
class NoiseSpectrum:
    """Eigenvalues of the covariance square root Q, with its summability indices.

    ``rho=inf`` is allowed; then ``kappa`` sums ``sup_k lambda_k`` style terms,
    i.e. only boundedness of the lambdas is required.
    """

    lam: Sequence[float]
    rho: float = 4.0
    beta: float = 1.0

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        if lam.ndim != 1 or np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("lambda must be a finite nonnegative sequence")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        if not self.rho > 2:
            raise ValueError("rho must lie in (2, inf]")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def size(self) -> int:
        return len(self.lam)

    def padded(self, mode_count: int) -> np.ndarray:
        if self.size > mode_count:
            raise ValueError(f"noise spectrum has {self.size} modes, basis only {mode_count}")
        out = np.zeros(mode_count)
        out[: self.size] = self.lam
        return out

    def kappa(self, basis: SpectralBasis) -> float:
        if np.isinf(self.rho):
            return float(np.max(self.lam, initial=0.0))
        sup = basis.sup_norms[: self.size]
        return float(np.sum(self.lam ** self.rho * sup ** 2))

    def zeta(self, basis: SpectralBasis) -> float:
        return float(np.sum(basis.eigenvalues ** (-self.beta) * basis.sup_norms ** 2))

    def exponent_condition(self) -> float:
        """``beta (rho - 2) / rho`` -- must be < 1."""
        if np.isinf(self.rho):
            return float(self.beta)
        return self.beta * (self.rho - 2.0) / self.rho

    def is_zero(self) -> bool:
        return not np.any(self.lam)

    @classmethod
    def power_law(cls, modes: int, amplitude: float = 1.0, decay: float = 1.0,
                  rho: float = 4.0, beta: float = 1.0):
        k = np.arange(1, modes + 1)
        return cls(amplitude * k ** (-float(decay)), rho=rho, beta=beta)
