"""Problem description for the slow-fast reaction-diffusion system and its checks.

The system on ``(0, L)``::

    du = [gamma_1(t) A u + l_1 du/dxi + b_1(t, xi, u, v)] dt + f_1(t, xi, u) dW_1
         + int g_1(t, xi, u, z) N~_1(dt, dz)
    dv = (1/eps) [(gamma_2(t) A - alpha) v + l_2 dv/dxi + b_2(t, xi, u, v)] dt
         + eps^{-1/2} f_2(t, xi, v) dW_2 + int g_2(t, xi, v, z) N~_2^eps(dt, dz)

Coefficient callables take numpy arrays and must broadcast: ``b(t, xi, x, y)``,
``f(t, xi, x)``, ``g(t, xi, x, z)``, ``gamma(t)``, ``l(t, xi)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy import integrate
from scipy.stats import qmc

from .noise import JumpSpec
from .spectral import NoiseSpectrum, SpectralBasis, make_basis


class InvalidModelError(ValueError):
    """Raised when a model fails its assumption report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class OperatorSpec:
    """``A_i(t) = gamma(t) A + l(t, xi) d/dxi``."""

    gamma: Callable
    gamma_bounds: Tuple[float, float]
    first_order_drift: Optional[Callable] = None
    period: Optional[float] = None
    # exact antiderivative of gamma, used instead of quadrature when given
    gamma_primitive: Optional[Callable] = None

    def __post_init__(self):
        g0, g1 = self.gamma_bounds
        if not 0 < g0 <= g1:
            raise ValueError(f"gamma bounds must satisfy 0 < g0 <= g1, got {self.gamma_bounds}")
        if self.period is not None and not self.period > 0:
            raise ValueError("period must be positive")

    @classmethod
    def constant(cls, value: float = 1.0, period: Optional[float] = None):
        value = float(value)
        return cls(gamma=lambda t: np.full(np.shape(t), value),
                   gamma_bounds=(value, value), period=period,
                   gamma_primitive=lambda t: value * np.asarray(t, dtype=float))

    @classmethod
    def sinusoidal(cls, mean: float = 2.0, amplitude: float = 1.0, period: float = 1.0):
        w = 2 * np.pi / period
        return cls(gamma=lambda t: mean + amplitude * np.sin(w * np.asarray(t)),
                   gamma_bounds=(mean - abs(amplitude), mean + abs(amplitude)),
                   period=period,
                   gamma_primitive=lambda t: mean * np.asarray(t)
                   - amplitude / w * np.cos(w * np.asarray(t)))

    def gamma_mean(self) -> float:
        """Average of gamma over one period (or over [0, 1] when aperiodic)."""
        p = self.period or 1.0
        return gamma_integral(self, 0.0, p) / p


@dataclass(frozen=True)
class ReactionSpec:
    b: Callable
    growth_exponent: float = 1.0
    lipschitz_exponent: float = 0.0
    dissipative_in_y: bool = False

    def __post_init__(self):
        if self.growth_exponent < 1:
            raise ValueError("growth exponent m must be >= 1")
        if self.lipschitz_exponent < 0:
            raise ValueError("lipschitz exponent must be >= 0")


def _zero_f(t, xi, x):
    return np.zeros(np.broadcast(xi, x).shape)


def _zero_g(t, xi, x, z):
    return np.zeros(np.broadcast(xi, x, z).shape)


@dataclass(frozen=True)
class NoiseCoeffSpec:
    f: Callable = _zero_f
    g: Callable = _zero_g
    lipschitz_bound: float = 1.0
    # g(t, xi, x, z) affine in z: compensator from mark moments, no quadrature
    jump_affine: bool = True
    state_independent: bool = False

    @classmethod
    def constant(cls, f_value: float, g_scale: float):
        """``f = f_value``, ``g = g_scale * z``; both zero gives the zero spec."""
        f_value, g_scale = float(f_value), float(g_scale)
        if f_value == 0 and g_scale == 0:
            return cls()
        return cls(f=lambda t, xi, x: np.full(np.broadcast(xi, x).shape, f_value),
                   g=lambda t, xi, x, z: g_scale * np.broadcast_to(
                       z, np.broadcast(xi, x, z).shape),
                   lipschitz_bound=0.0, jump_affine=True, state_independent=True)

    def is_zero(self) -> bool:
        return self.f is _zero_f and self.g is _zero_g


@dataclass(frozen=True)
class ModelSpec:
    slow_operator: OperatorSpec
    fast_operator: OperatorSpec
    alpha: float
    slow_reaction: ReactionSpec
    fast_reaction: ReactionSpec
    slow_noise: NoiseCoeffSpec
    fast_noise: NoiseCoeffSpec
    wiener_slow: NoiseSpectrum
    wiener_fast: NoiseSpectrum
    jump_spec: JumpSpec
    basis: SpectralBasis
    name: str = "custom"
    knobs: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        for spec in (self.wiener_slow, self.wiener_fast):
            spec.padded(self.basis.mode_count)

    def replace(self, **changes) -> "ModelSpec":
        return dataclasses.replace(self, **changes)

    @property
    def noise_free_slow(self) -> bool:
        return self.slow_noise.is_zero() or (self.wiener_slow.is_zero()
                                             and self.slow_noise.g is _zero_g)

    def fast_rate_bound(self) -> float:
        """Largest linear decay rate of the fast equation (in fast time)."""
        return self.alpha + self.fast_operator.gamma_bounds[1] * float(self.basis.eigenvalues[-1])

    def fast_time_step(self) -> float:
        """Default fast-time step: keep the slowest mode's step exponent near 0.5."""
        slowest = self.alpha + self.fast_operator.gamma_bounds[1] * float(self.basis.eigenvalues[0])
        return min(0.05, 0.5 / slowest)

    def describe(self) -> dict:
        return {"name": self.name, "knobs": dict(self.knobs)}


def gamma_integral(opspec: OperatorSpec, s: float, t: float) -> float:
    """``int_s^t gamma(r) dr`` by adaptive quadrature (relative tolerance 1e-10)."""
    if s > t:
        raise ValueError(f"gamma_integral needs s <= t, got s={s}, t={t}")
    if s == t:
        return 0.0
    val, _ = integrate.quad(lambda r: float(opspec.gamma(r)), s, t,
                            epsabs=0.0, epsrel=1e-12, limit=200)
    return float(val)


# ----------------------------------------------------------------------------
# catalog

KNOB_DEFAULTS = {
    "alpha": None,
    "mode_count": 8,
    "node_count": None,
    "domain_length": 1.0,
    "boundary": "dirichlet",
    "slow_coupling": 1.0,
    "fast_coupling": 1.0,
    "f_slow": 0.1,
    "f_fast": 0.1,
    "g_slow": 0.05,
    "g_fast": 0.05,
    "jump_rate": 1.0,
    "noise_decay": 1.0,
    "gamma_fast_mean": 2.0,
    "gamma_fast_amplitude": 1.0,
    "gamma_slow": 1.0,
}

CATALOG = ("cubic-gl", "linear", "deterministic-cubic")

_DEFAULT_ALPHA = {"cubic-gl": 1.0, "linear": 100.0, "deterministic-cubic": 1.0}


def builtin_model(name: str, overrides: Optional[dict] = None, validate: bool = True,
                  sample_budget: int = 2048) -> ModelSpec:
    """Catalog models.

    ``cubic-gl``: ``b1 = -x^3 + y``, ``b2 = x - y^3``, constant ``f = 0.1``,
    ``g = 0.05 z`` with unit-rate uniform[-1, 1] marks; ``linear``: ``b1 = y``,
    ``b2 = x - y``; ``deterministic-cubic``: cubic-gl without noise.
    """
    if name not in CATALOG:
        raise KeyError(f"unknown model {name!r}; catalog: {', '.join(CATALOG)}")
    overrides = dict(overrides or {})
    unknown = sorted(set(overrides) - set(KNOB_DEFAULTS))
    if unknown:
        raise KeyError(f"unknown override(s) for {name}: {', '.join(unknown)}")
    knobs = dict(KNOB_DEFAULTS)
    knobs["alpha"] = _DEFAULT_ALPHA[name]
    knobs.update(overrides)

    N = int(knobs["mode_count"])
    basis = make_basis(knobs["domain_length"], knobs["boundary"], N, knobs["node_count"])
    cs, cf = float(knobs["slow_coupling"]), float(knobs["fast_coupling"])

    if name == "linear":
        slow = ReactionSpec(lambda t, xi, x, y: cs * y + 0.0 * x, growth_exponent=1.0,
                            lipschitz_exponent=0.0)
        fast = ReactionSpec(lambda t, xi, x, y: cf * x - y, growth_exponent=1.0,
                            lipschitz_exponent=0.0, dissipative_in_y=True)
    else:
        slow = ReactionSpec(lambda t, xi, x, y: cs * y - x * x * x, growth_exponent=3.0,
                            lipschitz_exponent=2.0)
        fast = ReactionSpec(lambda t, xi, x, y: cf * x - y * y * y, growth_exponent=3.0,
                            lipschitz_exponent=2.0, dissipative_in_y=True)

    if name == "deterministic-cubic":
        slow_noise = fast_noise = NoiseCoeffSpec()
    else:
        slow_noise = NoiseCoeffSpec.constant(knobs["f_slow"], knobs["g_slow"])
        fast_noise = NoiseCoeffSpec.constant(knobs["f_fast"], knobs["g_fast"])

    spectrum = NoiseSpectrum.power_law(N, 1.0, knobs["noise_decay"], rho=4.0, beta=1.0)
    model = ModelSpec(
        slow_operator=OperatorSpec.constant(knobs["gamma_slow"], period=1.0),
        fast_operator=OperatorSpec.sinusoidal(knobs["gamma_fast_mean"],
                                              knobs["gamma_fast_amplitude"], 1.0),
        alpha=float(knobs["alpha"]),
        slow_reaction=slow, fast_reaction=fast,
        slow_noise=slow_noise, fast_noise=fast_noise,
        wiener_slow=spectrum, wiener_fast=spectrum,
        jump_spec=JumpSpec(float(knobs["jump_rate"]), ("uniform", -1.0, 1.0)),
        basis=basis, name=name, knobs=overrides,
    )
    if validate:
        report = validate_assumptions(model, sample_budget=sample_budget, seed=0)
        if not report.ok:
            raise InvalidModelError(
                f"model {name} with overrides {overrides} violates its assumptions:\n"
                + report.summary(failures_only=True), report)
    return model


# ----------------------------------------------------------------------------
# assumption validator

@dataclass
class AssumptionItem:
    name: str
    inequality: str
    status: str = "pass"
    constant: Optional[float] = None
    witness: Optional[dict] = None
    lhs: Optional[float] = None
    rhs: Optional[float] = None
    note: str = ""

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class AssumptionReport:
    items: Dict[str, AssumptionItem] = field(default_factory=dict)
    sample_budget: int = 0
    seed: int = 0

    def add(self, item: AssumptionItem):
        self.items[item.name] = item
        return item

    def __getitem__(self, key):
        return self.items[key]

    def status(self, key):
        return self.items[key].status

    @property
    def failures(self):
        return [it for it in self.items.values() if it.status == "fail"]

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def constants(self):
        return {k: it.constant for k, it in self.items.items() if it.constant is not None}

    def summary(self, failures_only=False) -> str:
        lines = []
        for it in self.items.values():
            if failures_only and it.status != "fail":
                continue
            line = f"{it.status:9s} {it.name}: {it.inequality}"
            if it.status == "fail":
                line += f"  witness={it.witness} lhs={it.lhs:.6g} rhs={it.rhs:.6g}"
            elif it.note:
                line += f"  ({it.note})"
            lines.append(line)
        return "\n".join(lines)

    def to_dict(self):
        return {"sample_budget": self.sample_budget, "seed": self.seed,
                "items": {k: v.to_dict() for k, v in self.items.items()}}


GROWTH_SLACK = 10.0
CORE_RADIUS = 1.0


def _witness(idx, **arrays):
    return {k: float(np.asarray(v).reshape(-1)[idx]) for k, v in arrays.items()}


def _growth_item(report, name, inequality, lhs, base, core, wit, slack=GROWTH_SLACK):
    """Test ``lhs <= c * base``; c is fitted on the core box, checked with slack."""
    lhs = np.asarray(lhs, dtype=float)
    base = np.asarray(base, dtype=float)
    ratio = lhs / base
    c = float(np.max(ratio[core], initial=0.0))
    c_eff = max(c, 1e-12)
    item = AssumptionItem(name, inequality, constant=c)
    if not np.all(np.isfinite(lhs)):
        i = int(np.flatnonzero(~np.isfinite(lhs))[0])
        item.status, item.witness = "fail", _witness(i, **wit)
        item.lhs, item.rhs = float(lhs[i]), float(slack * c_eff * base[i])
        item.note = "non-finite value"
        return report.add(item)
    bad = ratio > slack * c_eff
    if np.any(bad):
        i = int(np.argmax(np.where(bad, ratio, -np.inf)))
        item.status = "fail"
        item.witness = _witness(i, **wit)
        item.lhs, item.rhs = float(lhs[i]), float(slack * c_eff * base[i])
    else:
        item.constant = float(np.max(ratio, initial=0.0))
    return report.add(item)


def validate_assumptions(model: ModelSpec, sample_budget: int = 10_000, seed: int = 0,
                         state_range: float = 10.0) -> AssumptionReport:
    """Falsification checks of the structural hypotheses on sampled points.

    "pass" means no witness was found at this budget.  Growth-type bounds fit
    their constant on the core box ``|x|, |y| <= 1`` and fail when the ratio
    elsewhere exceeds ten times that constant.
    """
    if sample_budget < 1000:
        raise ValueError("sample_budget must be >= 1000")
    rep = AssumptionReport(sample_budget=sample_budget, seed=seed)
    basis = model.basis
    L = basis.domain_length
    period = model.fast_operator.period or 1.0
    n = int(sample_budget)
    R = float(state_range)

    u = qmc.Halton(d=9, scramble=True, seed=seed).random(n)
    t = u[:, 0] * 10 * period
    xi = u[:, 1] * L
    # a quarter of the points live in the core box, where constants are fitted
    scale = np.where(np.arange(n) % 4 == 3, CORE_RADIUS, R)
    x, y, x2, y2 = ((2 * u[:, k] - 1) * scale for k in (2, 3, 4, 5))
    zlo, zhi = model.jump_spec.mark_range
    z = zlo + (zhi - zlo) * u[:, 6]
    # canonical probes first: witnesses for textbook violations show up here
    probes = np.array([
        # t, xi, x, y, x2, y2
        [0.0, 0.5 * L, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.5 * L, 1.0, 1.0, 0.0, 0.0],
        [0.0, 0.5 * L, R, R, 0.0, 0.0],
        [0.0, 0.5 * L, -R, -R, 0.0, 0.0],
    ])
    t = np.concatenate([probes[:, 0], t])
    xi = np.concatenate([probes[:, 1], xi])
    x = np.concatenate([probes[:, 2], x])
    y = np.concatenate([probes[:, 3], y])
    x2 = np.concatenate([probes[:, 4], x2])
    y2 = np.concatenate([probes[:, 5], y2])
    z = np.concatenate([np.full(len(probes), zhi), z])
    core = (np.abs(x) <= CORE_RADIUS) & (np.abs(y) <= CORE_RADIUS) & \
           (np.abs(x2) <= CORE_RADIUS) & (np.abs(y2) <= CORE_RADIUS)

    def ev(fn, *args):
        return np.broadcast_to(np.asarray(fn(*args), dtype=float), t.shape)

    # (A1)
    grid = np.linspace(0.0, 10 * period, 20001)
    for label, op in (("slow", model.slow_operator), ("fast", model.fast_operator)):
        g = np.broadcast_to(np.asarray(op.gamma(grid), dtype=float), grid.shape)
        g0, g1 = op.gamma_bounds
        item = AssumptionItem(f"A1a.gamma_bounds.{label}",
                              "gamma_0 <= gamma(t) <= gamma_bar", constant=float(g.max()))
        bad = (g < g0 * (1 - 1e-12)) | (g > g1 * (1 + 1e-12))
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            item.status, item.witness = "fail", {"t": float(grid[i])}
            item.lhs, item.rhs = float(g[i]), float(g0 if g[i] < g0 else g1)
        rep.add(item)
        item = AssumptionItem(f"A1b.first_order_drift.{label}", "sup |l(t, xi)| < inf")
        if op.first_order_drift is not None:
            lv = np.broadcast_to(np.asarray(op.first_order_drift(t, xi), dtype=float), t.shape)
            item.constant = float(np.max(np.abs(lv)))
            if not np.all(np.isfinite(lv)):
                i = int(np.flatnonzero(~np.isfinite(lv))[0])
                item.status, item.witness = "fail", _witness(i, t=t, xi=xi)
                item.lhs, item.rhs = float("inf"), float("inf")
        else:
            item.constant = 0.0
        rep.add(item)

    # (A2)
    ev_ok = bool(np.all(basis.eigenvalues > 0) and np.all(np.diff(basis.eigenvalues) >= 0))
    defect = basis.orthonormality_defect()
    item = AssumptionItem("A2.eigenbasis", "alpha_k > 0 nondecreasing; <e_j, e_k> = delta_jk",
                          constant=defect)
    if not ev_ok or defect > 1e-10:
        item.status, item.witness = "fail", {"orthonormality_defect": defect}
        item.lhs, item.rhs = defect, 1e-10
    rep.add(item)
    for label, spec in (("slow", model.wiener_slow), ("fast", model.wiener_fast)):
        kappa, zeta, cond = spec.kappa(basis), spec.zeta(basis), spec.exponent_condition()
        item = AssumptionItem(f"A2.noise.{label}",
                              "kappa, zeta finite and beta (rho - 2) / rho < 1",
                              constant=kappa, note=f"kappa={kappa:.4g} zeta={zeta:.4g}")
        if not (np.isfinite(kappa) and np.isfinite(zeta) and cond < 1):
            item.status = "fail"
            item.witness = {"kappa": kappa, "zeta": zeta, "beta(rho-2)/rho": cond}
            item.lhs, item.rhs = cond, 1.0
        rep.add(item)

    wit4 = dict(t=t, xi=xi, x=x, y=y)
    b1 = model.slow_reaction.b
    b2 = model.fast_reaction.b
    m1 = model.slow_reaction.growth_exponent
    m2 = model.fast_reaction.growth_exponent

    # (A3)
    b1v = ev(b1, t, xi, x, y)
    _growth_item(rep, "A3a.growth", "|b1| <= c (1 + |x|^m1 + |y|)", np.abs(b1v),
                 1 + np.abs(x) ** m1 + np.abs(y), core, wit4)
    h1, h2 = x2 - x, y2 - y
    lhs = np.maximum((ev(b1, t, xi, x2, y2) - b1v) * h1, 0.0)
    hn = np.hypot(h1, h2)
    base = np.abs(h1) * (1 + np.hypot(x, y) + hn) + 1e-300
    _growth_item(rep, "A3b.one_sided", "(b1(s + h) - b1(s)) h_1 <= c |h_1| (1 + |s| + |h|)",
                 lhs, base, core, dict(t=t, xi=xi, x=x, y=y, x2=x2, y2=y2))
    th = model.slow_reaction.lipschitz_exponent
    d = np.hypot(x2 - x, y2 - y) + 1e-300
    _growth_item(rep, "A3c.local_lipschitz",
                 "|b1(s) - b1(s')| <= c (1 + |s|^theta + |s'|^theta) |s - s'|",
                 np.abs(ev(b1, t, xi, x2, y2) - b1v),
                 (1 + np.hypot(x, y) ** th + np.hypot(x2, y2) ** th) * d, core,
                 dict(t=t, xi=xi, x=x, y=y, x2=x2, y2=y2))

    # (A4)
    b2v = ev(b2, t, xi, x, y)
    _growth_item(rep, "A4a.growth", "|b2| <= c (1 + |x| + |y|^m2)", np.abs(b2v),
                 1 + np.abs(x) + np.abs(y) ** m2, core, wit4)
    k1, k2 = x2 - x, y2 - y
    lhs = np.maximum((ev(b2, t, xi, x2, y2) - b2v) * k2, 0.0)
    base = np.abs(k2) * (1 + np.hypot(x, y) + np.hypot(k1, k2)) + 1e-300
    _growth_item(rep, "A4b.one_sided", "(b2(s + h) - b2(s)) h_2 <= c |h_2| (1 + |s| + |h|)",
                 lhs, base, core, dict(t=t, xi=xi, x=x, y=y, x2=x2, y2=y2))
    step = 1e-4
    jitter = np.concatenate([np.full(len(probes), 0.5), u[:, 7]])
    bx = ev(b2, t, xi, x + step * (2 * jitter - 1), y)
    by = ev(b2, t, xi, x, y + step)
    lq = np.maximum(np.abs(bx - b2v) / step, np.abs(by - b2v) / step)
    item = AssumptionItem("A4c.local_lipschitz", "b2(t, xi, .) locally Lipschitz",
                          constant=float(np.max(lq)) if np.all(np.isfinite(lq)) else None)
    if not np.all(np.isfinite(lq)):
        i = int(np.flatnonzero(~np.isfinite(lq))[0])
        item.status, item.witness = "fail", _witness(i, **wit4)
        item.lhs, item.rhs = float("inf"), float("inf")
    rep.add(item)

    dy = y - y2
    diff = b2v - ev(b2, t, xi, x, y2)
    prod = diff * dy
    scale = 1e-12 * (1 + np.abs(b2v))
    item = AssumptionItem("A4d.dissipative", "(b2(x, y1) - b2(x, y2)) (y1 - y2) <= 0")
    nz = np.abs(dy) > 0
    q = np.where(nz, diff / np.where(nz, dy, 1.0), -np.inf)
    sup_q = float(np.max(q))
    item.constant = -sup_q  # dissipativity margin
    bad = prod > scale
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        item.status = "fail"
        item.witness = {"t": float(t[i]), "xi": float(xi[i]), "x": float(x[i]),
                        "y1": float(y[i]), "y2": float(y2[i])}
        item.lhs, item.rhs = float(prod[i]), 0.0
    rep.add(item)

    # (A5) and (A6)
    for label, nspec, m in (("slow", model.slow_noise, m1), ("fast", model.fast_noise, m2)):
        fv = ev(nspec.f, t, xi, x)
        fv2 = ev(nspec.f, t, xi, x2)
        dx = np.abs(x - x2) + 1e-300
        Lf = nspec.lipschitz_bound
        ratio = np.abs(fv - fv2) / dx
        item = AssumptionItem(f"A5.lipschitz_f.{label}", "|f(x) - f(x')| <= L |x - x'|",
                              constant=float(np.max(ratio)))
        bad = ratio > Lf * (1 + 1e-9) + 1e-12
        if np.any(bad):
            i = int(np.argmax(np.where(bad, ratio, -np.inf)))
            item.status = "fail"
            item.witness = {"t": float(t[i]), "xi": float(xi[i]), "x": float(x[i]),
                            "x2": float(x2[i])}
            item.lhs, item.rhs = float(np.abs(fv - fv2)[i]), float(Lf * dx[i])
        rep.add(item)
        gv = ev(nspec.g, t, xi, x, z)
        gv2 = ev(nspec.g, t, xi, x2, z)
        ratio = np.abs(gv - gv2) / dx
        item = AssumptionItem(f"A5.lipschitz_g.{label}",
                              "|g(x, z) - g(x', z)| <= L |x - x'| uniformly in z",
                              constant=float(np.max(ratio)))
        bad = ratio > Lf * (1 + 1e-9) + 1e-12
        if np.any(bad):
            i = int(np.argmax(np.where(bad, ratio, -np.inf)))
            item.status = "fail"
            item.witness = {"t": float(t[i]), "xi": float(xi[i]), "x": float(x[i]),
                            "x2": float(x2[i]), "z": float(z[i])}
            item.lhs, item.rhs = float(np.abs(gv - gv2)[i]), float(Lf * dx[i])
        rep.add(item)
        for p in (1, 2, 4):
            jp = _abs_pow_integral(model.jump_spec, nspec, t, xi, x, p)
            _growth_item(rep, f"A6.growth.{label}.p{p}",
                         f"|f|^{p} + int |g|^{p} nu(dz) <= c (1 + |x|^({p}/m))",
                         np.abs(fv) ** p + jp, 1 + np.abs(x) ** (p / m), core,
                         dict(t=t, xi=xi, x=x))

    # (A7)
    fop = model.fast_operator
    item_a = AssumptionItem("A7a.periodic", "gamma_2 and l_2 periodic with a common period")
    item_b = AssumptionItem("A7b.almost_periodic",
                            "b1, b2, f2, g2 uniformly almost periodic in t")
    if fop.period is None:
        item_a.status = item_b.status = "unchecked"
        item_a.note = item_b.note = "no period declared"
    else:
        P = fop.period
        g_a = np.asarray(fop.gamma(grid), dtype=float)
        g_b = np.asarray(fop.gamma(grid + P), dtype=float)
        err = np.broadcast_to(np.abs(g_a - g_b), grid.shape)
        if fop.first_order_drift is not None:
            la = np.broadcast_to(fop.first_order_drift(t, xi), t.shape)
            lb = np.broadcast_to(fop.first_order_drift(t + P, xi), t.shape)
            err = np.concatenate([err, np.abs(la - lb)])
        tol = 1e-9 * (1 + float(np.max(np.abs(g_a))))
        item_a.constant = float(np.max(err))
        if np.max(err) > tol:
            i = int(np.argmax(err))
            item_a.status = "fail"
            item_a.witness = {"period": P, "index": i}
            item_a.lhs, item_a.rhs = float(err[i]), tol
        _almost_periodic(item_b, model, P, t, xi, x, y, z, ev)
    rep.add(item_a)
    rep.add(item_b)

    # sufficient mixing condition for the frozen fast equation
    Ly = -rep.items["A4d.dissipative"].constant
    rate = model.alpha + fop.gamma_bounds[0] * float(basis.eigenvalues[0]) - Ly
    item = AssumptionItem("mixing", "alpha + gamma_0 alpha_1 - L_y > 0", constant=rate)
    if not rate > 0:
        item.status = "fail"
        item.witness = {"alpha": model.alpha, "gamma_0": fop.gamma_bounds[0],
                        "alpha_1": float(basis.eigenvalues[0]), "L_y": Ly}
        item.lhs, item.rhs = rate, 0.0
    rep.add(item)
    return rep


def _abs_pow_integral(jump_spec, nspec, t, xi, x, p):
    """``int |g(t, xi, x, z)|^p nu(dz)`` by quadrature over the mark law."""
    zq, wq = jump_spec.quadrature(32)
    acc = np.zeros(np.shape(x))
    for zi, wi in zip(zq, wq):
        acc = acc + wi * np.abs(np.broadcast_to(nspec.g(t, xi, x, zi), np.shape(x))) ** p
    return acc


def _almost_periodic(item, model, P, t, xi, x, y, z, ev):
    """Periodic special case: look for an eps-almost-period near ``P``."""
    fns = [("b1", lambda s: ev(model.slow_reaction.b, s, xi, x, y)),
           ("b2", lambda s: ev(model.fast_reaction.b, s, xi, x, y)),
           ("f2", lambda s: ev(model.fast_noise.f, s, xi, y)),
           ("g2", lambda s: ev(model.fast_noise.g, s, xi, y, z))]
    base = [fn(t) for _, fn in fns]
    scale = 1e-9 * (1 + max(float(np.max(np.abs(b))) for b in base))

    def defect(shift):
        return max(float(np.max(np.abs(fn(t + shift) - b0))) for (_, fn), b0 in zip(fns, base))

    d0 = defect(P)
    item.constant = d0
    if d0 <= scale:
        return
    shifts = P * np.linspace(0.5, 1.5, 1001)
    ds = np.array([defect(s) for s in shifts])
    j = int(np.argmin(ds))
    if ds[j] <= scale:
        item.note = f"almost period {shifts[j]:.6g}"
        item.constant = float(ds[j])
        return
    item.status = "fail"
    item.witness = {"shift": float(shifts[j])}
    item.lhs, item.rhs = float(ds[j]), scale
