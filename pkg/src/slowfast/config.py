"""Run configuration: TOML schema, state specifications, run manifests.

A config file has up to four tables; every key is optional and unknown keys
are rejected::

    [model]
    name = "cubic-gl"          # catalog entry
    overrides = { alpha = 1.0 }

    [solver]
    h = 0.01
    T = 1.0
    truncation_radius = 50.0
    record_stride = 1
    fast_dt = 0.016            # fast-time step target (optional)
    micro_substeps = 0         # 0: derived from eps and fast_dt
    fast_clock = "fast"        # "fast": fast coefficients see t / eps

    [noise]
    seed = 0                   # master seed
    f_slow = 0.1               # the noise knobs of the catalog models
    ...

    [experiment]
    epsilons = [0.1, 0.01, 0.001]
    paths = 200
    ...
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .model import KNOB_DEFAULTS, ModelSpec, builtin_model
from .solver import SolverConfig
from .spectral import Field

NOISE_KNOBS = ("f_slow", "f_fast", "g_slow", "g_fast", "jump_rate", "noise_decay")


class ConfigError(ValueError):
    pass


@dataclass
class ModelBlock:
    name: str = "cubic-gl"
    overrides: Dict = field(default_factory=dict)


@dataclass
class SolverBlock:
    h: float = 0.01
    T: float = 1.0
    truncation_radius: float = 50.0
    record_stride: int = 1
    fast_dt: float = 0.0
    micro_substeps: int = 0
    fast_clock: str = "fast"


@dataclass
class NoiseBlock:
    seed: int = 0
    f_slow: Optional[float] = None
    f_fast: Optional[float] = None
    g_slow: Optional[float] = None
    g_fast: Optional[float] = None
    jump_rate: Optional[float] = None
    noise_decay: Optional[float] = None


@dataclass
class ExperimentBlock:
    epsilons: List[float] = field(default_factory=lambda: [0.1, 0.01, 0.001])
    paths: int = 200
    x0: str = "mode:1:1.0"
    y0: str = "zero"
    thresholds: List[float] = field(default_factory=list)
    bootstrap: int = 1000
    # averaged drift
    drift: str = "auto"          # auto | exact | cache | pointwise
    cache_q: float = 0.1
    cache_T_avg: float = 40.0
    cache_M_ens: int = 128
    burn_in: float = 0.5
    # mixing
    mixing_T: float = 1.0
    mixing_pairs: int = 1000
    mixing_x: str = "zero"
    mixing_y1: str = "mode:1:1.0"
    mixing_y2: str = "zero"
    # moments
    moment_powers: List[int] = field(default_factory=lambda: [2, 4])
    moment_epsilons: List[float] = field(default_factory=lambda: [1.0, 0.1, 0.01])
    # khasminskii
    kappa: float = 0.5
    khasminskii_epsilons: List[float] = field(default_factory=lambda: [0.1, 0.01])
    khasminskii_power: int = 2
    # time averages (averaged drift at fixed states)
    average_states: List[str] = field(default_factory=lambda: [
        "mode:1:1.0", "mode:1:0.5", "mode:1:1.0,mode:2:0.5"])
    average_T: float = 10.0
    average_M_ens: int = 64
    # almost periodicity / forgetting
    ap_anchors: List[float] = field(default_factory=lambda: [0.0, 0.25, 0.5])
    ap_ensemble: int = 1000


BLOCKS = {"model": ModelBlock, "solver": SolverBlock, "noise": NoiseBlock,
          "experiment": ExperimentBlock}


@dataclass
class RunConfig:
    model: ModelBlock = field(default_factory=ModelBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    noise: NoiseBlock = field(default_factory=NoiseBlock)
    experiment: ExperimentBlock = field(default_factory=ExperimentBlock)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d, source="config"):
        d = dict(d or {})
        unknown = sorted(set(d) - set(BLOCKS))
        if unknown:
            raise ConfigError(f"{source}: unknown table(s) {', '.join(unknown)}; "
                              f"allowed: {', '.join(BLOCKS)}")
        parts = {}
        for name, kind in BLOCKS.items():
            raw = d.get(name, {})
            if not isinstance(raw, dict):
                raise ConfigError(f"{source}: [{name}] must be a table")
            fields = {f.name: f for f in dataclasses.fields(kind)}
            bad = sorted(set(raw) - set(fields))
            if bad:
                raise ConfigError(f"{source}: [{name}] unknown key(s) {', '.join(bad)}")
            vals = {}
            for k, v in raw.items():
                vals[k] = _coerce(f"{source}: [{name}].{k}", fields[k], v)
            parts[name] = kind(**vals)
        cfg = cls(**parts)
        cfg.check(source)
        return cfg

    def check(self, source="config"):
        unknown = sorted(set(self.model.overrides) - set(KNOB_DEFAULTS))
        if unknown:
            raise ConfigError(f"{source}: [model].overrides unknown knob(s) {', '.join(unknown)}")
        clash = [k for k in NOISE_KNOBS
                 if getattr(self.noise, k) is not None and k in self.model.overrides]
        if clash:
            raise ConfigError(f"{source}: {', '.join(clash)} set in both [noise] and "
                              "[model].overrides")
        for spec in [self.experiment.x0, self.experiment.y0, self.experiment.mixing_x,
                     self.experiment.mixing_y1, self.experiment.mixing_y2,
                     *self.experiment.average_states]:
            parse_state_spec(spec, None)

    def overrides(self):
        o = dict(self.model.overrides)
        for k in NOISE_KNOBS:
            v = getattr(self.noise, k)
            if v is not None:
                o[k] = v
        return o

    def build_model(self, validate=True) -> ModelSpec:
        try:
            return builtin_model(self.model.name, self.overrides(), validate=validate)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None

    def solver_config(self, **changes) -> SolverConfig:
        s = self.solver
        cfg = SolverConfig(h=s.h, T=s.T, truncation_radius=s.truncation_radius,
                           record_stride=s.record_stride, fast_dt=s.fast_dt or None,
                           micro_substeps=s.micro_substeps or None, fast_clock=s.fast_clock)
        return dataclasses.replace(cfg, **changes) if changes else cfg

    def digest(self) -> str:
        return config_digest(self.to_dict())

    def replace(self, **blocks):
        """Copy with per-block field updates: ``replace(experiment={"paths": 10})``."""
        parts = {}
        for name in BLOCKS:
            cur = getattr(self, name)
            upd = blocks.get(name)
            parts[name] = dataclasses.replace(cur, **upd) if upd else cur
        out = RunConfig(**parts)
        out.check()
        return out


def _coerce(where, f, v):
    if f.type == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{where}: expected an integer, got {v!r}")
        return v
    if f.type in ("float", "Optional[float]"):
        if v is None and f.type == "Optional[float]":
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {v!r}")
        return float(v)
    if f.type == "str":
        if not isinstance(v, str):
            raise ConfigError(f"{where}: expected a string, got {v!r}")
        return v
    if f.type.startswith("List"):
        if not isinstance(v, list):
            raise ConfigError(f"{where}: expected an array, got {v!r}")
        inner = f.type[5:-1]
        conv = {"float": float, "int": int, "str": str}[inner]
        try:
            return [conv(x) for x in v]
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: array entries must be {inner}") from None
    if f.type == "Dict":
        if not isinstance(v, dict):
            raise ConfigError(f"{where}: expected a table, got {v!r}")
        return dict(v)
    return v


def load_config(path) -> RunConfig:
    """Read a TOML config; syntax errors carry their line and column."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: malformed config: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return RunConfig.from_dict(raw, source=str(path))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_digest(d) -> str:
    return hashlib.sha256(canonical_json(d).encode("utf-8")).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


_STATE_RE = re.compile(r"^mode:(\d+):([-+0-9.eE]+)$")


def parse_state_spec(spec: str, basis):
    """``zero``, ``const:c``, ``mode:k:a`` (sums joined by commas) or a coefficient list ``[..]``.

    With ``basis=None`` only the syntax is checked.
    """
    spec = str(spec).strip()
    if spec.startswith("["):
        try:
            vals = [float(v) for v in json.loads(spec)]
        except (ValueError, TypeError):
            raise ConfigError(f"bad state spec {spec!r}") from None
        if basis is None:
            return None
        if len(vals) > basis.mode_count:
            raise ConfigError(f"state spec {spec!r} has more than {basis.mode_count} modes")
        c = np.zeros(basis.mode_count)
        c[: len(vals)] = vals
        return Field(c, basis)
    total = None if basis is None else np.zeros(basis.mode_count)
    for part in spec.split(","):
        part = part.strip()
        if part == "zero":
            continue
        if part.startswith("const:"):
            try:
                c = float(part[6:])
            except ValueError:
                raise ConfigError(f"bad state spec {spec!r}") from None
            if basis is not None:
                total = total + Field.constant(basis, c).coefficients
            continue
        m = _STATE_RE.match(part)
        if not m:
            raise ConfigError(f"bad state spec {spec!r}: use zero, const:c, mode:k:a or [c1, ...]")
        k, a = int(m.group(1)), float(m.group(2))
        if k < 1:
            raise ConfigError(f"bad state spec {spec!r}: modes count from 1")
        if basis is not None:
            if k > basis.mode_count:
                raise ConfigError(f"state spec {spec!r}: mode {k} beyond {basis.mode_count}")
            total[k - 1] += a
    return None if basis is None else Field(total, basis)


@dataclass
class RunManifest:
    """Everything needed to replay a run, plus digests of what it wrote."""

    command: str
    config: Dict
    config_digest: str
    master_seed: int
    model_name: str
    overrides: Dict
    version: str = __version__
    timestamp: str = ""
    outputs: Dict[str, str] = field(default_factory=dict)
    options: Dict = field(default_factory=dict)

    @classmethod
    def create(cls, command, cfg: RunConfig, options=None):
        return cls(command=command, config=cfg.to_dict(), config_digest=cfg.digest(),
                   master_seed=int(cfg.noise.seed), model_name=cfg.model.name,
                   overrides=cfg.overrides(),
                   timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
                   options=dict(options or {}))

    def verify(self) -> bool:
        return config_digest(self.config) == self.config_digest

    def run_config(self) -> RunConfig:
        if not self.verify():
            raise ConfigError("manifest config digest mismatch: the stored config was edited")
        return RunConfig.from_dict(self.config, source="manifest")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
