import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slowfast.config import (ConfigError, RunConfig, RunManifest, config_digest, load_config,
                             parse_state_spec)
from slowfast.spectral import make_basis


def test_defaults_round_trip_and_digest():
    cfg = RunConfig()
    back = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    assert back.digest() == cfg.digest() == config_digest(cfg.to_dict())
    assert cfg.replace(noise={"seed": 1}).digest() != cfg.digest()


def test_load_full_config(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text("""
[model]
name = "linear"
overrides = { alpha = 50.0 }

[solver]
h = 0.005
T = 0.5

[noise]
seed = 42
f_fast = 0.0

[experiment]
epsilons = [0.1, 0.01]
paths = 12
""")
    cfg = load_config(p)
    assert cfg.model.name == "linear" and cfg.noise.seed == 42
    assert cfg.overrides() == {"alpha": 50.0, "f_fast": 0.0}
    assert cfg.build_model().alpha == 50.0
    assert cfg.solver_config().n_macro == 100
    assert cfg.experiment.epsilons == [0.1, 0.01]


def test_malformed_toml_reports_position(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[solver]\nh = = 1\n")
    with pytest.raises(ConfigError, match=r"line 2"):
        load_config(p)


@pytest.mark.parametrize("raw,match", [
    ({"solvr": {}}, "unknown table"),
    ({"solver": {"hh": 1}}, r"\[solver\] unknown key\(s\) hh"),
    ({"solver": {"h": "fast"}}, r"\[solver\]\.h: expected a number"),
    ({"experiment": {"paths": 1.5}}, "expected an integer"),
    ({"experiment": {"epsilons": ["a"]}}, "array entries"),
    ({"model": {"overrides": {"bogus": 1}}}, "unknown knob"),
    ({"model": {"overrides": {"f_slow": 1}}, "noise": {"f_slow": 0.0}}, "both"),
    ({"experiment": {"x0": "wave:3"}}, "bad state spec"),
])
def test_config_errors(raw, match):
    with pytest.raises(ConfigError, match=match):
        RunConfig.from_dict(raw)


def test_unknown_model_is_a_config_error():
    with pytest.raises(ConfigError, match="catalog"):
        RunConfig.from_dict({"model": {"name": "nope"}}).build_model()


def test_state_specs():
    b = make_basis(1.0, "dirichlet", 4)
    assert not np.any(parse_state_spec("zero", b).coefficients)
    np.testing.assert_array_equal(parse_state_spec("mode:1:1.0,mode:3:-0.5", b).coefficients,
                                  [1.0, 0.0, -0.5, 0.0])
    np.testing.assert_array_equal(parse_state_spec("[1, 2]", b).coefficients, [1, 2, 0, 0])
    nb = make_basis(1.0, "neumann", 4)
    np.testing.assert_allclose(parse_state_spec("const:2", nb).nodal, 2.0)
    for bad in ("mode:9:1", "mode:0:1", "[1,2,3,4,5]"):
        with pytest.raises(ConfigError):
            parse_state_spec(bad, b)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(1, 500), st.floats(1e-3, 1.0))
def test_manifest_round_trip(seed, paths, eps):
    cfg = RunConfig().replace(noise={"seed": seed}, experiment={"paths": paths,
                                                                "epsilons": [eps]})
    man = RunManifest.create("converge", cfg)
    back = RunManifest.from_dict(json.loads(json.dumps(man.to_dict())))
    assert back.verify() and back.run_config() == cfg


def test_manifest_detects_edits(tmp_path):
    man = RunManifest.create("mix", RunConfig())
    p = tmp_path / "manifest.json"
    man.write(p)
    d = json.loads(p.read_text())
    d["config"]["noise"]["seed"] = 7
    p.write_text(json.dumps(d))
    with pytest.raises(ConfigError, match="digest"):
        RunManifest.read(p).run_config()
