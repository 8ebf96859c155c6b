import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slowfast.model import NoiseCoeffSpec
from slowfast.noise import (JumpSchedule, JumpSpec, QuadratureError, SeedManifest,
                            compensator_drift, jump_integral_nodal, sample_jumps,
                            wiener_increment)
from slowfast.spectral import Field, NoiseSpectrum, make_basis

B = make_basis(1.0, "dirichlet", 4, 9)


def test_zero_dt_gives_zero_increment():
    w = wiener_increment(NoiseSpectrum([1.0, 0.5]), B, 0.0, SeedManifest(1).stream(0, "w"))
    assert not np.any(w.coefficients)


def test_wiener_variance():
    rng = SeedManifest(3).stream(0, "var")
    spec = NoiseSpectrum([1.0])
    draws = np.array([wiener_increment(spec, B, 0.01, rng).coefficients[0]
                      for _ in range(100_000)])
    var = draws.var()
    se = 0.01 * np.sqrt(2.0 / len(draws))
    assert abs(var - 0.01) <= 3 * se
    assert not np.any([wiener_increment(spec, B, 0.01, rng).coefficients[1:]
                       for _ in range(10)])


def test_distinct_tags_are_uncorrelated():
    m = SeedManifest(5)
    a, b = m.stream(0, "a").standard_normal(10_000), m.stream(0, "b").standard_normal(10_000)
    assert abs(np.corrcoef(a, b)[0, 1]) <= 3 / np.sqrt(10_000)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 63), st.integers(0, 10 ** 6), st.text(max_size=8))
def test_streams_are_pure_functions_of_their_key(seed, path, tag):
    m = SeedManifest(seed)
    x = m.stream(path, tag, 3).standard_normal(4)
    y = SeedManifest(seed).stream(path, tag, 3).standard_normal(4)
    assert np.array_equal(x, y)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 300), st.integers(1, 5))
def test_chunked_draws_equal_one_draw(n, chunks):
    m = SeedManifest(11)
    whole = m.stream(0, "c").standard_normal(n * chunks)
    rng = m.stream(0, "c")
    parts = np.concatenate([rng.standard_normal(n) for _ in range(chunks)])
    assert np.array_equal(whole, parts)


def test_manifest_seed_range():
    with pytest.raises(ValueError):
        SeedManifest(-1)
    assert SeedManifest(7).to_dict() == {"master_seed": 7}


def test_empty_interval_has_no_events():
    ev = sample_jumps(JumpSpec(1.0, ("uniform", -1, 1)), (0.3, 0.3), 1.0,
                      SeedManifest(0).stream(0))
    assert len(ev) == 0


@pytest.mark.parametrize("eps,expected", [(0.1, 10.0), (1.0, 1.0)])
def test_poisson_mean_count(eps, expected):
    spec = JumpSpec(1.0, ("uniform", -1, 1))
    rng = SeedManifest(2).stream(0, "count", eps)
    counts = np.array([len(sample_jumps(spec, (0, 1), 1 / eps, rng)) for _ in range(10_000)])
    assert abs(counts.mean() - expected) <= 3 * np.sqrt(expected / len(counts))


def test_jump_times_inside_interval_and_sorted():
    ev = sample_jumps(JumpSpec(3.0, ("uniform", 0, 1)), (1.0, 2.0), 10.0,
                      SeedManifest(4).stream(0))
    assert np.all((ev.times >= 1.0) & (ev.times <= 2.0))
    assert np.all(np.diff(ev.times) >= 0)
    assert np.all((ev.marks >= 0) & (ev.marks <= 1))


def test_compensator_centered_marks_is_zero():
    spec = JumpSpec(1.0, ("uniform", -1, 1))
    out = compensator_drift(spec, NoiseCoeffSpec.constant(0.1, 0.05), Field.mode(B, 1), 0.0)
    np.testing.assert_allclose(out.nodal, 0.0, atol=1e-15)


def test_compensator_positive_marks():
    spec = JumpSpec(1.0, ("uniform", 0, 1))
    out = compensator_drift(spec, NoiseCoeffSpec.constant(0.1, 0.05), Field.zero(B), 0.0)
    # constants are not in the sine span, so compare the projected constant
    ref = Field.constant(make_basis(1.0, "neumann", 4, 9), -0.025)
    np.testing.assert_allclose(jump_integral_nodal(spec, NoiseCoeffSpec.constant(0, 0.05).g,
                                                   True, 0.0, B.nodes, B.nodes * 0),
                               0.025, atol=1e-15)
    nb = ref.basis
    out_n = compensator_drift(spec, NoiseCoeffSpec.constant(0.1, 0.05), Field.zero(nb), 0.0)
    np.testing.assert_allclose(out_n.nodal, -0.025, atol=1e-14)
    assert out.coefficients.shape == (4,)


def test_compensator_second_moment_quadrature():
    spec = JumpSpec(1.0, ("uniform", -1, 1))
    nb = make_basis(1.0, "neumann", 4, 9)
    out = compensator_drift(spec, lambda t, xi, x, z: z * z + 0 * x, Field.zero(nb), 0.0)
    np.testing.assert_allclose(out.nodal, -1.0 / 3.0, atol=1e-12)


def test_quadrature_failure_is_reported():
    spec = JumpSpec(1.0, ("uniform", -1, 1))
    with pytest.raises(QuadratureError):
        jump_integral_nodal(spec, lambda t, xi, x, z: np.abs(z) ** 0.01 * np.sign(z) + z ** -2.0,
                            False, 0.0, B.nodes, B.nodes * 0)


def test_atom_marks():
    spec = JumpSpec(2.0, ("atoms", [1.0, -1.0], [0.25, 0.75]))
    # moments are integrals against nu, so they carry the total rate
    assert spec.mark_moments == pytest.approx((-1.0, 2.0))
    vals = jump_integral_nodal(spec, lambda t, xi, x, z: z + 0 * x, False, 0.0, B.nodes,
                               B.nodes * 0)
    np.testing.assert_allclose(vals, 2.0 * -0.5)


def test_jump_schedule_bins_events_by_step():
    ev = [sample_jumps(JumpSpec(5.0, ("uniform", 0, 1)), (0, 1), 1.0,
                       SeedManifest(0).stream(r)) for r in range(3)]
    sched = JumpSchedule(ev, 0.0, 0.1, 10)
    total = sum(len(sched.at(j)[0]) for j in range(10))
    assert total == sum(len(e) for e in ev)
    empty = JumpSchedule.empty(4)
    assert all(len(empty.at(j)[0]) == 0 for j in range(4))
