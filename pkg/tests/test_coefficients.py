import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sde_lab.coefficients import (
    Cutoff,
    elliptic_diffusion_family,
    holder_drift_family,
    holder_quotient,
    holder_sine_model,
    make_cutoff,
    make_field,
    validate_assumptions,
    zero_drift,
)
from sde_lab.errors import AssumptionViolationError, InvalidParameterError


def test_cutoff_kappa():
    assert make_cutoff(1.0, 1.0, 1).kappa == 0.25
    assert make_cutoff(0.5, 2.0, 2).kappa == 0.5 / (4 * 2.0 * 4)


@pytest.mark.parametrize("args", [(0.0, 1.0, 1), (1.0, 0.0, 1), (1.0, 1.0, 0), (1.5, 1.0, 1)])
def test_cutoff_rejects_bad_parameters(args):
    with pytest.raises(InvalidParameterError):
        make_cutoff(*args)


def test_cutoff_examples():
    chi = Cutoff(0.25)
    assert chi.evaluate(0.1) == 0.1
    assert chi.evaluate(0.3) == 0.0
    assert chi.evaluate(-0.05) == -0.05


def test_cutoff_plateau_and_zero_are_exact():
    chi = Cutoff(0.25)
    rng = np.random.default_rng(3)
    inner = rng.uniform(-0.125, 0.125, 10_000)
    outer = np.concatenate([rng.uniform(0.25, 10, 5000), -rng.uniform(0.25, 10, 5000)])
    assert np.array_equal(chi(inner), inner)
    assert np.array_equal(chi(outer), np.zeros_like(outer))
    assert chi(0.125) == 0.125 and chi(-0.25) == 0.0


@given(st.floats(-10, 10, allow_nan=False), st.floats(1e-3, 5))
def test_cutoff_is_dominated_by_identity(x, kappa):
    chi = Cutoff(kappa)
    assert abs(chi(x)) <= abs(x)
    assert chi(-x) == -chi(x)


def test_cutoff_derivative_matches_finite_differences():
    chi = Cutoff(0.25)
    x = np.linspace(-0.3, 0.3, 4001)
    h = 1e-7
    fd = (chi(x + h) - chi(x - h)) / (2 * h)
    np.testing.assert_allclose(chi.derivative(x), fd, atol=1e-6)


def test_cutoff_is_c3_at_the_ramp_ends():
    # one-sided difference quotients of chi' and chi'' agree across kappa/2 and kappa
    chi = Cutoff(0.25)
    h = 1e-4
    for edge in (0.125, 0.25):
        d1 = chi.derivative
        left = (d1(edge) - d1(edge - h)) / h
        right = (d1(edge + h) - d1(edge)) / h
        assert abs(left - right) < 1e-2
        d2 = lambda y: (d1(y + 1e-6) - d1(y - 1e-6)) / 2e-6
        assert abs(d2(edge - h) - d2(edge + h)) < 1e-1


def test_holder_drift_examples():
    b = holder_drift_family(0.5, 1.0, 1.0, 1)
    assert b(np.array([0.0]))[0] == 0.0
    assert b(np.array([math.pi / 2]))[0] == 1.0
    b2 = holder_drift_family(0.5, 2.0, 1.0, 1)
    # direct evaluation: |sin(pi/6)| = 0.5, so 2 * 0.5**0.5
    assert b2(np.array([math.pi / 6]))[0] == pytest.approx(1.41421356, abs=1e-8)


@pytest.mark.parametrize("alpha", [0.0, -0.1, 1.2])
def test_holder_drift_rejects_alpha(alpha):
    with pytest.raises(InvalidParameterError):
        holder_drift_family(alpha, 1.0, 1.0, 1)


def test_holder_drift_is_not_smoother_than_alpha():
    # across the zero of sin the quotient with exponent alpha+0.1 grows like eps^-0.1
    b = holder_drift_family(0.5, 1.0, 1.0, 1)
    eps = np.array([[1e-2], [1e-6], [1e-12]])
    q = holder_quotient(b, eps, -eps, 0.6)
    assert q[0] < q[1] < q[2]
    assert q[2] / q[0] > 5.0


def test_holder_drift_lipschitz_at_alpha_one():
    amp, freq = 1.7, 2.3
    b = holder_drift_family(1.0, amp, freq, 1)
    rng = np.random.default_rng(0)
    x = rng.uniform(-7, 7, (100_000, 1))
    y = x + rng.normal(0, 1e-3, x.shape)
    assert holder_quotient(b, x, y, 1.0).max() <= amp * freq * (1 + 1e-6)


def test_diffusion_examples():
    ident = elliptic_diffusion_family(1.0, 0.0, 2, 2)
    np.testing.assert_array_equal(ident(np.array([0.3, -1.0])), np.eye(2))
    assert ident.ellipticity == 1.0
    fam = elliptic_diffusion_family(1.0, 0.5, 1, 1)
    assert fam(np.array([math.pi / 2]))[0, 0] == 1.5
    # scan oracle for min_t (s0 + s1 sin t)^2
    t = np.linspace(0, 2 * math.pi, 200_001)
    assert fam.ellipticity == pytest.approx(np.min((1.0 + 0.5 * np.sin(t)) ** 2), abs=1e-9)
    assert fam.ellipticity == 0.25


def test_diffusion_rectangular_embedding():
    fam = elliptic_diffusion_family(1.0, 0.3, 2, 3)
    s = fam(np.array([0.1, 0.2]))
    assert s.shape == (2, 3)
    assert np.all(s[:, 2] == 0)


def test_diffusion_rejects_non_elliptic():
    with pytest.raises(AssumptionViolationError):
        elliptic_diffusion_family(0.5, 0.5, 1, 1)


def _fd_gradient_error(diff, x, h=1e-5):
    d = x.shape[-1]
    cols = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        cols.append((diff(x + e) - diff(x - e)) / (2 * h))
    fd = np.stack(cols, axis=-1)
    g = diff.gradient(x)
    return np.abs(fd - g).max() / max(np.abs(g).max(), 1.0)


@pytest.mark.parametrize("s0,s1,d,d1", [(1.0, 0.25, 1, 1), (1.0, 0.5, 2, 2), (2.0, 1.0, 3, 4)])
def test_diffusion_gradient_matches_finite_differences(s0, s1, d, d1):
    fam = elliptic_diffusion_family(s0, s1, d, d1)
    x = np.random.default_rng(1).uniform(-7, 7, (1000, d))
    assert _fd_gradient_error(fam, x) < 1e-6


def test_validate_identity_zero_drift():
    field = make_field(zero_drift(2), elliptic_diffusion_family(1.0, 0.0, 2, 2))
    report = validate_assumptions(field, probe_count=500, rng_seed=0, holder_pairs=1000)
    assert report.rayleigh_min == pytest.approx(1.0, abs=1e-12)
    assert report.rayleigh_max == pytest.approx(1.0, abs=1e-12)


def test_validate_certified_lambda():
    field = holder_sine_model(alpha=0.5, s0=1.0, s1=0.5)
    report = validate_assumptions(field, probe_count=10_000, rng_seed=2)
    assert report.rayleigh_min >= 0.25 - 1e-9


def test_validate_detects_overstated_lambda():
    field = dataclasses.replace(holder_sine_model(alpha=0.5, s0=1.0, s1=0.5), ellipticity=0.5)
    with pytest.raises(AssumptionViolationError) as info:
        validate_assumptions(field, probe_count=10_000, rng_seed=2)
    assert info.value.check == "ellipticity-lower"
    assert info.value.witness is not None


def test_validate_detects_understated_drift_norm():
    field = dataclasses.replace(holder_sine_model(alpha=0.5, amplitude=2.0), drift_norm=1.0)
    with pytest.raises(AssumptionViolationError) as info:
        validate_assumptions(field, probe_count=1000, rng_seed=0)
    assert info.value.check in ("drift-bound", "drift-holder")


def test_validate_detects_wrong_gradient():
    field = holder_sine_model()
    bad = dataclasses.replace(field, diffusion_gradient=lambda x: 1.1 * field.diffusion_gradient(x))
    with pytest.raises(AssumptionViolationError) as info:
        validate_assumptions(bad, probe_count=200, rng_seed=0, holder_pairs=1000)
    assert info.value.check == "diffusion-gradient"


def test_validate_rejects_small_probe_count():
    with pytest.raises(InvalidParameterError):
        validate_assumptions(holder_sine_model(), probe_count=10)


@settings(max_examples=25, deadline=None)
@given(
    alpha=st.sampled_from([0.25, 0.5, 0.75, 1.0]),
    amplitude=st.floats(0.0, 3.0),
    frequency=st.floats(0.2, 5.0),
    s0=st.floats(0.5, 2.0),
    ratio=st.floats(0.0, 0.9),
    d=st.integers(1, 3),
    extra=st.integers(0, 1),
)
def test_shipped_families_validate_with_certified_constants(alpha, amplitude, frequency, s0, ratio, d, extra):
    field = holder_sine_model(alpha, amplitude, frequency, s0, s0 * ratio, d, d + extra)
    validate_assumptions(field, probe_count=200, rng_seed=1, holder_pairs=5000, near_diagonal_pairs=200)
