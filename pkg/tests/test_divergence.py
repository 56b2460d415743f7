import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsinkhorn.divergence import (
    DIVERGENCES,
    get_divergence,
    lambert_w,
    log_lambert_w_exp,
    primal_generator_value,
)

NAMES = list(DIVERGENCES)
FINITE_SLOPE = [n for n, s in DIVERGENCES.items() if math.isfinite(s.phi_prime_inf)]


def interior_points(spec, rng, size):
    hi = min(spec.phi_prime_inf - 0.05, 3.0)
    return rng.uniform(-6.0, hi, size)


def test_registry_has_the_eight_divergences():
    assert sorted(NAMES) == sorted(
        ["kl", "reverse_kl", "chi2", "reverse_chi2", "squared_hellinger", "jensen_shannon", "jeffreys", "triangular"]
    )


def test_unknown_name_lists_valid_names():
    with pytest.raises(KeyError) as err:
        get_divergence("total_variation")
    assert "jensen_shannon" in str(err.value)


def test_kl_conj_at_one():
    assert get_divergence("kl").conj(1.0) == pytest.approx(math.e - 1.0, rel=1e-15)


def test_chi2_conj_prime_flat_below_minus_two():
    assert get_divergence("chi2").conj_prime(-3.0) == 0.0


@pytest.mark.parametrize("name", NAMES)
def test_normalization(name):
    spec = get_divergence(name)
    assert abs(spec.conj(0.0)) <= 1e-12
    assert abs(spec.conj_prime(0.0) - 1.0) <= 1e-12
    assert spec.phi_plus(1.0) == 0.0


@pytest.mark.parametrize("name", NAMES)
def test_phi_plus_nonnegative_and_infinite_left_of_zero(name):
    spec = get_divergence(name)
    s = np.linspace(0.0, 20.0, 401)
    assert np.all(spec.phi_plus(s) >= 0)
    assert spec.phi_plus(-0.5) == math.inf


@pytest.mark.parametrize("name", FINITE_SLOPE)
def test_conj_prime_blows_up_at_domain_edge(name):
    spec = get_divergence(name)
    b = spec.phi_prime_inf
    assert spec.conj_prime(b - 1e-8) > 1e3
    assert spec.conj_prime(b + 0.1) == math.inf
    assert spec.conj(b + 0.1) == math.inf


@pytest.mark.parametrize("name", NAMES)
def test_conj_monotone_and_convex(name, rng):
    spec = get_divergence(name)
    t = np.sort(interior_points(spec, rng, 500))
    v = spec.conj(t)
    d = spec.conj_prime(t)
    assert np.all(np.diff(v) >= -1e-12)
    assert np.all(np.diff(d) >= -1e-12)
    assert np.all(d >= 0)
    assert np.all(spec.conj_second(t) >= 0)


@pytest.mark.parametrize("name", NAMES)
def test_derivatives_match_central_differences(name, rng):
    spec = get_divergence(name)
    h = 1e-5
    t = interior_points(spec, rng, 1000)
    for f, df in ((spec.conj, spec.conj_prime), (spec.conj_prime, spec.conj_second)):
        fd = (f(t + h) - f(t - h)) / (2 * h)
        exact = df(t)
        # chi2 and triangular have kinks at -2 and -3
        smooth = np.abs(t + 2.0) > 2 * h if name == "chi2" else np.abs(t + 3.0) > 2 * h
        err = np.abs(fd - exact)[smooth] / np.maximum(1.0, np.abs(exact[smooth]))
        assert err.max() <= 1e-6


@pytest.mark.parametrize("name", NAMES)
def test_fused_derivatives_agree(name, rng):
    spec = get_divergence(name)
    t = interior_points(spec, rng, 200)
    d1, d2 = spec.derivatives(t)
    np.testing.assert_allclose(d1, spec.conj_prime(t), rtol=1e-13)
    np.testing.assert_allclose(d2, spec.conj_second(t), rtol=1e-13)


def test_exact_sparsity_zones():
    chi2, tri = get_divergence("chi2"), get_divergence("triangular")
    assert np.all(chi2.conj_prime(np.linspace(-50, -2, 100)) == 0)
    assert np.all(tri.conj_prime(np.linspace(-50, -3, 100)) == 0)
    assert chi2.conj_prime(-2 + 1e-9) > 0
    assert tri.conj_prime(-3 + 1e-9) > 0
    for name in NAMES:
        if name in ("chi2", "triangular"):
            continue
        spec = get_divergence(name)
        assert np.all(spec.conj_prime(np.linspace(-30, 0, 100)) > 0)


@pytest.mark.parametrize("name", NAMES)
def test_conj_prime_inverts_phi_prime(name):
    spec = get_divergence(name)
    s = np.linspace(0.05, 8.0, 60)
    u = spec.phi_prime(s)
    np.testing.assert_allclose(spec.conj_prime(u), s, rtol=1e-8)


def test_primal_generator_examples():
    assert primal_generator_value(get_divergence("kl"), 1.0) == 0.0
    assert primal_generator_value(get_divergence("chi2"), 0.0) == 1.0
    assert primal_generator_value(get_divergence("reverse_kl"), 0.0) == math.inf
    with pytest.raises(ValueError):
        primal_generator_value(get_divergence("kl"), -1.0)


def test_lambert_w_examples():
    assert lambert_w(0.0) == 0.0
    assert lambert_w(math.e) == pytest.approx(1.0, rel=1e-14)
    # fixed-point iteration w <- x exp(-w) as an independent reference
    w = 0.5
    for _ in range(200):
        w = math.exp(-w)
    assert lambert_w(1.0) == pytest.approx(w, rel=1e-12)
    assert lambert_w(1.0) == pytest.approx(0.5671432904097838, rel=1e-14)


def test_lambert_w_rejects_negative():
    with pytest.raises(ValueError):
        lambert_w(-0.1)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=0.0, max_value=1e300, allow_nan=False))
def test_lambert_w_inverts(x):
    w = float(lambert_w(x))
    if x == 0:
        assert w == 0
        return
    assert w > 0
    # w e^w = x in log form, which stays finite over the whole range
    assert math.log(w) + w == pytest.approx(math.log(x), rel=1e-12, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-700.0, max_value=1e6, allow_nan=False))
def test_log_lambert_w_exp(z):
    u = log_lambert_w_exp(z)
    assert u + math.exp(u) == pytest.approx(z, rel=1e-13, abs=1e-13)


def test_jeffreys_needs_double():
    assert get_divergence("jeffreys").min_precision == "double"
    assert all(s.min_precision == "single" for n, s in DIVERGENCES.items() if n != "jeffreys")


def test_float32_inputs_stay_float32():
    t = np.linspace(-1, 0.5, 5, dtype=np.float32)
    for name in NAMES:
        if name == "jeffreys":
            continue
        assert get_divergence(name).conj_prime(t).dtype == np.float32
