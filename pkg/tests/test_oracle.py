import itertools
import math

import numpy as np
import pytest

from fsinkhorn.divergence import DIVERGENCES, get_divergence
from fsinkhorn.measures import CostMatrix, DiscreteMeasure
from fsinkhorn.oracle import (
    brute_force_ot,
    conjugate_grid_sup,
    finite_diff,
    kl_gamma_closed_form,
    kl_sinkhorn_logdomain,
)
from fsinkhorn.sinkhorn import ProblemInstance, solve

from conftest import random_measure


def instance_from_cost(C, divergence="kl", epsilon=0.1):
    C = np.asarray(C, dtype=float)
    k, l = C.shape
    mu = DiscreteMeasure.uniform(np.arange(k, dtype=float)[:, None])
    nu = DiscreteMeasure.uniform(np.arange(l, dtype=float)[:, None])
    return ProblemInstance(mu, nu, CostMatrix(C), get_divergence(divergence), epsilon)


def test_kl_closed_form_examples():
    assert kl_gamma_closed_form([0.0, 0.0], [0.5, 0.5]) == 0.0
    assert kl_gamma_closed_form([0.0, math.log(3.0)], [0.5, 0.5]) == pytest.approx(math.log(2.0), abs=1e-15)
    h, xi = np.array([0.3, -1.0, 2.0]), np.array([0.2, 0.3, 0.5])
    assert kl_gamma_closed_form(h + 7.5, xi) == pytest.approx(kl_gamma_closed_form(h, xi) + 7.5, abs=1e-13)


def test_kl_closed_form_is_stable_for_large_inputs():
    assert kl_gamma_closed_form([1000.0, 1000.0], [0.5, 0.5]) == pytest.approx(1000.0)


def test_logdomain_trivial_cases():
    pot = kl_sinkhorn_logdomain(instance_from_cost(np.zeros((3, 4))))
    np.testing.assert_allclose(pot.f, 0.0, atol=1e-14)
    np.testing.assert_allclose(pot.g, 0.0, atol=1e-14)
    pot = kl_sinkhorn_logdomain(instance_from_cost([[2.5]]))
    assert pot.f[0] == pytest.approx(2.5) and pot.g[0] == 0.0


def test_logdomain_agrees_with_solver(rng):
    for _ in range(10):
        mu, nu = random_measure(rng, 10), random_measure(rng, 10)
        inst = ProblemInstance.from_measures(mu, nu, "kl", 0.1)
        ref = kl_sinkhorn_logdomain(inst)
        pot, _, _ = solve(inst)
        assert np.max(np.abs(pot.f - ref.f)) <= 1e-6
        assert np.max(np.abs(pot.g - ref.g)) <= 1e-6


def test_logdomain_rejects_other_divergences():
    with pytest.raises(ValueError):
        kl_sinkhorn_logdomain(instance_from_cost([[1.0]], "chi2"))


def test_grid_sup_examples():
    assert conjugate_grid_sup(get_divergence("kl"), 0.0) == pytest.approx(0.0, abs=1e-9)
    assert conjugate_grid_sup(get_divergence("chi2"), 2.0) == pytest.approx(3.0, abs=1e-8)
    assert conjugate_grid_sup(get_divergence("jensen_shannon"), 0.0) == pytest.approx(0.0, abs=1e-9)


def test_grid_sup_flat_region():
    # below -2 the chi2 sup sits at s = 0 with value -phi(0) = -1
    assert conjugate_grid_sup(get_divergence("chi2"), -5.0) == pytest.approx(-1.0, abs=1e-12)


def test_grid_sup_explicit_grid():
    grid = np.linspace(0.0, 4.0, 4001)
    assert conjugate_grid_sup(get_divergence("chi2"), 2.0, grid) == pytest.approx(3.0, abs=1e-12)


@pytest.mark.parametrize("name", list(DIVERGENCES))
def test_grid_sup_lower_bounds_closed_form(name, rng):
    spec = get_divergence(name)
    for t in rng.uniform(-4.0, min(spec.phi_prime_inf - 0.1, 2.0), 20):
        sup = conjugate_grid_sup(spec, t)
        assert sup <= float(spec.conj(t)) + 1e-12
        assert sup == pytest.approx(float(spec.conj(t)), abs=1e-6)


def test_brute_force_examples(rng):
    assert brute_force_ot(instance_from_cost([[3.25]])) == 3.25
    C = np.full((4, 4), 100.0)
    np.fill_diagonal(C, 0.0)
    assert brute_force_ot(instance_from_cost(C)) == 0.0


def test_brute_force_matches_independent_enumeration(rng):
    C = rng.uniform(0, 1, (4, 4))
    # enumerate assignments as permutation matrices instead of index tuples
    best = math.inf
    for perm in itertools.permutations(range(4)):
        P = np.eye(4)[list(perm)]
        best = min(best, float(np.sum(C * P)) / 4)
    assert brute_force_ot(instance_from_cost(C)) == pytest.approx(best, abs=1e-15)


def test_brute_force_rejects_large_or_nonuniform(rng):
    with pytest.raises(ValueError):
        brute_force_ot(instance_from_cost(np.zeros((7, 7))))
    mu = DiscreteMeasure([[0.0], [1.0]], [0.3, 0.7])
    nu = DiscreteMeasure.uniform([[0.0], [1.0]])
    with pytest.raises(ValueError):
        brute_force_ot(ProblemInstance.from_measures(mu, nu, "kl", 0.1))


def test_finite_diff_examples(rng):
    a = rng.normal(size=5)
    np.testing.assert_allclose(finite_diff(lambda x: a @ x, rng.normal(size=5)), a, atol=1e-9)
    x = rng.normal(size=5)
    np.testing.assert_allclose(finite_diff(lambda v: 0.5 * v @ v, x), x, atol=1e-9)


def test_finite_diff_rejects_non_finite():
    with pytest.raises(ValueError):
        with np.errstate(invalid="ignore", divide="ignore"):
            finite_diff(lambda v: np.log(v[0]), np.array([0.0]))
