"""Slow, independent reference computations used to check the solver.

Nothing here shares numerical code with :mod:`fsinkhorn.transform` or
:mod:`fsinkhorn.sinkhorn`; only the divergence formulas are reused.
"""
from __future__ import annotations

import functools
import itertools
import math

import numpy as np
from scipy.special import logsumexp

from .divergence import DivergenceSpec
from .sinkhorn import Potentials, ProblemInstance

__all__ = [
    "kl_gamma_closed_form",
    "kl_sinkhorn_logdomain",
    "conjugate_grid_sup",
    "brute_force_ot",
    "finite_diff",
    "GRID_POINTS",
    "BRUTE_FORCE_MAX",
]

GRID_POINTS = 100_000
BRUTE_FORCE_MAX = 6

# positive part of linspace(0, 1, GRID_POINTS), scaled per call
_UNIT_GRID = np.linspace(0.0, 1.0, GRID_POINTS)[1:]


@functools.lru_cache(maxsize=256)
def _dyadic_grid(spec: DivergenceSpec, exponent: int):
    """Grid on ``(0, 2**exponent]`` and ``phi_plus`` on it, shared between calls."""
    s = np.ldexp(_UNIT_GRID, exponent)
    with np.errstate(invalid="ignore", over="ignore"):
        phi = spec.phi_plus(s)
    s.flags.writeable = False
    phi.flags.writeable = False
    return s, phi


def kl_gamma_closed_form(h, xi) -> float:
    """``log sum_i xi_i exp(h_i)``, the KL transform root in closed form."""
    h = np.asarray(h, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    return float(logsumexp(h, b=xi))


def kl_sinkhorn_logdomain(instance: ProblemInstance, tol: float = 1e-6, max_iters: int = 50_000) -> Potentials:
    """Textbook log-domain Sinkhorn, anchored at ``g[0] = 0`` like the solver.

    Raises ``RuntimeError`` when ``max |f - f_prev| < tol`` is not reached.
    """
    if instance.spec.name != "kl":
        raise ValueError("the log-domain oracle only covers the kl divergence")
    C = np.asarray(instance.cost.values, dtype=np.float64)
    eps = instance.epsilon
    log_mu = np.log(instance.mu.weights)
    log_nu = np.log(instance.nu.weights)
    f = np.zeros(C.shape[0])
    g = np.zeros(C.shape[1])
    for _ in range(max_iters):
        f_prev = f
        g = -eps * logsumexp((f[:, None] - C) / eps + log_mu[:, None], axis=0)
        g = g - g[0]
        f = -eps * logsumexp((g[None, :] - C) / eps + log_nu[None, :], axis=1)
        if np.max(np.abs(f - f_prev)) < tol:
            return Potentials(f, g, 0)
    raise RuntimeError(f"log-domain Sinkhorn did not converge in {max_iters} iterations")


def _maximizer(spec: DivergenceSpec, t: float) -> float:
    """Smallest ``s >= 0`` where the slope ``t - phi'(s)`` turns negative (bisection)."""
    if float(spec.phi_prime(np.float64(0.0))) >= t:
        return 0.0
    lo, hi = 0.0, 1.0
    while float(spec.phi_prime(np.float64(hi))) < t:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise ValueError(f"t={t} is outside the domain of the {spec.name} conjugate")
    # only the grid extent depends on it, so a loose relative tolerance will do
    while hi - lo > 1e-3 * hi:
        mid = 0.5 * (lo + hi)
        if float(spec.phi_prime(np.float64(mid))) < t:
            lo = mid
        else:
            hi = mid
    return hi


def conjugate_grid_sup(spec: DivergenceSpec, t: float, s_grid=None) -> float:
    """``max_s { s t - phi_plus(s) }`` over a dense grid on ``[0, s_max]``.

    Without an explicit grid, ``s_max`` is twice the maximizer (or 1 when the
    maximizer sits at 0), rounded up to a power of two so that the generator
    values on the grid can be cached; the grid has :data:`GRID_POINTS` points.
    """
    if s_grid is None:
        s_star = _maximizer(spec, t)
        s_max = 2.0 * s_star if s_star > 0 else 1.0
        interior, phi = _dyadic_grid(spec, math.frexp(s_max)[1])
        has_zero = True
    else:
        s = np.asarray(s_grid, dtype=np.float64)
        interior = s[s > 0]
        with np.errstate(invalid="ignore", over="ignore"):
            phi = spec.phi_plus(interior)
        has_zero = bool(np.any(s == 0.0))
    # s = 0 goes through the generator's boundary value; the rest stays vectorized
    best = -float(spec.phi_plus(np.float64(0.0))) if has_zero else -math.inf
    with np.errstate(invalid="ignore", over="ignore"):
        vals = interior * t
        vals -= phi
    if vals.size:
        best = max(best, float(np.nanmax(vals)))
    return best


def brute_force_ot(instance: ProblemInstance) -> float:
    """Unregularized OT by enumerating permutations (uniform, square, k <= 6)."""
    C = np.asarray(instance.cost.values, dtype=np.float64)
    k, l = C.shape
    if k != l:
        raise ValueError("brute force needs k == l")
    if k > BRUTE_FORCE_MAX:
        raise ValueError(f"brute force is limited to k <= {BRUTE_FORCE_MAX}, got {k}")
    for w in (instance.mu.weights, instance.nu.weights):
        if not np.allclose(w, 1.0 / k, rtol=0, atol=1e-15):
            raise ValueError("brute force needs uniform weights")
    rows = np.arange(k)
    best = math.inf
    for perm in itertools.permutations(range(k)):
        best = min(best, float(C[rows, list(perm)].sum()) / k)
    return best


def finite_diff(fn, x, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = step
        up, down = float(fn(x + e)), float(fn(x - e))
        if not (math.isfinite(up) and math.isfinite(down)):
            raise ValueError(f"non-finite evaluation at component {i}")
        grad.flat[i] = (up - down) / (2.0 * step)
    return grad
