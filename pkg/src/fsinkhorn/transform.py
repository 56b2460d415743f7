"""Scalar root finding behind the (c, eps, phi)-transform.

For a vector ``h`` and probability weights ``xi`` the transform needs the
number ``gamma`` solving

    sum_i xi_i * conj'(h_i - gamma) = 1.

The left side is nonincreasing in ``gamma``.  At ``gamma = max(h)`` every
argument is ``<= 0`` so the sum is at most one, and at ``gamma = min(h)`` (or
the feasibility bound ``max(h) - phi'(inf)``, whichever is larger) it is at
least one, so the root is always bracketed.  Newton steps are taken from the
standard starting point and replaced by bisection whenever they leave the
bracket.

The batched solver works on a matrix whose rows are independent problems that
share the weights ``xi``; this is what one Sinkhorn half-iteration needs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .divergence import DivergenceSpec

__all__ = [
    "GammaProblem",
    "GammaResult",
    "TransformError",
    "NewtonNonConvergence",
    "NumericalError",
    "default_newton_tol",
    "solve_gamma",
    "solve_gamma_batch",
    "gamma_gradient",
]

COLLAPSE_OFFSET = 1e-12


class TransformError(ArithmeticError):
    pass


class NewtonNonConvergence(TransformError):
    def __init__(self, message: str, gamma, residual):
        super().__init__(message)
        self.gamma = gamma
        self.residual = residual


class NumericalError(TransformError):
    pass


def default_newton_tol(dtype) -> float:
    return 1e-10 if np.dtype(dtype) == np.float64 else 1e-6


@dataclass
class GammaProblem:
    h: np.ndarray
    xi: np.ndarray
    spec: DivergenceSpec

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.xi = np.asarray(self.xi, dtype=self.h.dtype)
        if self.h.ndim != 1 or self.h.shape != self.xi.shape:
            raise ValueError("h and xi must be 1-d arrays of equal length")
        if self.h.size == 0:
            raise ValueError("empty problem")
        if not np.all(np.isfinite(self.h)):
            raise ValueError("h must be finite")
        if np.any(self.xi < 0) or abs(float(self.xi.sum()) - 1.0) > 1e-12 * max(1, self.xi.size):
            raise ValueError("xi must be a probability vector")


@dataclass
class GammaResult:
    gamma: float
    newton_iterations: int
    collapsed: bool
    gradient: np.ndarray | None = field(default=None, repr=False)


def _weighted_sum(values: np.ndarray, xi: np.ndarray) -> np.ndarray:
    if np.all(xi > 0):
        return values @ xi
    # zero-weight atoms must not turn an infinite derivative into nan
    keep = xi > 0
    return values[..., keep] @ xi[keep]


def _residual(spec, H, gamma, xi):
    with np.errstate(over="ignore", invalid="ignore"):
        return _weighted_sum(spec.conj_prime(H - gamma[:, None]), xi) - 1.0


def solve_gamma_batch(
    H: np.ndarray,
    xi: np.ndarray,
    spec: DivergenceSpec,
    delta: float | np.ndarray | None = None,
    newton_tol: float | None = None,
    max_iters: int = 100,
    gamma0: np.ndarray | None = None,
):
    """Solve one gamma problem per row of ``H``.

    ``gamma0`` replaces the standard starting point with a warm start (it is
    lifted above the feasibility bound when needed).  Returns
    ``(gamma, iterations, collapsed)`` as arrays of length ``H.shape[0]``.
    """
    H = np.asarray(H)
    dtype = H.dtype if H.dtype.kind == "f" else np.float64
    H = H.astype(dtype, copy=False)
    xi = np.asarray(xi, dtype=dtype)
    if newton_tol is None:
        newton_tol = default_newton_tol(dtype)
    if not np.all(np.isfinite(H)):
        raise NumericalError(f"non-finite transform input for {spec.name} in {np.dtype(dtype).name}")

    m = H.shape[0]
    hmax = H.max(axis=1)
    hmin = H.min(axis=1)
    b = spec.phi_prime_inf
    if delta is None:
        delta = 1e-3 * (1.0 + np.abs(hmax))

    gamma = np.empty(m, dtype=dtype)
    iters = np.zeros(m, dtype=np.int64)
    collapsed = np.zeros(m, dtype=bool)
    hi = hmax.copy()

    if math.isfinite(b):
        bound = hmax - b
        probe = np.maximum(bound + COLLAPSE_OFFSET, np.nextafter(bound, np.inf))
        collapsed = _residual(spec, H, probe, xi) < 0.0
        lo = np.maximum(hmin, bound)
        gamma[:] = bound + delta
    else:
        bound = None
        lo = hmin.copy()
        gamma[:] = H @ xi
    if gamma0 is not None:
        gamma[:] = gamma0 if bound is None else np.maximum(gamma0, bound + delta)
    if bound is not None:
        gamma[collapsed] = bound[collapsed]

    active = np.flatnonzero(~collapsed)
    lo_a, hi_a = lo[active], hi[active]
    # step before last, as in rtsafe: Newton must at least halve it
    dx_old = hi_a - lo_a
    dx = dx_old.copy()
    ulp = 4 * np.finfo(dtype).eps

    for _ in range(max_iters):
        if active.size == 0:
            break
        Ha = H[active]
        g = gamma[active]
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            args = Ha - g[:, None]
            d1, d2 = spec.derivatives(args)
            r = _weighted_sum(d1, xi) - 1.0
            d = _weighted_sum(d2, xi)
            # far above the root, step on log(sum) instead: plain Newton only
            # moves by O(1) per step there when conj' grows exponentially
            cand = np.where(r > 1.0, g + (r + 1.0) * np.log1p(r) / d, g + r / d)
        if np.any(np.isnan(r)):
            raise NumericalError(f"nan residual in {spec.name} transform ({np.dtype(dtype).name} precision)")
        lo_a = np.where(r >= 0, np.maximum(lo_a, g), lo_a)
        hi_a = np.where(r <= 0, np.minimum(hi_a, g), hi_a)
        newton_ok = np.isfinite(cand) & (cand >= lo_a) & (cand <= hi_a)
        converged = newton_ok & (np.abs(cand - g) < newton_tol) & (np.abs(r) <= newton_tol)
        interior = newton_ok & (cand > lo_a) & (cand < hi_a)
        shrinking = np.abs(cand - g) <= 0.5 * np.abs(dx_old)
        bad = ~converged & ~(interior & shrinking)
        cand = np.where(bad, 0.5 * (lo_a + hi_a), cand)
        dx_old, dx = dx, cand - g
        gamma[active] = cand
        iters[active] += 1

        done = converged | (r == 0) | (hi_a - lo_a <= ulp * np.maximum(np.abs(cand), 1.0))
        if np.any(done):
            keep = ~done
            active = active[keep]
            lo_a, hi_a, dx_old, dx = lo_a[keep], hi_a[keep], dx_old[keep], dx[keep]

    if active.size:
        res = _residual(spec, H[active], gamma[active], xi)
        worst = int(np.argmax(np.abs(res)))
        raise NewtonNonConvergence(
            f"{spec.name} transform did not converge in {max_iters} Newton steps "
            f"({active.size} of {m} problems open)",
            gamma=float(gamma[active][worst]),
            residual=float(res[worst]),
        )
    if not np.all(np.isfinite(gamma)):
        raise NumericalError(f"non-finite gamma in {spec.name} transform ({np.dtype(dtype).name} precision)")
    return gamma, iters, collapsed


def solve_gamma(
    problem: GammaProblem,
    delta: float | None = None,
    newton_tol: float | None = None,
    max_iters: int = 100,
    gradient: bool = False,
) -> GammaResult:
    gamma, iters, collapsed = solve_gamma_batch(
        problem.h[None, :], problem.xi, problem.spec, delta, newton_tol, max_iters
    )
    res = GammaResult(gamma=float(gamma[0]), newton_iterations=int(iters[0]), collapsed=bool(collapsed[0]))
    if gradient and not res.collapsed:
        res.gradient = gamma_gradient(problem, res.gamma)
    return res


def gamma_gradient(problem: GammaProblem, gamma: float) -> np.ndarray:
    """Implicit-function gradient of gamma with respect to h.

    Differentiating the defining equation gives ``xi * conj''(h - gamma)``
    normalised to unit sum.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        w = np.where(problem.xi > 0, problem.xi * problem.spec.conj_second(problem.h - gamma), 0.0)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise NumericalError(f"degenerate second derivative in {problem.spec.name} gradient")
    return w / total
