"""Legendre-type f-divergence generators and their convex conjugates.

Every generator ``phi`` is normalised so that ``phi(1) = 0`` and restricted to
the nonnegative half-line (``phi_plus = phi + indicator(s >= 0)``).  The
solver only ever needs the conjugate ``phi_plus^*`` and its first two
derivatives; the primal generator and its derivative are kept for the primal
objective and for the test oracles.

All functions accept scalars or numpy arrays and are evaluated elementwise.
Outside the conjugate domain ``(-inf, phi_prime_inf]`` the conjugate and its
derivatives are ``+inf``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "DivergenceSpec",
    "DIVERGENCES",
    "get_divergence",
    "lambert_w",
    "log_lambert_w_exp",
    "primal_generator_value",
]

ArrayFn = Callable[[np.ndarray], np.ndarray]

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class DivergenceSpec:
    name: str
    phi_plus: ArrayFn
    phi_prime: ArrayFn
    conj: ArrayFn
    conj_prime: ArrayFn
    conj_second: ArrayFn
    phi_prime_inf: float
    phi_at_zero: float
    min_precision: str = "single"
    # optional fused (conj', conj'') evaluation sharing work between the two
    conj_derivatives: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None

    def derivatives(self, t):
        """``(conj_prime(t), conj_second(t))`` in one call."""
        if self.conj_derivatives is not None:
            return self.conj_derivatives(t)
        return self.conj_prime(t), self.conj_second(t)

    @property
    def finite_slope(self) -> bool:
        """True when ``phi'(inf) < inf``, i.e. dual feasibility is capped."""
        return math.isfinite(self.phi_prime_inf)

    def __repr__(self) -> str:
        return f"DivergenceSpec({self.name!r})"


def _arr(x) -> np.ndarray:
    a = np.asarray(x)
    if a.dtype.kind == "f":
        return a
    return a.astype(np.float64)


def _out(x, val):
    # scalars in, scalars out
    if np.ndim(x) == 0:
        return val[()] if isinstance(val, np.ndarray) else val
    return val


def _primal(expr: Callable[[np.ndarray], np.ndarray], at_zero: float) -> ArrayFn:
    def phi_plus(x):
        s = _arr(x)
        if s.ndim and s.size and s.min() > 0:
            with np.errstate(over="ignore"):
                return expr(s).astype(s.dtype, copy=False)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            pos = np.where(s > 0, s, 1.0)
            val = np.where(s > 0, expr(pos), at_zero)
        val = np.where(s < 0, np.inf, val)
        return _out(x, val.astype(s.dtype, copy=False))

    return phi_plus


def _subgradient(expr: Callable[[np.ndarray], np.ndarray], at_zero: float) -> ArrayFn:
    def phi_prime(x):
        s = _arr(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            pos = np.where(s > 0, s, 1.0)
            val = np.where(s > 0, expr(pos), at_zero)
        val = np.where(s < 0, np.nan, val)
        return _out(x, val.astype(s.dtype, copy=False))

    return phi_prime


def _capped(expr: Callable[[np.ndarray], np.ndarray], bound: float, at_bound: float | None) -> ArrayFn:
    """Wrap a conjugate formula valid on ``t < bound``.

    ``at_bound`` is the value at ``t == bound`` (``None`` means +inf), and
    anything beyond the bound is +inf.
    """

    def fn(x):
        t = _arr(x)
        inside = t < bound
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            val = expr(np.where(inside, t, bound - 1.0))
        edge = np.inf if at_bound is None else at_bound
        val = np.where(inside, val, np.where(t == bound, edge, np.inf))
        return _out(x, val.astype(t.dtype, copy=False))

    return fn


def _uncapped(expr: Callable[[np.ndarray], np.ndarray]) -> ArrayFn:
    def fn(x):
        t = _arr(x)
        with np.errstate(over="ignore", invalid="ignore"):
            val = expr(t)
        return _out(x, np.asarray(val, dtype=t.dtype))

    return fn


# --------------------------------------------------------------------------
# Lambert W


def lambert_w(x, max_iter: int = 50):
    """Principal branch of the Lambert W function for ``x >= 0``.

    Halley iteration on ``w * exp(w) - x`` started from ``log(1 + x)``.  The
    start lies above the root for every ``x > 0``, and Halley's method then
    decreases monotonically towards it.
    """
    xa = np.asarray(x, dtype=np.float64)
    if np.any(xa < 0) or np.any(np.isnan(xa)):
        raise ValueError("lambert_w is only implemented for x >= 0")
    w = np.log1p(xa)
    for _ in range(max_iter):
        ew = np.exp(w)
        f = w * ew - xa
        fp = ew * (w + 1.0)
        denom = fp - (w + 2.0) * f / (2.0 * w + 2.0)
        step = np.where(denom != 0, f / np.where(denom != 0, denom, 1.0), 0.0)
        w = w - step
        if np.all(np.abs(step) <= 1e-15 * np.maximum(np.abs(w), 1e-300)):
            break
    return _out(x, w)


def log_lambert_w_exp(z, max_iter: int = 60):
    """Return ``log W(exp(z))`` without forming ``exp(z)``.

    With ``u = log W(e^z)`` the defining relation becomes ``u + e^u = z``.  The
    left side is convex and increasing in ``u``, so Newton's method started at
    a point where it overshoots (``u0 = z`` for ``z < 1``, ``u0 = log z``
    otherwise) decreases monotonically to the root.  Works for all finite z.
    """
    za = np.asarray(z, dtype=np.float64)
    u = np.where(za < 1.0, za, np.log(np.maximum(za, 1.0)))
    for _ in range(max_iter):
        eu = np.exp(u)
        step = (u + eu - za) / (1.0 + eu)
        u = u - step
        if np.all(np.abs(step) <= 4e-16 * np.maximum(np.abs(u), 1.0)):
            break
    return _out(z, u)


# --------------------------------------------------------------------------
# Jeffreys conjugate, written through u = log W(e^{1 - t})


def _jeffreys_conj(t):
    u = log_lambert_w_exp(1.0 - np.asarray(t, dtype=np.float64))
    with np.errstate(over="ignore"):
        return t + np.exp(u) + np.exp(-u) - 2.0


def _jeffreys_conj_prime(t):
    u = log_lambert_w_exp(1.0 - np.asarray(t, dtype=np.float64))
    with np.errstate(over="ignore"):
        return np.exp(-u)


def _jeffreys_conj_second(t):
    u = log_lambert_w_exp(1.0 - np.asarray(t, dtype=np.float64))
    w = np.exp(u)
    with np.errstate(over="ignore"):
        # 1/W - 1/(W + 1) == 1 / (W (W + 1))
        return np.exp(-u) / (w + 1.0)


def _jeffreys_derivatives(t):
    t = _arr(t)
    u = log_lambert_w_exp(1.0 - t.astype(np.float64))
    with np.errstate(over="ignore"):
        inv_w = np.exp(-u)
        second = inv_w / (np.exp(u) + 1.0)
    return inv_w.astype(t.dtype, copy=False), second.astype(t.dtype, copy=False)


def _capped_derivatives(expr, bound: float):
    """Fused first and second derivative for conjugates capped at ``bound``.

    Both derivatives are +inf from the bound on.
    """

    def fn(t):
        t = _arr(t)
        inside = t < bound
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            d1, d2 = expr(np.where(inside, t, bound - 1.0))
        d1 = np.where(inside, d1, np.inf).astype(t.dtype, copy=False)
        d2 = np.where(inside, d2, np.inf).astype(t.dtype, copy=False)
        return d1, d2

    return fn


def _tri_derivatives(t):
    r = np.sqrt(1.0 - np.maximum(t, -3.0))
    inv = 1.0 / r
    low = t < -3.0
    return np.where(low, 0.0, 2.0 * inv - 1.0), np.where(low, 0.0, inv * inv * inv)


def _rchi2_derivatives(t):
    inv = 1.0 / np.sqrt(1.0 - t)
    return inv, 0.5 * inv * inv * inv


# --------------------------------------------------------------------------
# registry


def _build() -> dict[str, DivergenceSpec]:
    specs = {}

    specs["kl"] = DivergenceSpec(
        name="kl",
        phi_plus=_primal(lambda s: s * np.log(s) - s + 1.0, 1.0),
        phi_prime=_subgradient(np.log, -np.inf),
        conj=_uncapped(lambda t: np.expm1(t)),
        conj_prime=_uncapped(np.exp),
        conj_second=_uncapped(np.exp),
        phi_prime_inf=math.inf,
        phi_at_zero=1.0,
    )

    specs["reverse_kl"] = DivergenceSpec(
        name="reverse_kl",
        phi_plus=_primal(lambda s: s - 1.0 - np.log(s), math.inf),
        phi_prime=_subgradient(lambda s: (s - 1.0) / s, -np.inf),
        conj=_capped(lambda t: -np.log1p(-t), 1.0, None),
        conj_prime=_capped(lambda t: 1.0 / (1.0 - t), 1.0, None),
        conj_second=_capped(lambda t: 1.0 / (1.0 - t) ** 2, 1.0, None),
        phi_prime_inf=1.0,
        phi_at_zero=math.inf,
    )

    specs["chi2"] = DivergenceSpec(
        name="chi2",
        phi_plus=_primal(lambda s: (s - 1.0) ** 2, 1.0),
        phi_prime=_subgradient(lambda s: 2.0 * s - 2.0, -2.0),
        conj=_uncapped(lambda t: np.where(t >= -2.0, 0.25 * t * t + t, -1.0)),
        conj_prime=_uncapped(lambda t: np.where(t >= -2.0, 0.5 * t + 1.0, 0.0)),
        conj_second=_uncapped(lambda t: np.where(t >= -2.0, 0.5, 0.0)),
        phi_prime_inf=math.inf,
        phi_at_zero=1.0,
    )

    specs["reverse_chi2"] = DivergenceSpec(
        name="reverse_chi2",
        phi_plus=_primal(lambda s: 1.0 / s + s - 2.0, math.inf),
        phi_prime=_subgradient(lambda s: 1.0 - 1.0 / (s * s), -np.inf),
        conj=_capped(lambda t: 2.0 - 2.0 * np.sqrt(1.0 - t), 1.0, 2.0),
        conj_prime=_capped(lambda t: 1.0 / np.sqrt(1.0 - t), 1.0, None),
        conj_second=_capped(lambda t: 0.5 / np.sqrt(1.0 - t) ** 3, 1.0, None),
        phi_prime_inf=1.0,
        phi_at_zero=math.inf,
        conj_derivatives=_capped_derivatives(_rchi2_derivatives, 1.0),
    )

    specs["squared_hellinger"] = DivergenceSpec(
        name="squared_hellinger",
        phi_plus=_primal(lambda s: (np.sqrt(s) - 1.0) ** 2, 1.0),
        phi_prime=_subgradient(lambda s: 1.0 - 1.0 / np.sqrt(s), -np.inf),
        conj=_capped(lambda t: t / (1.0 - t), 1.0, None),
        conj_prime=_capped(lambda t: 1.0 / (1.0 - t) ** 2, 1.0, None),
        conj_second=_capped(lambda t: 2.0 / (1.0 - t) ** 3, 1.0, None),
        phi_prime_inf=1.0,
        phi_at_zero=1.0,
    )

    specs["jensen_shannon"] = DivergenceSpec(
        name="jensen_shannon",
        phi_plus=_primal(lambda s: s * np.log(s) - (s + 1.0) * np.log((s + 1.0) / 2.0), LOG2),
        phi_prime=_subgradient(lambda s: np.log(s) - np.log1p(s) + LOG2, -np.inf),
        conj=_capped(lambda t: -np.log(2.0 - np.exp(t)), LOG2, None),
        conj_prime=_capped(lambda t: 1.0 / (2.0 * np.exp(-t) - 1.0), LOG2, None),
        conj_second=_capped(lambda t: 2.0 * np.exp(t) / (np.exp(t) - 2.0) ** 2, LOG2, None),
        phi_prime_inf=LOG2,
        phi_at_zero=LOG2,
    )

    specs["jeffreys"] = DivergenceSpec(
        name="jeffreys",
        phi_plus=_primal(lambda s: (s - 1.0) * np.log(s), math.inf),
        phi_prime=_subgradient(lambda s: np.log(s) - 1.0 / s + 1.0, -np.inf),
        conj=_uncapped(_jeffreys_conj),
        conj_prime=_uncapped(_jeffreys_conj_prime),
        conj_second=_uncapped(_jeffreys_conj_second),
        phi_prime_inf=math.inf,
        phi_at_zero=math.inf,
        min_precision="double",
        conj_derivatives=_jeffreys_derivatives,
    )

    def tri_conj(t):
        r = np.sqrt(1.0 - np.maximum(t, -3.0))
        return np.where(t < -3.0, -1.0, (r - 1.0) * (r - 3.0))

    def tri_conj_prime(t):
        r = np.sqrt(1.0 - np.maximum(t, -3.0))
        return np.where(t < -3.0, 0.0, 2.0 / r - 1.0)

    def tri_conj_second(t):
        r = np.sqrt(1.0 - np.maximum(t, -3.0))
        return np.where(t < -3.0, 0.0, 1.0 / r**3)

    specs["triangular"] = DivergenceSpec(
        name="triangular",
        phi_plus=_primal(lambda s: (s - 1.0) ** 2 / (s + 1.0), 1.0),
        phi_prime=_subgradient(lambda s: (s - 1.0) * (s + 3.0) / (s + 1.0) ** 2, -3.0),
        conj=_capped(tri_conj, 1.0, 3.0),
        conj_prime=_capped(tri_conj_prime, 1.0, None),
        conj_second=_capped(tri_conj_second, 1.0, None),
        phi_prime_inf=1.0,
        phi_at_zero=1.0,
        conj_derivatives=_capped_derivatives(_tri_derivatives, 1.0),
    )
    return specs


DIVERGENCES: dict[str, DivergenceSpec] = _build()


def get_divergence(name: str) -> DivergenceSpec:
    try:
        return DIVERGENCES[name]
    except KeyError:
        valid = ", ".join(DIVERGENCES)
        raise KeyError(f"unknown divergence {name!r}; valid names are: {valid}") from None


def primal_generator_value(spec: DivergenceSpec, density: float) -> float:
    """``phi_plus(density)``; +inf at zero density for generators that blow up there."""
    if density < 0:
        raise ValueError(f"density must be nonnegative, got {density}")
    return float(spec.phi_plus(float(density)))
