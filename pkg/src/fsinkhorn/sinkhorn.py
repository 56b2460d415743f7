"""Generalized Sinkhorn iterations for f-divergence regularized transport.

Potentials are updated by alternating (c, eps, phi)-transforms:

    g_j = -eps * gamma_mu((f - C[:, j]) / eps),   g <- g - g[anchor]
    f_i = -eps * gamma_nu((g - C[i, :]) / eps)

until ``max |f - f_prev| < tol``.  The optimal coupling then has density
``conj'((f_i + g_j - C_ij) / eps)`` against ``mu (x) nu``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .divergence import DivergenceSpec, get_divergence
from .measures import CostMatrix, DiscreteMeasure, build_cost
from .transform import NewtonNonConvergence, TransformError, default_newton_tol, solve_gamma_batch

__all__ = [
    "ProblemInstance",
    "Potentials",
    "Coupling",
    "SolveReport",
    "NewtonConfig",
    "PrecisionError",
    "SinkhornError",
    "solve",
    "dual_value",
    "primal_value",
    "coupling_from_potentials",
    "loss_and_gradient",
    "sparsity",
    "TuneResult",
    "tune_epsilon",
]

log = logging.getLogger(__name__)

MARGINAL_WARN = 1e-3
DENSITY_FLOOR = 1e-300
FEASIBILITY_SLACK = 1e-9
PRECISIONS = {"single": np.float32, "double": np.float64}


class PrecisionError(ValueError):
    pass


class SinkhornError(RuntimeError):
    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class ProblemInstance:
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    cost: CostMatrix
    spec: DivergenceSpec
    epsilon: float

    def __post_init__(self):
        if self.cost.shape != (self.mu.size, self.nu.size):
            raise ValueError(f"cost shape {self.cost.shape} does not match ({self.mu.size}, {self.nu.size})")
        if not np.all(np.isfinite(self.cost.values)):
            raise ValueError("cost matrix must be finite")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def from_measures(cls, mu, nu, divergence="kl", epsilon=0.1, cost_id="half_sq_euclidean"):
        spec = divergence if isinstance(divergence, DivergenceSpec) else get_divergence(divergence)
        return cls(mu, nu, build_cost(mu, nu, cost_id), spec, float(epsilon))

    def with_epsilon(self, epsilon: float) -> "ProblemInstance":
        return replace(self, epsilon=float(epsilon))


@dataclass
class Potentials:
    f: np.ndarray
    g: np.ndarray
    anchor_index: int = 0


@dataclass
class Coupling:
    pi: np.ndarray
    row_marginal_error: float
    col_marginal_error: float
    positive_fraction: float


@dataclass
class NewtonConfig:
    tol: float | None = None
    delta: float | None = None
    max_iters: int = 100
    # start each transform from the current potentials instead of the
    # textbook starting point; the first sweep always uses the latter
    warm_start: bool = True


@dataclass
class SolveReport:
    divergence: str
    epsilon: float
    precision: str
    iterations: int
    converged: bool
    dual_trace: np.ndarray = field(repr=False)
    primal_value: float
    primal_value_floored: float
    dual_value: float
    duality_gap: float
    row_marginal_error: float
    col_marginal_error: float
    positive_fraction: float
    marginal_flag: bool
    wall_time: float
    newton_iterations: int = 0

    @property
    def relative_gap(self) -> float:
        if not math.isfinite(self.primal_value):
            return math.inf
        return abs(self.duality_gap) / (1.0 + abs(self.primal_value))


def _scaled_conj_terms(instance: ProblemInstance, f, g):
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    return (f[:, None] + g[None, :] - instance.cost.values) / instance.epsilon


def dual_value(instance: ProblemInstance, potentials: Potentials) -> float:
    """``<mu, f> + <nu, g> - eps * sum mu_i nu_j conj((f_i + g_j - C_ij) / eps)``.

    Returns ``-inf`` when some argument leaves the conjugate domain.
    """
    f = np.asarray(potentials.f, dtype=np.float64)
    g = np.asarray(potentials.g, dtype=np.float64)
    args = _scaled_conj_terms(instance, f, g)
    b = instance.spec.phi_prime_inf
    if math.isfinite(b):
        if np.any(args > b + FEASIBILITY_SLACK / instance.epsilon):
            return -math.inf
        args = np.minimum(args, b)
    with np.errstate(over="ignore"):
        vals = instance.spec.conj(args)
    penalty = instance.mu.weights @ vals @ instance.nu.weights
    return float(instance.mu.weights @ f + instance.nu.weights @ g - instance.epsilon * penalty)


def primal_value(instance: ProblemInstance, coupling: Coupling | np.ndarray, floor: float = 0.0) -> float:
    """``<C, pi> + eps * sum mu_i nu_j phi(pi_ij / (mu_i nu_j))``.

    ``floor`` lifts exactly-zero densities before ``phi`` is applied; with the
    default of zero the value is ``+inf`` whenever a zero density meets a
    generator with ``phi(0) = inf``.
    """
    pi = coupling.pi if isinstance(coupling, Coupling) else np.asarray(coupling)
    pi = np.asarray(pi, dtype=np.float64)
    if np.any(pi < 0):
        raise ValueError("coupling must be nonnegative")
    prod = np.outer(instance.mu.weights, instance.nu.weights)
    density = pi / prod
    if floor > 0:
        density = np.maximum(density, floor)
    with np.errstate(over="ignore", invalid="ignore"):
        phi = instance.spec.phi_plus(density)
    transport = float(np.sum(instance.cost.values * pi))
    reg = float(np.sum(prod * phi))
    return transport + instance.epsilon * reg


def coupling_from_potentials(instance: ProblemInstance, f, g) -> Coupling:
    args = _scaled_conj_terms(instance, f, g)
    with np.errstate(over="ignore"):
        density = instance.spec.conj_prime(args)
    pi = density * np.outer(instance.mu.weights, instance.nu.weights)
    row_err = float(np.abs(pi.sum(axis=1) - instance.mu.weights).sum())
    col_err = float(np.abs(pi.sum(axis=0) - instance.nu.weights).sum())
    return Coupling(pi, row_err, col_err, sparsity(pi))


def sparsity(coupling: Coupling | np.ndarray) -> float:
    """Fraction of strictly positive coupling entries."""
    pi = coupling.pi if isinstance(coupling, Coupling) else np.asarray(coupling)
    return float(np.count_nonzero(pi > 0)) / pi.size


def _check_precision(spec: DivergenceSpec, precision: str):
    if precision not in PRECISIONS:
        raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
    if spec.min_precision == "double" and precision != "double":
        raise PrecisionError(f"the {spec.name} divergence needs double precision")
    return PRECISIONS[precision]


def solve(
    instance: ProblemInstance,
    tol: float = 1e-6,
    max_iters: int = 50_000,
    newton: NewtonConfig | None = None,
    precision: str = "double",
    init: Potentials | None = None,
    marginal_warn: float = MARGINAL_WARN,
):
    """Run the generalized Sinkhorn loop.

    Returns ``(potentials, coupling, report)``.  Hitting ``max_iters`` is not an
    error; the report then says ``converged=False``.  Transform failures are
    re-raised as :class:`SinkhornError` carrying the iteration number.
    """
    dtype = _check_precision(instance.spec, precision)
    newton = newton or NewtonConfig()
    ntol = newton.tol if newton.tol is not None else default_newton_tol(dtype)
    spec, eps = instance.spec, instance.epsilon
    C = instance.cost.values.astype(dtype)
    mu_w = instance.mu.weights.astype(dtype)
    nu_w = instance.nu.weights.astype(dtype)
    k, l = C.shape
    anchor = 0

    if init is None:
        f = np.zeros(k, dtype=dtype)
        g = np.zeros(l, dtype=dtype)
    else:
        f = np.asarray(init.f, dtype=dtype).copy()
        g = np.asarray(init.g, dtype=dtype).copy()
        anchor = init.anchor_index

    start = time.perf_counter()
    trace = []
    newton_steps = 0
    converged = False
    it = 0
    eps_t = dtype(eps)
    while it < max_iters:
        it += 1
        f_prev = f
        warm = newton.warm_start and (it > 1 or init is not None)
        try:
            gam, n_it, _ = solve_gamma_batch(
                ((f[:, None] - C) / eps_t).T, mu_w, spec, newton.delta, ntol, newton.max_iters,
                gamma0=-g / eps_t if warm else None,
            )
            newton_steps += int(n_it.sum())
            g = -eps_t * gam
            g = g - g[anchor]
            gam, n_it, _ = solve_gamma_batch(
                (g[None, :] - C) / eps_t, nu_w, spec, newton.delta, ntol, newton.max_iters,
                gamma0=-f / eps_t if warm else None,
            )
            newton_steps += int(n_it.sum())
            f = -eps_t * gam
        except NewtonNonConvergence as exc:
            raise SinkhornError(f"iteration {it}: {exc} (last gamma {exc.gamma}, residual {exc.residual})", it) from exc
        except TransformError as exc:
            raise SinkhornError(f"iteration {it}: {exc}", it) from exc
        trace.append(dual_value(instance, Potentials(f, g, anchor)))
        if np.max(np.abs(f - f_prev)) < tol:
            converged = True
            break

    wall = time.perf_counter() - start
    potentials = Potentials(f, g, anchor)
    coupling = coupling_from_potentials(instance, f, g)
    dual = trace[-1] if trace else dual_value(instance, potentials)
    primal = primal_value(instance, coupling)
    floored = primal_value(instance, coupling, floor=DENSITY_FLOOR) if not math.isfinite(primal) else primal
    flag = max(coupling.row_marginal_error, coupling.col_marginal_error) > marginal_warn
    if flag:
        log.warning(
            "%s eps=%g: marginal error %.3g exceeds %.1g",
            spec.name, eps, max(coupling.row_marginal_error, coupling.col_marginal_error), marginal_warn,
        )
    report = SolveReport(
        divergence=spec.name,
        epsilon=eps,
        precision=precision,
        iterations=it,
        converged=converged,
        dual_trace=np.asarray(trace),
        primal_value=primal,
        primal_value_floored=floored,
        dual_value=dual,
        duality_gap=primal - dual,
        row_marginal_error=coupling.row_marginal_error,
        col_marginal_error=coupling.col_marginal_error,
        positive_fraction=coupling.positive_fraction,
        marginal_flag=flag,
        wall_time=wall,
        newton_iterations=newton_steps,
    )
    return potentials, coupling, report


def loss_and_gradient(instance: ProblemInstance, coupling: Coupling | np.ndarray, wrt_nu: bool = False):
    """Transport loss ``<C, pi>`` with ``pi`` held fixed, and its point gradients.

    Returns ``(loss, grad_mu)`` or ``(loss, grad_mu, grad_nu)`` when ``wrt_nu``.
    """
    pi = coupling.pi if isinstance(coupling, Coupling) else np.asarray(coupling)
    pi = np.asarray(pi, dtype=np.float64)
    X, Y = instance.mu.points, instance.nu.points
    loss = float(np.sum(instance.cost.values * pi))
    cost = instance.cost.cost
    grad_mu = np.einsum("ij,ijd->id", pi, cost.grad_x(X, Y))
    if not wrt_nu:
        return loss, grad_mu
    # the registered costs are symmetric, so d/dy c(x, y) = grad_x c(y, x)
    grad_nu = np.einsum("ij,jid->jd", pi, cost.grad_x(Y, X))
    return loss, grad_mu, grad_nu


# --------------------------------------------------------------------------
# epsilon tuning


@dataclass
class TuneResult:
    epsilon: float
    iterations: int
    converged: bool
    warning: str | None
    probes: list[tuple[float, int, bool]]
    bounds: tuple[float, float]
    monotone: bool = True


def tune_epsilon(
    instance: ProblemInstance,
    target_iters: int,
    tol: float = 1e-6,
    eps_bounds: tuple[float, float] = (1e-8, 1.0),
    max_probes: int = 30,
    precision: str = "double",
    newton: NewtonConfig | None = None,
) -> TuneResult:
    """Bisect ``log10(eps)`` for a solve taking ``[target, 1.2 * target)`` iterations.

    Larger ``eps`` converges faster.  Probes are capped at ``3 * target``
    iterations; a capped, failing or marginal-flagged probe counts as "too
    slow".
    """
    if target_iters < 1:
        raise ValueError("target_iters must be positive")
    lo_eps, hi_eps = eps_bounds
    upper = max(int(math.ceil(1.2 * target_iters)), target_iters + 1)
    cap = 3 * target_iters + 10
    probes: list[tuple[float, int, bool]] = []

    def run(eps: float) -> tuple[int, bool]:
        try:
            _, _, rep = solve(instance.with_epsilon(eps), tol=tol, max_iters=cap, newton=newton, precision=precision)
            # a tau-converged run with broken marginals is not a usable epsilon;
            # tiny epsilons stall that way long before they get slow
            it, ok = rep.iterations, rep.converged and not rep.marginal_flag
        except Exception:
            it, ok = cap, False
        probes.append((eps, it if ok else cap, ok))
        return (it if ok else cap + 1), ok

    def result(eps, it, ok, warning=None):
        mono = _monotone(probes)
        if not mono and warning is None:
            warning = "iteration counts were not monotone in epsilon"
        return TuneResult(eps, it, ok, warning, probes, (lo_eps, hi_eps), mono)

    it_hi, ok_hi = run(hi_eps)
    if ok_hi and target_iters <= it_hi < upper:
        return result(hi_eps, it_hi, ok_hi)
    if it_hi >= upper:
        return result(hi_eps, it_hi, ok_hi, "target below what the largest epsilon achieves; clamped to upper bound")
    it_lo, ok_lo = run(lo_eps)
    if it_lo < target_iters:
        return result(lo_eps, it_lo, ok_lo, "target above what the smallest epsilon needs; clamped to lower bound")

    a, b = math.log10(lo_eps), math.log10(hi_eps)
    best = (hi_eps, it_hi, ok_hi)
    for _ in range(max_probes):
        mid = 0.5 * (a + b)
        eps = 10.0**mid
        it, ok = run(eps)
        if ok and abs(math.log(max(it, 1) / target_iters)) < abs(math.log(max(best[1], 1) / target_iters)):
            best = (eps, it, ok)
        if ok and target_iters <= it < upper:
            return result(eps, it, ok)
        if it < target_iters:
            b = mid
        else:
            a = mid
    return result(*best, warning="no epsilon in the target window after the probe budget")


def _monotone(probes) -> bool:
    ordered = sorted(probes)
    counts = [p[1] for p in ordered]
    return all(x >= y for x, y in zip(counts, counts[1:]))
