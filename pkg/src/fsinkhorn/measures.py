"""Discrete measures, ground costs and the synthetic 2-D point-cloud pairs."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

__all__ = [
    "DiscreteMeasure",
    "Cost",
    "COSTS",
    "CostMatrix",
    "build_cost",
    "DATASETS",
    "generate_dataset",
    "make_rng",
    "load_csv",
    "save_csv",
    "measure_to_csv",
    "measure_from_csv",
]

WEIGHT_TOL = 1e-12
RENORMALIZE_TOL = 1e-9


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud: ``points`` is ``(n, d)``, ``weights`` sums to one."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        w = np.array(self.weights, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or w.shape != (pts.shape[0],):
            raise ValueError(f"points {pts.shape} and weights {w.shape} do not match")
        if pts.shape[0] == 0:
            raise ValueError("a measure needs at least one support point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("support points must be finite")
        if not np.all(w > 0):
            raise ValueError("weights must be strictly positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOL * max(1.0, np.sqrt(w.size)):
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        pts = np.asarray(points, dtype=np.float64)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


# --------------------------------------------------------------------------
# costs


@dataclass(frozen=True)
class Cost:
    name: str
    pairwise: Callable[[np.ndarray, np.ndarray], np.ndarray]
    # (k, d), (l, d) -> (k, l, d) gradient in the first argument
    grad_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    scalar: Callable[[np.ndarray, np.ndarray], float]


def _half_sq_pairwise(X, Y):
    diff = X[:, None, :] - Y[None, :, :]
    return 0.5 * np.einsum("ijk,ijk->ij", diff, diff)


def _half_sq_scalar(x, y):
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return 0.5 * float(np.einsum("k,k->", diff, diff))


def _sq_pairwise(X, Y):
    return 2.0 * _half_sq_pairwise(X, Y)


COSTS: dict[str, Cost] = {
    "half_sq_euclidean": Cost(
        "half_sq_euclidean",
        _half_sq_pairwise,
        lambda X, Y: X[:, None, :] - Y[None, :, :],
        _half_sq_scalar,
    ),
    "sq_euclidean": Cost(
        "sq_euclidean",
        _sq_pairwise,
        lambda X, Y: 2.0 * (X[:, None, :] - Y[None, :, :]),
        lambda x, y: 2.0 * _half_sq_scalar(x, y),
    ),
}


@dataclass(frozen=True)
class CostMatrix:
    values: np.ndarray
    cost_id: str = "half_sq_euclidean"
    cost: Cost = field(default=COSTS["half_sq_euclidean"], repr=False)

    @property
    def shape(self):
        return self.values.shape


def build_cost(mu: DiscreteMeasure, nu: DiscreteMeasure, cost_id: str = "half_sq_euclidean") -> CostMatrix:
    if cost_id not in COSTS:
        raise KeyError(f"unknown cost {cost_id!r}; valid: {', '.join(COSTS)}")
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    cost = COSTS[cost_id]
    values = cost.pairwise(mu.points, nu.points)
    values.setflags(write=False)
    return CostMatrix(values, cost_id, cost)


# --------------------------------------------------------------------------
# synthetic data
#
# The four pairs imitate the "crescents", "densities", "moons" and "slopes"
# clouds of the global-divergences demos.  All samplers draw from numpy's
# PCG64 bit generator and reject anything outside the unit square, so the
# clouds are a pure function of (name, n, seed).


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _rejection(rng, n, draw):
    out = np.empty((0, 2))
    while out.shape[0] < n:
        batch = draw(rng, 2 * (n - out.shape[0]) + 16)
        keep = np.all((batch >= 0.0) & (batch <= 1.0), axis=1)
        out = np.vstack([out, batch[keep]])
    return out[:n]


def _arc(center, radius, theta0, theta1, noise):
    def draw(rng, m):
        theta = rng.uniform(theta0, theta1, m)
        rad = radius + noise * rng.standard_normal(m)
        return np.column_stack([center[0] + rad * np.cos(theta), center[1] + rad * np.sin(theta)])

    return draw


def _mixture(means, scales, probs):
    means = np.asarray(means, dtype=float)
    scales = np.asarray(scales, dtype=float)
    probs = np.asarray(probs, dtype=float)

    def draw(rng, m):
        comp = rng.choice(len(probs), size=m, p=probs)
        return means[comp] + scales[comp, None] * rng.standard_normal((m, 2))

    return draw


def _graded(axis: int, increasing: bool, box):
    (x0, x1), (y0, y1) = box

    def draw(rng, m):
        # density proportional to the coordinate along ``axis``: inverse cdf sqrt(u)
        g = np.sqrt(rng.uniform(0.0, 1.0, m))
        if not increasing:
            g = 1.0 - g
        u = rng.uniform(0.0, 1.0, m)
        if axis == 0:
            return np.column_stack([x0 + (x1 - x0) * g, y0 + (y1 - y0) * u])
        return np.column_stack([x0 + (x1 - x0) * u, y0 + (y1 - y0) * g])

    return draw


DATASETS = {
    "crescents": (
        _arc((0.5, 0.35), 0.3, 0.15 * np.pi, 0.85 * np.pi, 0.03),
        _arc((0.5, 0.65), 0.3, 1.15 * np.pi, 1.85 * np.pi, 0.03),
    ),
    "densities": (
        _mixture([(0.35, 0.4), (0.45, 0.65)], [0.1, 0.08], [0.6, 0.4]),
        _mixture([(0.65, 0.35), (0.6, 0.65), (0.5, 0.5)], [0.08, 0.1, 0.08], [0.35, 0.45, 0.2]),
    ),
    "moons": (
        _arc((0.35, 0.45), 0.25, 0.0, np.pi, 0.04),
        _arc((0.65, 0.55), 0.25, np.pi, 2.0 * np.pi, 0.04),
    ),
    "slopes": (
        _graded(0, True, ((0.1, 0.6), (0.1, 0.9))),
        _graded(1, False, ((0.4, 0.9), (0.1, 0.9))),
    ),
}


def generate_dataset(name: str, n: int, seed: int, m: int | None = None):
    """Sample the ``(mu, nu)`` pair ``name`` with ``n`` (and ``m``) uniform atoms."""
    if name not in DATASETS:
        raise KeyError(f"unknown dataset {name!r}; valid: {', '.join(DATASETS)}")
    if n < 1 or (m is not None and m < 1):
        raise ValueError("cloud sizes must be positive")
    draw_mu, draw_nu = DATASETS[name]
    rng = make_rng(seed)
    x = _rejection(rng, n, draw_mu)
    y = _rejection(rng, n if m is None else m, draw_nu)
    return DiscreteMeasure.uniform(x), DiscreteMeasure.uniform(y)


# --------------------------------------------------------------------------
# CSV


def measure_to_csv(measure: DiscreteMeasure) -> str:
    if measure.dim != 2:
        raise ValueError("the CSV format stores 2-D clouds only")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "weight"])
    for (x, y), wt in zip(measure.points, measure.weights):
        w.writerow([repr(float(x)), repr(float(y)), repr(float(wt))])
    return buf.getvalue()


def measure_from_csv(text: str) -> DiscreteMeasure:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["x", "y", "weight"]:
        raise ValueError("expected header 'x,y,weight'")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ValueError("no support points")
    try:
        data = np.array([[float(c) for c in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"bad number in point cloud: {exc}") from None
    if data.shape[1] != 3:
        raise ValueError("each row needs exactly three columns")
    weights = data[:, 2]
    if np.any(weights <= 0):
        raise ValueError("weights must be strictly positive")
    total = weights.sum()
    if abs(total - 1.0) > RENORMALIZE_TOL:
        raise ValueError(f"weights sum to {total!r}; off by more than {RENORMALIZE_TOL}")
    if total != 1.0:
        weights = weights / total
    return DiscreteMeasure(data[:, :2], weights)


def save_csv(measure: DiscreteMeasure, path) -> None:
    Path(path).write_text(measure_to_csv(measure), encoding="utf-8", newline="\n")


def load_csv(path) -> DiscreteMeasure:
    return measure_from_csv(Path(path).read_text(encoding="utf-8"))
