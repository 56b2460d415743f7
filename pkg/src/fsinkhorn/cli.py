"""Command-line front end.

Subcommands: ``solve``, ``bench``, ``sparsity``, ``descend`` and ``tune``.
Exit codes: 0 when every solve converged, 2 when one did not, 1 on errors and
64 on bad flags.  JSON reports follow ``docs/report.schema.json``; non-finite
numbers are written as ``null``.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .divergence import DIVERGENCES
from .measures import COSTS, DATASETS, DiscreteMeasure, generate_dataset, load_csv, save_csv
from .sinkhorn import (
    NewtonConfig,
    PrecisionError,
    ProblemInstance,
    SinkhornError,
    loss_and_gradient,
    solve,
    tune_epsilon,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2
EXIT_USAGE = 64

log = logging.getLogger("fsinkhorn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(kind):
    def parse(text: str):
        items = [s.strip() for s in text.split(",") if s.strip()]
        try:
            return [kind(s) for s in items]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None

    return parse


def _positive(text: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not val > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return val


def _add_solver_flags(p: argparse.ArgumentParser):
    p.add_argument("--tol", type=_positive, default=1e-6, help="stop when max|f - f_prev| < tol")
    p.add_argument("--max-iters", type=int, default=50_000)
    p.add_argument("--newton-tol", type=_positive, default=None)
    p.add_argument("--newton-delta", type=_positive, default=None)
    p.add_argument("--precision", choices=["single", "double"], default="double")
    p.add_argument("--cost", choices=sorted(COSTS), default="half_sq_euclidean")


def _add_problem_flags(p: argparse.ArgumentParser, need_epsilon: bool):
    p.add_argument("--divergence", choices=list(DIVERGENCES), default="kl")
    p.add_argument("--epsilon", type=_positive, required=need_epsilon)
    p.add_argument("--dataset", choices=list(DATASETS))
    p.add_argument("--mu", type=Path, help="CSV point cloud (x,y,weight)")
    p.add_argument("--nu", type=Path, help="CSV point cloud (x,y,weight)")
    p.add_argument("--n", type=int, default=500, help="cloud size for --dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="JSON report path (stdout when omitted)")
    _add_solver_flags(p)


def _add_grid_flags(p: argparse.ArgumentParser):
    p.add_argument("--divergences", type=_csv_list(str), default=[], help="comma list; empty means all")
    p.add_argument("--epsilons", type=_csv_list(float), default=[0.1])
    p.add_argument("--datasets", type=_csv_list(str), default=list(DATASETS))
    p.add_argument("--seeds", type=_csv_list(int), default=[0, 1, 2])
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", type=Path, help="CSV table path (stdout when omitted)")
    _add_solver_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fsinkhorn", description="f-divergence regularized optimal transport")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one problem and write a JSON report")
    _add_problem_flags(p, need_epsilon=True)
    p.add_argument("--coupling-out", type=Path, help="write the coupling matrix as CSV")

    p = sub.add_parser("bench", help="iteration counts over a grid of settings")
    _add_grid_flags(p)

    p = sub.add_parser("sparsity", help="positive fraction of the coupling over a grid of settings")
    _add_grid_flags(p)

    p = sub.add_parser("descend", help="one gradient step on the mu cloud, then re-solve")
    _add_problem_flags(p, need_epsilon=False)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--target-iters", type=int, help="tune epsilon for this many iterations first")
    p.add_argument("--out-dir", type=Path, default=Path("."), help="where the plot CSVs go")

    p = sub.add_parser("tune", help="find epsilon for a target iteration count")
    _add_problem_flags(p, need_epsilon=False)
    p.add_argument("--target-iters", type=int, required=True)
    p.add_argument("--eps-min", type=_positive, default=1e-8)
    p.add_argument("--eps-max", type=_positive, default=1.0)
    return parser


# --------------------------------------------------------------------------
# helpers


def _json_value(x):
    if isinstance(x, dict):
        return {k: _json_value(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_value(v) for v in x]
    if isinstance(x, Path):
        return str(x)
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "handler"}


def _emit_json(payload: dict, path: Path | None):
    text = json.dumps(_json_value(payload), indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text, encoding="utf-8")


def _emit_csv(header, rows, path: Path | None):
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    if path is None:
        sys.stdout.write(buf.getvalue())
    else:
        path.write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def _measures(args) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    if args.dataset and (args.mu or args.nu):
        raise UsageError("use either --dataset or --mu/--nu, not both")
    if args.dataset:
        if args.n < 1:
            raise UsageError("--n must be positive")
        return generate_dataset(args.dataset, args.n, args.seed)
    if args.mu and args.nu:
        return load_csv(args.mu), load_csv(args.nu)
    raise UsageError("need --dataset or both --mu and --nu")


def _newton(args) -> NewtonConfig:
    return NewtonConfig(tol=args.newton_tol, delta=args.newton_delta)


def _solve_fields(report, loss: float) -> dict:
    return {
        "divergence": report.divergence,
        "epsilon": report.epsilon,
        "precision": report.precision,
        "iterations": report.iterations,
        "converged": report.converged,
        "dual_value": report.dual_value,
        "primal_value": report.primal_value,
        "primal_value_floored": report.primal_value_floored,
        "duality_gap": report.duality_gap,
        "row_marginal_error": report.row_marginal_error,
        "col_marginal_error": report.col_marginal_error,
        "positive_fraction": report.positive_fraction,
        "marginal_flag": report.marginal_flag,
        "wall_time_seconds": report.wall_time,
        "newton_iterations": report.newton_iterations,
        "transport_cost": loss,
    }


# --------------------------------------------------------------------------
# subcommands


def cmd_solve(args) -> int:
    mu, nu = _measures(args)
    inst = ProblemInstance.from_measures(mu, nu, args.divergence, args.epsilon, args.cost)
    _, coupling, report = solve(
        inst, tol=args.tol, max_iters=args.max_iters, newton=_newton(args), precision=args.precision
    )
    loss, _ = loss_and_gradient(inst, coupling)
    payload = {"command": "solve", **_solve_fields(report, loss), "config": _config(args)}
    _emit_json(payload, args.out)
    if args.coupling_out is not None:
        np.savetxt(args.coupling_out, coupling.pi, fmt="%.17g", delimiter=",")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _run_cell(cell: dict) -> dict:
    """One (divergence, epsilon, dataset, seed) solve; never raises."""
    out = {"iterations": None, "converged": False, "positive_fraction": None, "marginal_error": None, "error": ""}
    try:
        mu, nu = generate_dataset(cell["dataset"], cell["n"], cell["seed"])
        inst = ProblemInstance.from_measures(mu, nu, cell["divergence"], cell["epsilon"], cell["cost"])
        _, _, rep = solve(
            inst,
            tol=cell["tol"],
            max_iters=cell["max_iters"],
            newton=NewtonConfig(tol=cell["newton_tol"], delta=cell["newton_delta"]),
            precision=cell["precision"],
        )
    except (PrecisionError, SinkhornError, ArithmeticError) as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
        return out
    out.update(
        iterations=rep.iterations,
        converged=rep.converged,
        positive_fraction=rep.positive_fraction,
        marginal_error=max(rep.row_marginal_error, rep.col_marginal_error),
        marginal_flag=rep.marginal_flag,
    )
    return out


def _grid(args):
    divs = args.divergences or list(DIVERGENCES)
    for name in divs:
        if name not in DIVERGENCES:
            raise UsageError(f"unknown divergence {name!r}; valid: {', '.join(DIVERGENCES)}")
    for name in args.datasets:
        if name not in DATASETS:
            raise UsageError(f"unknown dataset {name!r}; valid: {', '.join(DATASETS)}")
    if not args.seeds:
        raise UsageError("--seeds must not be empty")
    if args.n < 1 or args.jobs < 1:
        raise UsageError("--n and --jobs must be positive")
    groups = [(d, e, ds) for d in divs for e in args.epsilons for ds in args.datasets]
    cells = [
        {
            "divergence": d, "epsilon": e, "dataset": ds, "seed": s, "n": args.n,
            "tol": args.tol, "max_iters": args.max_iters, "precision": args.precision,
            "newton_tol": args.newton_tol, "newton_delta": args.newton_delta, "cost": args.cost,
        }
        for d, e, ds in groups
        for s in args.seeds
    ]
    if args.jobs == 1:
        results = [_run_cell(c) for c in cells]
    else:
        # map keeps submission order, so rows do not depend on completion order
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_cell, cells))
    per = len(args.seeds)
    return [(g, results[i * per:(i + 1) * per]) for i, g in enumerate(groups)]


def _stats(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=float)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def _summary(runs):
    ok = sum(r["converged"] for r in runs)
    flag = any(r.get("marginal_flag", False) for r in runs)
    errs = [r["marginal_error"] for r in runs if r["marginal_error"] is not None]
    msgs = "; ".join(sorted({r["error"] for r in runs if r["error"]}))
    return ok, flag, (max(errs) if errs else None), msgs


def cmd_bench(args) -> int:
    table = _grid(args)
    rows, all_ok = [], True
    for (d, e, ds), runs in table:
        mean, std = _stats([r["iterations"] for r in runs])
        ok, flag, merr, msgs = _summary(runs)
        all_ok &= ok == len(runs)
        rows.append([d, e, ds, args.n, len(runs), ok, mean, std, flag, merr, msgs])
    header = ["divergence", "epsilon", "dataset", "n", "runs", "converged_runs",
              "mean_iterations", "std_iterations", "marginal_flag", "max_marginal_error", "errors"]
    _emit_csv(header, rows, args.out)
    return EXIT_OK if all_ok else EXIT_NOT_CONVERGED


def cmd_sparsity(args) -> int:
    table = _grid(args)
    rows, all_ok = [], True
    for (d, e, ds), runs in table:
        mean, std = _stats([r["positive_fraction"] for r in runs])
        ok, flag, merr, msgs = _summary(runs)
        all_ok &= ok == len(runs)
        rows.append([d, e, ds, args.n, len(runs), ok, mean, std, flag, merr, msgs])
    header = ["divergence", "epsilon", "dataset", "n", "runs", "converged_runs",
              "mean_positive_fraction", "std_positive_fraction", "marginal_flag", "max_marginal_error", "errors"]
    _emit_csv(header, rows, args.out)
    return EXIT_OK if all_ok else EXIT_NOT_CONVERGED


def cmd_descend(args) -> int:
    mu, nu = _measures(args)
    if args.epsilon is None and args.target_iters is None:
        raise UsageError("descend needs --epsilon or --target-iters")
    newton = _newton(args)
    inst = ProblemInstance.from_measures(mu, nu, args.divergence, args.epsilon or 1.0, args.cost)
    tuned = None
    if args.epsilon is None:
        tuned = tune_epsilon(inst, args.target_iters, tol=args.tol, precision=args.precision, newton=newton)
        inst = inst.with_epsilon(tuned.epsilon)

    _, coupling, rep = solve(inst, tol=args.tol, max_iters=args.max_iters, newton=newton, precision=args.precision)
    loss_before, grad = loss_and_gradient(inst, coupling)
    moved = DiscreteMeasure(mu.points - args.lr * grad, mu.weights)
    inst2 = ProblemInstance.from_measures(moved, nu, inst.spec, inst.epsilon, args.cost)
    _, coupling2, rep2 = solve(inst2, tol=args.tol, max_iters=args.max_iters, newton=newton, precision=args.precision)
    loss_after, _ = loss_and_gradient(inst2, coupling2)

    out_dir = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "mu_before": out_dir / "mu_before.csv",
        "mu_after": out_dir / "mu_after.csv",
        "nu": out_dir / "nu.csv",
        "displacement": out_dir / "displacement.csv",
    }
    if mu.dim == 2:
        save_csv(mu, files["mu_before"])
        save_csv(moved, files["mu_after"])
        save_csv(nu, files["nu"])
        segments = np.hstack([mu.points, moved.points])
        _emit_csv(["x0", "y0", "x1", "y1"], [list(map(float, r)) for r in segments], files["displacement"])
    else:
        files = {}

    payload = {
        "command": "descend",
        **_solve_fields(rep, loss_before),
        "lr": args.lr,
        "loss_before": loss_before,
        "loss_after": loss_after,
        "after_iterations": rep2.iterations,
        "after_converged": rep2.converged,
        "tuned": tuned is not None,
        "tune_warning": tuned.warning if tuned else None,
        "files": {k: str(v) for k, v in files.items()},
        "config": _config(args),
    }
    _emit_json(payload, args.out)
    return EXIT_OK if rep.converged and rep2.converged else EXIT_NOT_CONVERGED


def cmd_tune(args) -> int:
    mu, nu = _measures(args)
    if args.target_iters < 1:
        raise UsageError("--target-iters must be positive")
    if args.eps_min >= args.eps_max:
        raise UsageError("--eps-min must be below --eps-max")
    inst = ProblemInstance.from_measures(mu, nu, args.divergence, args.eps_max, args.cost)
    res = tune_epsilon(
        inst, args.target_iters, tol=args.tol, eps_bounds=(args.eps_min, args.eps_max),
        precision=args.precision, newton=_newton(args),
    )
    payload = {
        "command": "tune",
        "divergence": args.divergence,
        "epsilon": res.epsilon,
        "iterations": res.iterations,
        "converged": res.converged,
        "target_iters": args.target_iters,
        "warning": res.warning,
        "monotone": res.monotone,
        "bounds": list(res.bounds),
        "probes": [{"epsilon": e, "iterations": it, "converged": ok} for e, it, ok in res.probes],
        "config": _config(args),
    }
    _emit_json(payload, args.out)
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


HANDLERS = {
    "solve": cmd_solve,
    "bench": cmd_bench,
    "sparsity": cmd_sparsity,
    "descend": cmd_descend,
    "tune": cmd_tune,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return HANDLERS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fsinkhorn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PrecisionError as exc:
        print(f"fsinkhorn: precision error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, KeyError, SinkhornError, ArithmeticError) as exc:
        print(f"fsinkhorn: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
