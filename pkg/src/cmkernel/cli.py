"""Command-line pipeline: simulate -> greedy -> fit -> eval, plus reproduce.

Exit codes
----------
0 success, 2 invalid arguments or inputs, 3 integration step failure,
4 empty dataset, 5 numerical failure, 6 fit failure, 7 dimension mismatch,
8 output directory locked by another run.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import analysis, dynamics, greedy, io, regression
from .errors import (FitFailure, InvalidArgument, NumericalFailure, OracleFailure,
                     StepFailure)
from .kernels import KernelSpec, parse_kernel

EXIT_OK, EXIT_INVALID, EXIT_STEP, EXIT_EMPTY = 0, 2, 3, 4
EXIT_NUMERICAL, EXIT_FIT, EXIT_DIM, EXIT_LOCKED = 5, 6, 7, 8

# reported values of the three reference experiments, used only in reproduction reports
REFERENCE = {
    1: {"system": "example1", "eps": 1e-15, "n_star": 38248, "sizes": {"k1": 14, "k2": 6}},
    2: {"system": "example2", "eps": 1e-15, "n_star": None, "sizes": {"k1": 12, "k2": 6}},
    3: {"system": "example3", "eps": 1e-10, "n_star": 78796, "sizes": {"k1": 21, "k2": 25}},
}
TOL_MODES = {"p": greedy.POWER, "p2": greedy.POWER_SQUARED,
             greedy.POWER: greedy.POWER, greedy.POWER_SQUARED: greedy.POWER_SQUARED}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _say(*parts):
    print(*parts, flush=True)


# -- argument handling -------------------------------------------------------------

def _add_common(p):
    p.add_argument("--system", default="example1", help="built-in name or system JSON file")
    p.add_argument("--kernel", default="k1", help="k1, k2, poly:DEG:SCALE or gauss:SHAPE")
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--T", type=float, default=1000.0)
    p.add_argument("--init-mag", type=float, default=0.8)
    p.add_argument("--box", type=float, default=0.1, help="half-width of the domain box")
    p.add_argument("--newton-tol", type=float, default=dynamics.NEWTON_TOL)
    p.add_argument("--max-newton-iter", type=int, default=dynamics.MAX_NEWTON_ITER)
    p.add_argument("--on-newton-failure", choices=("continue", "raise"), default="continue",
                   help="accept the last Newton iterate (counted in provenance) or abort")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--eps", type=float, default=1e-15)
    p.add_argument("--tol-mode", default="p2", choices=sorted(TOL_MODES))
    p.add_argument("--max-points", type=int, default=500)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-10)
    p.add_argument("--weight-mode", default=regression.DIAG_JITTER, choices=regression.WEIGHT_MODES)
    p.add_argument("--grid", default=None, help="lo:hi:n per axis (default -box:box:401 in 1D, 101 per axis otherwise)")
    p.add_argument("--taylor-degree", type=int, default=4)


def build_parser():
    parser = argparse.ArgumentParser(prog="cmkernel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate trajectories and write the dataset CSV")
    _add_common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("greedy", help="P-greedy selection on a dataset")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="fit the constrained kernel surrogate")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--selection", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate surrogate, Taylor oracle and residual on a grid")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--taylor-out", default=None, help="also write the Taylor oracle JSON here")

    p = sub.add_parser("reproduce", help="run all stages of a reference experiment")
    p.add_argument("example", type=int, choices=sorted(REFERENCE))
    p.add_argument("kernel", choices=("k1", "k2"))
    p.add_argument("--outdir", "--out", dest="outdir", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--grid", default=None)
    p.add_argument("--taylor-degree", type=int, default=None,
                   help="default 4 (examples 1-2) or 2 (example 3)")
    return parser


def parse_grid(text, d, half_width):
    if text is None:
        n = 401 if d == 1 else 101
        lo, hi = -half_width, half_width
    else:
        try:
            lo_s, hi_s, n_s = text.split(":")
            lo, hi, n = float(lo_s), float(hi_s), int(n_s)
        except ValueError:
            raise InvalidArgument(f"cannot parse grid {text!r}; use lo:hi:n") from None
    if n < 1 or not lo <= hi:
        raise InvalidArgument(f"invalid grid {lo}:{hi}:{n}")
    return [np.linspace(lo, hi, n)] * d


def _lock(path):
    """Lock guarding the directory that receives ``path`` (file or directory)."""
    path = Path(path)
    directory = path if path.suffix == "" and (path.is_dir() or not path.exists()) else path.parent
    directory.mkdir(parents=True, exist_ok=True)
    return FileLock(str(directory / ".cmkernel.lock"), timeout=0)


# -- stages ------------------------------------------------------------------------

def stage_simulate(system_name, out, t0, T, dt, init_mag, box, newton_tol=dynamics.NEWTON_TOL,
                   max_newton_iter=dynamics.MAX_NEWTON_ITER, on_failure="continue", workers=1):
    system = dynamics.resolve_system(system_name)
    grid = dynamics.initial_grid(init_mag, system.n)
    start = time.perf_counter()
    try:
        data = dynamics.build_dataset(system, grid, t0, T, dt, dynamics.box(box, system.d),
                                      newton_tol, max_newton_iter, on_failure, workers)
    except StepFailure as exc:
        traj = getattr(exc, "trajectory", None)
        where = f" in trajectory {traj} from {grid[traj].tolist()}" if traj is not None else ""
        raise CliError(f"step failure{where}: {exc}", EXIT_STEP) from exc
    elapsed = time.perf_counter() - start
    extra = {"config": {"system": system_name, "t0": t0, "T": T, "dt": dt, "init_mag": init_mag,
                        "box": box, "newton_tol": newton_tol, "max_newton_iter": max_newton_iter,
                        "on_newton_failure": on_failure}}
    io.write_dataset(data, out, extra)
    fails = sum(p["newton_failures"] for p in data.provenance["trajectories"])
    _say(f"N* = {len(data)}  (raw {data.provenance['raw_count']}, newton failures {fails}, "
         f"{elapsed:.1f} s, backend {dynamics.accel.backend()})")
    return data


def stage_greedy(dataset_path, out, kernel, eps, tol_mode, max_points=500):
    data = io.read_dataset(dataset_path)
    if len(data) == 0:
        raise CliError(f"dataset {dataset_path} is empty", EXIT_EMPTY)
    spec = parse_kernel(kernel, data.d)
    cand, rows = greedy.dedup_candidates(data.x_points)
    if len(cand) == 0:
        raise CliError("dataset has no candidate points away from the origin", EXIT_EMPTY)
    try:
        sel = greedy.p_greedy_select(cand, spec, eps, TOL_MODES[tol_mode], max_points)
    except NumericalFailure as exc:
        raise CliError(f"numerical failure in greedy selection: {exc}", EXIT_NUMERICAL) from exc
    sel.extra["candidate_count"] = int(len(cand))
    io.write_selection(sel, out, io.sha256_file(dataset_path), rows)
    _say(f"selected {len(sel)} of {len(cand)} candidates; final {sel.tol_mode} = "
         f"{sel.final_power:.3e} ({sel.stop_reason})")
    return sel


def stage_fit(dataset_path, selection_path, out, lam, weight_mode):
    data = io.read_dataset(dataset_path)
    sel = io.read_selection(selection_path)
    if sel["source_sha256"] != io.sha256_file(dataset_path):
        raise InvalidArgument(f"selection {selection_path} was made from a different dataset")
    idx = np.asarray(sel["selected_indices"], dtype=int)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= len(data):
        raise InvalidArgument("selection indices do not fit the dataset")
    spec = KernelSpec.from_dict(sel["kernel"], input_dim=data.d)
    problem = regression.RegressionProblem(data.x_points[idx], data.y_points[idx], spec,
                                           lam, weight_mode)
    try:
        sur = regression.fit(problem)
    except FitFailure as exc:
        raise CliError(f"fit failed (condition estimate {exc.condition:.3e}): {exc}", EXIT_FIT) from exc
    io.write_model(sur, out, io.sha256_file(selection_path))
    r = sur.fit_report
    _say(f"|s(0)| = {r['s0_norm']:.3e}  |Ds(0)|_F = {r['ds0_norm']:.3e}  "
         f"relative residual = {r['relative_residual']:.3e}  backward error = "
         f"{r['backward_error']:.3e}  cond = {r['condition']:.3e} ({r['solver']})")
    return sur


def stage_eval(model_path, system_name, out, grid, taylor_degree, box, taylor_out=None):
    sur = io.read_model(model_path)
    system = dynamics.resolve_system(system_name)
    if (sur.d, sur.m) != (system.d, system.m):
        raise CliError(f"model maps R^{sur.d} -> R^{sur.m} but {system_name} has d={system.d}, "
                       f"m={system.m}", EXIT_DIM)
    axes = parse_grid(grid, system.d, box)
    try:
        oracle = analysis.taylor_center_manifold(system, taylor_degree)
    except OracleFailure as exc:
        raise CliError(str(exc), EXIT_NUMERICAL) from exc
    report = analysis.residual_grid(sur, system, axes, model_id=str(model_path))
    s_vals = sur(report.points)
    h_vals = oracle(report.points)
    io.write_evaluation(out, report.points, s_vals, h_vals, report.norms)
    if taylor_out:
        analysis.save_taylor(oracle, taylor_out, system.name)
    dev = float(np.max(np.abs(s_vals - h_vals)))
    _say(f"grid nodes {len(report.points)}; max |s - taylor| = {dev:.3e}; "
         f"max residual = {report.max_norm:.3e}; mean residual = {report.mean_norm:.3e}")
    return {"max_deviation": dev, "max_residual": report.max_norm, "mean_residual": report.mean_norm}


def stage_reproduce(example, kernel, outdir, workers=1, grid=None, taylor_degree=None):
    ref = REFERENCE[example]
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    name = ref["system"]
    if taylor_degree is None:
        taylor_degree = 2 if example == 3 else 4
    ds = outdir / "dataset.csv"
    data = stage_simulate(name, ds, 0.0, 1000.0, 0.1, 0.8, 0.1, workers=workers)
    sizes = {}
    for mode in ("p2", "p"):
        path = outdir / ("selection.json" if mode == "p2" else "selection_power.json")
        sizes[TOL_MODES[mode]] = len(stage_greedy(ds, path, kernel, ref["eps"], mode))
    sur = stage_fit(ds, outdir / "selection.json", outdir / "model.json", 1e-10,
                    regression.DIAG_JITTER)
    ev = stage_eval(outdir / "model.json", name, outdir / "evaluation.csv", grid, taylor_degree,
                    0.1, outdir / "taylor.json")
    report = {
        "example": example,
        "system": name,
        "kernel": kernel,
        "eps_tol": ref["eps"],
        "n_star": {"reported": ref["n_star"], "reproduced": len(data)},
        "greedy_size": {"reported": ref["sizes"][kernel], "reproduced": sizes},
        "fit": sur.fit_report,
        "evaluation": ev,
        "backend": dynamics.accel.backend(),
    }
    io.write_json(outdir / "report.json", report)
    _say(f"report: N* reported {ref['n_star']} reproduced {len(data)}; greedy size reported "
         f"{ref['sizes'][kernel]} reproduced {sizes[greedy.POWER_SQUARED]} (power_squared), "
         f"{sizes[greedy.POWER]} (power)")
    return report


# -- entry point -----------------------------------------------------------------------

def _dispatch(args):
    if args.command == "reproduce":
        with _lock(args.outdir):
            return stage_reproduce(args.example, args.kernel, args.outdir, args.workers,
                                   args.grid, args.taylor_degree)
    with _lock(args.out):
        if args.command == "simulate":
            return stage_simulate(args.system, args.out, args.t0, args.T, args.dt, args.init_mag,
                                  args.box, args.newton_tol, args.max_newton_iter,
                                  args.on_newton_failure, args.workers)
        if args.command == "greedy":
            return stage_greedy(args.dataset, args.out, args.kernel, args.eps, args.tol_mode,
                                args.max_points)
        if args.command == "fit":
            return stage_fit(args.dataset, args.selection, args.out, args.lam, args.weight_mode)
        if args.command == "eval":
            return stage_eval(args.model, args.system, args.out, args.grid, args.taylor_degree,
                              args.box, args.taylor_out)
    raise InvalidArgument(f"unknown command {args.command}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Timeout:
        print("error: another run holds the lock on the output directory", file=sys.stderr)
        return EXIT_LOCKED
    except StepFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STEP
    except FitFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (NumericalFailure, OracleFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidArgument, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
