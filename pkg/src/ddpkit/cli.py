"""Command-line harness: derivative benchmarks and swing-up solves, CSV out.

Subcommands
  bench-derivs  median derivative-evaluation time per backend per joint
                count, plus a log-log slope fit per backend
  solve         one optimal-control solve; writes traj.csv and
                convergence.csv into the output directory
  sweep-dof     solve time and iteration count across joint counts for
                each (mode, backend) pair
  trials        randomized ddp-vs-ilqr comparison, per-trial seeds, with
                summary fractions

Everything is seeded: rerunning a command with the same seed reproduces
the CSV byte for byte except for measured times and the timestamp column.
Exit codes: 0 success, 1 usage error, 2 solver non-convergence, 3 I/O
error.
"""

import os

# timing comparability: cap BLAS/OpenMP pools before numpy first loads
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
del _var

import argparse
import csv
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import config as cfgmod
from . import ddp, derivs, rbmodel

CSV_HEADER = ("experiment", "n", "backend", "metric", "value", "units",
              "seed", "timestamp")
BENCH_H = 0.01
COST_MATCH_RTOL = 1e-4


class CliError(Exception):
    """Error with an associated process exit status."""

    def __init__(self, message, status):
        super().__init__(message)
        self.status = status


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text):
    items = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            items.append(int(tok))
        except ValueError:
            raise argparse.ArgumentTypeError(
                f"{tok!r} is not an integer") from None
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    return items


def _name_list(valid, what):
    def parse(text):
        items = [tok.strip() for tok in text.split(",") if tok.strip()]
        if not items:
            raise argparse.ArgumentTypeError(f"empty {what} list")
        for item in items:
            if item not in valid:
                raise argparse.ArgumentTypeError(
                    f"unknown {what} {item!r} (choose from "
                    f"{', '.join(valid)})")
        return items

    return parse


def _fmt(value):
    return repr(float(value))


def _timestamp():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _open_out(path):
    """(stream, needs_close) for a CSV destination; None means stdout."""
    if path is None:
        return sys.stdout, False
    try:
        return open(path, "w", newline=""), True
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", 3) from None


def _load_config(args, overrides, base=None):
    if getattr(args, "config", None) is not None:
        try:
            cfg = cfgmod.parse_config(args.config)
        except OSError as exc:
            raise CliError(f"cannot read config: {exc}", 3) from None
        except ValueError as exc:
            raise CliError(str(exc), 1) from None
    else:
        cfg = dict(cfgmod.DEFAULTS)
        if base:
            cfg.update(base)
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    return cfg


def _require_second_order(backend):
    if backend not in derivs.SECOND_ORDER_BACKENDS:
        raise CliError(
            f"mode ddp needs a second-order backend, got {backend!r}", 1)


# ---------------------------------------------------------------------------
# bench-derivs

def _sample_configuration(rng, n):
    x = np.concatenate([rng.uniform(-np.pi, np.pi, n),
                        rng.uniform(-2.0, 2.0, n)])
    u = rng.uniform(-5.0, 5.0, n)
    lam = rng.standard_normal(2 * n)
    return x, u, lam


def _deriv_call(eng, backend, sample):
    x, u, lam = sample
    if backend in derivs.FIRST_ORDER_BACKENDS:
        family = derivs.family_of(backend)

        def call():
            eng.first_order(x, u, BENCH_H, family=family)
    else:

        def call():
            eng.second_order(x, u, lam, BENCH_H, backend=backend)

    return call


def _median_time(calls, target=0.005):
    """Median per-call wall time. One warmup call (covers tape and JIT
    construction), then an inner-loop count calibrated so each sample
    spans at least `target` seconds."""
    calls[0]()
    k = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(k):
            calls[0]()
        dt = time.perf_counter() - t0
        if dt >= target or k >= 1 << 16:
            break
        k *= 2
    times = []
    for call in calls:
        t0 = time.perf_counter()
        for _ in range(k):
            call()
        times.append((time.perf_counter() - t0) / k)
    return float(np.median(times))


def loglog_slope(ns, ts):
    """Least-squares slope of log(time) against log(n)."""
    return float(np.polyfit(np.log(np.asarray(ns, dtype=float)),
                            np.log(np.asarray(ts, dtype=float)), 1)[0])


def cmd_bench_derivs(args):
    if args.reps < 1:
        raise CliError("--reps must be at least 1", 1)
    ts = _timestamp()
    fh, needs_close = _open_out(args.out)
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        measured = {b: [] for b in args.backend}
        for n in args.n:
            if n < 1:
                raise CliError(f"joint count must be positive, got {n}", 1)
            model = rbmodel.build_serial_arm(n)
            eng = derivs.engine_for(model)
            rng = np.random.default_rng([args.seed, n])
            samples = [_sample_configuration(rng, n)
                       for _ in range(args.reps)]
            for backend in args.backend:
                calls = [_deriv_call(eng, backend, s) for s in samples]
                t_med = _median_time(calls)
                measured[backend].append((n, t_med))
                writer.writerow(["bench-derivs", n, backend, "deriv_time",
                                 _fmt(t_med), "s", args.seed, ts])
        for backend in args.backend:
            pts = measured[backend]
            if len(pts) < 2:
                continue
            slope = loglog_slope([p[0] for p in pts], [p[1] for p in pts])
            # n=0 marks a fit over the whole sweep rather than one size
            writer.writerow(["bench-derivs", 0, backend, "loglog_slope",
                             _fmt(slope), "dimensionless", args.seed, ts])
    finally:
        if needs_close:
            fh.close()
    return 0


# ---------------------------------------------------------------------------
# solve

def _write_trajectory(path, problem, traj):
    n = problem.model.n_bodies
    m = problem.model.n_controls
    header = (["t"]
              + [f"q{i + 1}" for i in range(n)]
              + [f"qd{i + 1}" for i in range(n)]
              + [f"u{i + 1}" for i in range(m)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k, x in enumerate(traj.xs):
            row = [_fmt(k * problem.h)] + [_fmt(v) for v in x]
            if k < traj.us.shape[0]:
                row += [_fmt(v) for v in traj.us[k]]
            else:
                row += [""] * m
            writer.writerow(row)


def _write_convergence(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "cost", "expected_reduction",
                         "step_size", "regularization", "grad_norm",
                         "accepted"])
        for r in records:
            writer.writerow([r.iteration, _fmt(r.cost), _fmt(r.er),
                             _fmt(r.eps), _fmt(r.rho), _fmt(r.qu_norm),
                             int(r.accepted)])


def cmd_solve(args):
    cfg = _load_config(args, {"n": args.n, "backend": args.backend,
                              "mode": args.mode, "seed": args.seed})
    if cfg["mode"] == "ddp":
        _require_second_order(cfg["backend"])
    model = cfgmod.build_model(cfg)
    problem = cfgmod.build_problem(cfg, model)
    step_fn = ddp.make_step_fn(model, cfg["h"])
    u_init = cfgmod.build_u_init(cfg, problem, step_fn=step_fn)
    report = ddp.solve(problem, mode=cfg["mode"], backend=cfg["backend"],
                       u_init=u_init, step_fn=step_fn,
                       max_iter=cfg["max_iter"], tol_cost=cfg["tol_cost"],
                       tol_grad=cfg["tol_grad"])
    out_dir = args.out or "solve_out"
    try:
        os.makedirs(out_dir, exist_ok=True)
        _write_trajectory(os.path.join(out_dir, "traj.csv"), problem,
                          report.trajectory)
        _write_convergence(os.path.join(out_dir, "convergence.csv"),
                           report.records)
    except OSError as exc:
        raise CliError(f"cannot write results: {exc}", 3) from None
    status = "converged" if report.converged else "did not converge"
    print(f"{cfg['mode']}/{cfg['backend']} {status} after "
          f"{report.iterations} iterations, cost {report.cost:.9g}; "
          f"results in {out_dir}")
    return 0 if report.converged else 2


# ---------------------------------------------------------------------------
# sweep-dof

def cmd_sweep_dof(args):
    for mode in args.mode:
        if mode == "ddp":
            for backend in args.backend:
                _require_second_order(backend)
    cfg_base = _load_config(args, {"seed": args.seed},
                            base={"system": "arm"})
    ts = _timestamp()
    fh, needs_close = _open_out(args.out)
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for n in args.n:
            if n < 1:
                raise CliError(f"joint count must be positive, got {n}", 1)
            cfg = dict(cfg_base, n=n)
            model = cfgmod.build_model(cfg)
            problem = cfgmod.build_problem(cfg, model)
            step_fn = ddp.make_step_fn(model, cfg["h"])
            u_init = cfgmod.build_u_init(cfg, problem, step_fn=step_fn)
            for mode in args.mode:
                for backend in args.backend:
                    cell = f"{mode}:{backend}"
                    t0 = time.perf_counter()
                    try:
                        report = ddp.solve(
                            problem, mode=mode, backend=backend,
                            u_init=u_init, step_fn=step_fn,
                            max_iter=cfg["max_iter"],
                            tol_cost=cfg["tol_cost"],
                            tol_grad=cfg["tol_grad"])
                        iters = report.iterations
                        cost = report.cost
                        converged = report.converged
                    except (FloatingPointError, np.linalg.LinAlgError):
                        # divergent cell: keep the sweep going
                        iters, cost, converged = 0, float("nan"), False
                    dt = time.perf_counter() - t0
                    for metric, value, units in (
                            ("solve_time", _fmt(dt), "s"),
                            ("iterations", iters, "iter"),
                            ("final_cost", _fmt(cost), "cost"),
                            ("converged", int(converged), "bool")):
                        writer.writerow(["sweep-dof", n, cell, metric,
                                         value, units, cfg["seed"], ts])
                    print(f"sweep n={n} {cell}: {iters} iters, "
                          f"{dt:.2f}s, converged={converged}",
                          file=sys.stderr)
    finally:
        if needs_close:
            fh.close()
    return 0


# ---------------------------------------------------------------------------
# trials

def run_trials(cfg, n_trials, base_seed):
    """Solve ddp and ilqr from identical randomized starts, once per
    trial seed. Returns (per_trial, summary) where per_trial rows are
    (seed, ddp_iters, ddp_cost, ddp_conv, ilqr_iters, ilqr_cost,
    ilqr_conv).

    Iteration-count comparisons only make sense between runs that
    actually converged (a solver that aborts at its regularization cap
    after two iterations did not "win" in two iterations), so the
    summary statistics are computed over the trials where both solvers
    converged, and frac_pairs_converged reports how many that was.
    """
    second = cfg["backend"]
    first = derivs.family_of(second) + "1"
    model = cfgmod.build_model(cfg)
    step_fn = ddp.make_step_fn(model, cfg["h"])
    seeds = np.random.SeedSequence(base_seed).generate_state(n_trials)
    per_trial = []
    for i in range(n_trials):
        cfg_t = dict(cfg, seed=int(seeds[i]))
        problem = cfgmod.build_problem(cfg_t, model)
        u_init = cfgmod.build_u_init(cfg_t, problem, step_fn=step_fn)
        rd = ddp.solve(problem, mode="ddp", backend=second, u_init=u_init,
                       step_fn=step_fn, max_iter=cfg["max_iter"],
                       tol_cost=cfg["tol_cost"], tol_grad=cfg["tol_grad"])
        ri = ddp.solve(problem, mode="ilqr", backend=first, u_init=u_init,
                       step_fn=step_fn, max_iter=cfg["max_iter"],
                       tol_cost=cfg["tol_cost"], tol_grad=cfg["tol_grad"])
        per_trial.append((int(seeds[i]), rd.iterations, rd.cost,
                          rd.converged, ri.iterations, ri.cost,
                          ri.converged))
        print(f"trial {i + 1}/{n_trials}: ddp {rd.iterations} iters "
              f"(cost {rd.cost:.6g}, conv={rd.converged}), "
              f"ilqr {ri.iterations} iters "
              f"(cost {ri.cost:.6g}, conv={ri.converged})", file=sys.stderr)
    di = np.array([t[1] for t in per_trial], dtype=float)
    ii = np.array([t[4] for t in per_trial], dtype=float)
    dc = np.array([t[2] for t in per_trial])
    ic = np.array([t[5] for t in per_trial])
    both = np.array([t[3] and t[6] for t in per_trial])
    match = np.abs(ic - dc) <= COST_MATCH_RTOL * np.maximum(
        np.abs(dc), np.abs(ic))
    if both.any():
        ratio = float(np.mean(ii[both] / di[both]))
        more = float(np.mean(ii[both] > di[both]))
        frac_match = float(np.mean(match[both]))
    else:
        ratio = more = frac_match = float("nan")
    summary = {
        "mean_iter_ratio": ratio,
        "frac_ilqr_more_iters": more,
        "frac_matching_cost": frac_match,
        "frac_pairs_converged": float(np.mean(both)),
    }
    return per_trial, summary


def cmd_trials(args):
    if args.reps < 1:
        raise CliError("--reps must be at least 1", 1)
    cfg = _load_config(args, {"n": args.n, "backend": args.backend},
                       base={"system": "arm", "n": 7, "init": "ou"})
    _require_second_order(cfg["backend"])
    base_seed = cfg["seed"] if args.seed is None else args.seed
    per_trial, summary = run_trials(cfg, args.reps, base_seed)
    second = cfg["backend"]
    first = derivs.family_of(second) + "1"
    pair = f"ddp:{second}/ilqr:{first}"
    ts = _timestamp()
    n = cfg["n"]
    fh, needs_close = _open_out(args.out)
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for seed, d_it, d_cost, d_conv, i_it, i_cost, i_conv in per_trial:
            for cell, metric, value, units in (
                    (f"ddp:{second}", "iterations", d_it, "iter"),
                    (f"ddp:{second}", "final_cost", _fmt(d_cost), "cost"),
                    (f"ddp:{second}", "converged", int(d_conv), "bool"),
                    (f"ilqr:{first}", "iterations", i_it, "iter"),
                    (f"ilqr:{first}", "final_cost", _fmt(i_cost), "cost"),
                    (f"ilqr:{first}", "converged", int(i_conv), "bool")):
                writer.writerow(["trials", n, cell, metric, value, units,
                                 seed, ts])
        for metric in ("mean_iter_ratio", "frac_ilqr_more_iters",
                       "frac_matching_cost", "frac_pairs_converged"):
            writer.writerow(["trials", n, pair, metric,
                             _fmt(summary[metric]), "dimensionless",
                             base_seed, ts])
    finally:
        if needs_close:
            fh.close()
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="ddpkit",
                     description="Trajectory optimization benchmarks for "
                                 "rigid-body swing-up problems.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")

    p = sub.add_parser("bench-derivs",
                       help="time derivative backends against joint count")
    p.add_argument("--n", type=_int_list, default=[2, 4, 6, 8, 10, 12],
                   help="comma-separated joint counts (default %(default)s)")
    p.add_argument("--backend",
                   type=_name_list(derivs.BACKENDS, "backend"),
                   default=list(derivs.BACKENDS),
                   help="comma-separated backends (default: all)")
    p.add_argument("--reps", type=int, default=5,
                   help="timed repetitions per cell (default %(default)s)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None,
                   help="CSV output path (default: stdout)")
    p.set_defaults(func=cmd_bench_derivs)

    p = sub.add_parser("solve", help="run one swing-up solve")
    p.add_argument("--config", default=None,
                   help="key = value problem description file")
    p.add_argument("--n", type=int, default=None,
                   help="override joint count")
    p.add_argument("--mode", choices=("ddp", "ilqr"), default=None)
    p.add_argument("--backend", choices=derivs.BACKENDS, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None,
                   help="output directory (default solve_out)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep-dof",
                       help="solve swing-ups across joint counts")
    p.add_argument("--config", default=None)
    p.add_argument("--n", type=_int_list, default=[2, 4, 6],
                   help="comma-separated joint counts (default %(default)s)")
    p.add_argument("--mode", type=_name_list(("ddp", "ilqr"), "mode"),
                   default=["ddp"],
                   help="comma-separated solver modes (default ddp)")
    p.add_argument("--backend",
                   type=_name_list(derivs.BACKENDS, "backend"),
                   default=["modrnea2"],
                   help="comma-separated backends (default modrnea2)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None,
                   help="CSV output path (default: stdout)")
    p.set_defaults(func=cmd_sweep_dof)

    p = sub.add_parser("trials",
                       help="randomized ddp-vs-ilqr iteration comparison")
    p.add_argument("--config", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--backend", choices=derivs.SECOND_ORDER_BACKENDS,
                   default=None,
                   help="second-order backend for the ddp side")
    p.add_argument("--reps", type=int, default=40,
                   help="number of trials (default %(default)s)")
    p.add_argument("--seed", type=int, default=None,
                   help="base seed; per-trial seeds derive from it")
    p.add_argument("--out", default=None,
                   help="CSV output path (default: stdout)")
    p.set_defaults(func=cmd_trials)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"ddpkit: error: {exc}", file=sys.stderr)
        return exc.status
    except OSError as exc:
        print(f"ddpkit: i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
