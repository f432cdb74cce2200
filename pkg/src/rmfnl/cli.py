"""Command-line entry point: ``rmfnl {synth,attack,fit,evaluate,bench}``.

Every command writes plain-text results (CSV, JSON, tab-separated triples)
into ``--out``; ``fit`` and ``bench`` also render PNG figures there unless
``--no-plots`` is given.  Failures print a one-line JSON object
``{"error": {"code": ..., "message": ...}}`` on stderr.

Exit status: 0 success, 1 library error, 2 bad usage, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import workbench as wb
from .dual_solver import DualConfig
from .errors import ParseError, RmfnlError
from .mm_driver import COLUMNS, GaussianInit, RmfnlConfig, SpectralInit, fit
from .penalty import KINDS, make_penalty
from .surrogate import FactorPair

log = logging.getLogger("rmfnl")

EXIT_ERROR, EXIT_USAGE, EXIT_IO = 1, 2, 3
BENCH_METHODS = ("lsp", "geman", "laplace", "l1", "l2")


class UsageError(Exception):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunRecipe:
    """Everything a command needs, resolved from the command line."""

    command: str
    out: Path
    seed: int = 0
    reps: int = 5
    jobs: int = 1
    plots: bool = True
    input: Path | None = None
    fmt: str = "auto"
    spec: wb.SyntheticSpec = field(default_factory=wb.SyntheticSpec)
    solver: RmfnlConfig = field(default_factory=RmfnlConfig)
    loss: str = "lsp"
    methods: tuple = BENCH_METHODS
    masks: dict = field(default_factory=dict)
    factors: Path | None = None
    fraction: float = 0.03
    args: argparse.Namespace | None = None

    def __post_init__(self):
        if self.reps < 1:
            raise UsageError(f"--reps must be >= 1, got {self.reps}")
        if self.jobs < 1:
            raise UsageError(f"--jobs must be >= 1, got {self.jobs}")


# ---------------------------------------------------------------- parsing

def _lambda(text):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a number, got {text!r}") from None


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")


def _add_data(p):
    p.add_argument("--input", type=Path, help="ratings file (user item rating); "
                   "without it a synthetic problem is generated")
    p.add_argument("--format", dest="fmt", default="auto", choices=("auto", "tsv", "csv", "ml"))
    p.add_argument("--m", type=int, default=250, help="synthetic rows")
    p.add_argument("--n", type=int, default=0, help="synthetic columns (default: m)")
    p.add_argument("--noise-var", type=float, default=None)
    p.add_argument("--spec-file", type=Path, help="key = value synthetic spec")


def _add_solver(p, loss=True):
    if loss:
        p.add_argument("--loss", default="lsp", choices=KINDS)
    p.add_argument("--theta", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--lambda", dest="lam", type=_lambda, default="auto")
    p.add_argument("--outer-tol", type=float, default=1e-4)
    p.add_argument("--inner-tol", type=float, default=1e-6)
    p.add_argument("--max-inner", type=int, default=300)
    p.add_argument("--max-outer", type=int, default=100)
    p.add_argument("--warm-start", action="store_true", help="reuse the previous dual solution")
    p.add_argument("--init", choices=("spectral", "gaussian"), default="spectral")
    p.add_argument("--init-scale", type=float, default=1.0, help="gaussian init scale")
    p.add_argument("--warmup", choices=("l1", "none"), default="l1",
                   help="loss of a preliminary pass seeding nonconvex fits")
    p.add_argument("--no-plots", action="store_true")


def build_parser():
    parser = _Parser(prog="rmfnl", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic train/validation/test problem")
    _add_common(p)
    for a in ("--m", "--n"):
        p.add_argument(a, type=int, default=250 if a == "--m" else 0)
    p.add_argument("--noise-var", type=float, default=None)
    p.add_argument("--spec-file", type=Path)

    p = sub.add_parser("attack", help="apply a love/hate attack to a ratings file")
    _add_common(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--format", dest="fmt", default="auto", choices=("auto", "tsv", "csv", "ml"))
    p.add_argument("--fraction", type=float, default=0.03)

    p = sub.add_parser("fit", help="fit one model and write factors, trace and summary")
    _add_common(p)
    _add_data(p)
    _add_solver(p)
    p.add_argument("--test", type=Path, help="held-out triples scored after fitting")
    p.add_argument("--validation", type=Path)

    p = sub.add_parser("evaluate", help="score saved factors on held-out triples")
    _add_common(p)
    p.add_argument("--factors", type=Path, required=True, help="directory written by fit")
    p.add_argument("--mask", type=Path, required=True, action="append")
    p.add_argument("--format", dest="fmt", default="auto", choices=("auto", "tsv", "csv", "ml"))

    p = sub.add_parser("bench", help="repeat fits over losses and the l2 baseline")
    _add_common(p)
    _add_data(p)
    _add_solver(p, loss=False)
    p.add_argument("--losses", default=",".join(BENCH_METHODS),
                   help=f"comma-separated subset of {', '.join(KINDS + ('l2',))}")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    return parser


def _solver_config(a, loss):
    if a.rank < 1:
        raise UsageError(f"--rank must be >= 1, got {a.rank}")
    init = SpectralInit(a.seed) if a.init == "spectral" else GaussianInit(a.seed, a.init_scale)
    warmup = None if a.warmup == "none" or loss in ("l1", "l2") else a.warmup
    penalty = make_penalty("l1" if loss == "l2" else loss, a.theta, a.delta)
    return RmfnlConfig(rank=a.rank, lam=a.lam, penalty=penalty, outer_tol=a.outer_tol,
                       max_outer=a.max_outer,
                       inner=DualConfig(inner_tol=a.inner_tol, max_inner=a.max_inner,
                                        warm_start=a.warm_start),
                       init=init, warmup=warmup)


def _spec(a):
    spec = wb.read_spec_file(a.spec_file) if a.spec_file else wb.SyntheticSpec(m=a.m, n=a.n)
    kw = {"seed": a.seed}
    if a.noise_var is not None:
        kw["noise_var"] = a.noise_var
    return replace(spec, **kw)


def recipe_from_args(a):
    r = RunRecipe(command=a.command, out=a.out, seed=a.seed,
                  reps=getattr(a, "reps", 1), jobs=getattr(a, "jobs", 1),
                  plots=not getattr(a, "no_plots", False), input=getattr(a, "input", None),
                  fmt=getattr(a, "fmt", "auto"))
    if a.command in ("synth", "fit", "bench") and r.input is None:
        r.spec = _spec(a)
    if a.command == "fit":
        r.loss = a.loss
        r.solver = _solver_config(a, a.loss)
        r.masks = {k: v for k, v in (("validation", a.validation), ("test", a.test)) if v}
    elif a.command == "bench":
        methods = tuple(s.strip().lower() for s in a.losses.split(",") if s.strip())
        bad = [s for s in methods if s not in KINDS + ("l2",)]
        if bad or not methods:
            raise UsageError(f"unknown method(s) in --losses: {', '.join(bad) or '(none)'}")
        r.methods = methods
        r.solver = _solver_config(a, "lsp")
        r.args = a
    elif a.command == "evaluate":
        r.factors = a.factors
        r.masks = {p.stem: p for p in a.mask}
    elif a.command == "attack":
        r.fraction = a.fraction
    return r


# ---------------------------------------------------------------- helpers

def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _load_problem(r, seed):
    """Training data, held-out masks and original IDs for one repetition."""
    if r.input is None:
        bundle = wb.generate_synthetic(replace(r.spec, seed=seed))
        m, n = bundle.train.shape
        ids = (np.arange(1, m + 1), np.arange(1, n + 1))
        return bundle.train, {"validation": bundle.validation, "test": bundle.test}, ids
    data, users, items = wb.ingest_ratings(r.input, r.fmt, return_ids=True)
    if r.command == "bench":
        train, valid, test = wb.split_observed(data, seed=seed)
        return train, {"validation": valid, "test": test}, (users, items)
    masks = {k: wb.load_mask(p, users, items, r.fmt) for k, p in r.masks.items()}
    return data, masks, (users, items)


def _scores(factors, masks):
    out = {}
    for name, mask in masks.items():
        if len(mask):
            out[f"{name}_rmse"] = wb.rmse(factors, mask)
            out[f"{name}_mae"] = wb.mae(factors, mask)
    return out


def _trace_rows(run, trace, test_rmse=None):
    rows = []
    for stage, tr in (("warmup_", trace.warmup), ("", trace)):
        if tr is None:
            continue
        for rec in tr.records:
            for name in COLUMNS[1:-1]:
                rows.append((run, rec.iter, stage + name, getattr(rec, name)))
    for it, value in test_rmse or ():
        rows.append((run, it, "test_rmse", value))
    return rows


def _fit_with_history(data, config, test_mask):
    history = []
    callback = None
    if test_mask is not None and len(test_mask):
        def callback(k, factors, rec):
            history.append((k, wb.rmse(factors, test_mask)))
    t0 = time.process_time()
    factors, trace = fit(data, config, callback)
    return factors, trace, history, time.process_time() - t0


# ---------------------------------------------------------------- commands

def cmd_synth(r):
    bundle = wb.generate_synthetic(r.spec)
    train = bundle.train
    wb.write_triples(r.out / "train.tsv", train.omega.rows, train.omega.cols, train.values)
    for name in ("validation", "test"):
        mask = getattr(bundle, name)
        wb.write_triples(r.out / f"{name}.tsv", mask.rows, mask.cols, mask.truth)
    _write_json(r.out / "spec.json", {**asdict(r.spec), "train_nnz": train.nnz,
                                      "validation_nnz": len(bundle.validation),
                                      "test_nnz": len(bundle.test)})
    print(json.dumps({"out": str(r.out), "train_nnz": train.nnz}))
    return 0


def cmd_attack(r):
    data, users, items = wb.ingest_ratings(r.input, r.fmt, return_ids=True)
    attacked = wb.love_hate_attack(data, r.fraction, r.seed)
    changed = np.flatnonzero(attacked.values != data.values)
    cols = np.unique(data.omega.cols[changed])
    path = r.out / "attacked.tsv"
    with open(path, "w", encoding="utf-8") as fh:
        for i, j, v in zip(users[attacked.omega.rows].tolist(), items[attacked.omega.cols].tolist(),
                           attacked.values.tolist()):
            fh.write(f"{i}\t{j}\t{v!r}\n")
    summary = {"items_total": int(data.shape[1]), "items_with_changes": items[cols].tolist(),
               "ratings_changed": int(changed.size), "fraction": r.fraction, "seed": r.seed}
    _write_json(r.out / "attack.json", summary)
    print(json.dumps({"out": str(path), "ratings_changed": int(changed.size)}))
    return 0


def cmd_fit(r):
    data, masks, (users, items) = _load_problem(r, r.seed)
    factors, trace, history, cpu = _fit_with_history(data, r.solver, masks.get("test"))
    np.savetxt(r.out / "U.txt", factors.U, fmt="%.17g")
    np.savetxt(r.out / "V.txt", factors.V, fmt="%.17g")
    _write_json(r.out / "ids.json", {"users": users.tolist(), "items": items.tolist(),
                                     "lambda": factors.lam})
    trace.to_csv(r.out / "trace.csv")
    trace.to_json(r.out / "trace.json")
    run = f"{r.loss}/0"
    _write_csv(r.out / "trace_long.csv", ("run", "iter", "metric", "value"),
               _trace_rows(run, trace, history))
    summary = {
        "loss": r.loss,
        "rank": r.solver.rank,
        "lambda": factors.lam,
        "objective": float(trace.objectives[-1]),
        "outer_iters": len(trace) - 1,
        "warmup_iters": len(trace.warmup) - 1 if trace.warmup is not None else 0,
        "stop_reason": trace.stop_reason,
        "converged": trace.converged,
        "cpu_seconds": cpu,
        **_scores(factors, masks),
    }
    _write_json(r.out / "summary.json", summary)
    if r.plots:
        from .plotting import plot_trace

        plot_trace(trace, r.out / "trace.png", title=f"{r.loss}, rank {r.solver.rank}")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_evaluate(r):
    try:
        U = np.loadtxt(r.factors / "U.txt", ndmin=2)
        V = np.loadtxt(r.factors / "V.txt", ndmin=2)
        with open(r.factors / "ids.json", encoding="utf-8") as fh:
            ids = json.load(fh)
    except ValueError as exc:
        raise ParseError(f"unreadable factor files in {r.factors}: {exc}") from None
    factors = FactorPair(U, V, float(ids.get("lambda", 1.0)))
    masks = {name: wb.load_mask(path, ids["users"], ids["items"], r.fmt)
             for name, path in r.masks.items()}
    metrics = {name: {"rmse": wb.rmse(factors, m), "mae": wb.mae(factors, m), "count": len(m)}
               for name, m in masks.items()}
    _write_json(r.out / "metrics.json", metrics)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _bench_cell(args):
    """One (method, repetition) cell; never raises."""
    r, method, rep = args
    seed = r.seed + rep
    row = {"method": method, "rep": rep, "seed": seed, "status": "ok",
           "rmse": float("nan"), "mae": float("nan"), "objective": float("nan"),
           "outer_iters": 0, "cpu_seconds": 0.0}
    trace_rows = []
    try:
        data, masks, _ = _load_problem(r, seed)
        test = masks["test"]
        run = f"{method}/{rep}"
        if method == "l2":
            t0 = time.process_time()
            lam = r.solver.resolve_lambda(data.shape)
            factors, objs = wb.l2_baseline_fit(data, r.solver.rank, lam, iters=r.solver.max_outer,
                                               seed=seed, return_trace=True)
            row["cpu_seconds"] = time.process_time() - t0
            row["objective"] = float(objs[-1])
            row["outer_iters"] = len(objs) - 1
            trace_rows = [(run, i, "objective", float(v)) for i, v in enumerate(objs)]
        else:
            a = r.args
            config = _solver_config(replace_args(a, seed=seed), method)
            factors, trace, history, cpu = _fit_with_history(data, config, test)
            row["cpu_seconds"] = cpu
            row["objective"] = float(trace.objectives[-1])
            row["outer_iters"] = len(trace) - 1
            trace_rows = _trace_rows(run, trace, history)
        row["rmse"] = wb.rmse(factors, test)
        row["mae"] = wb.mae(factors, test)
    except RmfnlError as exc:
        row["status"] = f"error:{exc.code}"
        log.warning("bench cell %s rep %d failed: %s", method, rep, exc)
    return row, trace_rows


def replace_args(a, **kw):
    b = argparse.Namespace(**vars(a))
    for k, v in kw.items():
        setattr(b, k, v)
    return b


RUN_COLUMNS = ("method", "rep", "seed", "status", "rmse", "mae", "objective",
               "outer_iters", "cpu_seconds")
SUMMARY_COLUMNS = ("method", "runs", "failures", "rmse_mean", "rmse_std", "mae_mean",
                   "mae_std", "cpu_mean", "cpu_std")


def summarize(rows, methods):
    out = []
    for method in methods:
        cell = [r for r in rows if r["method"] == method]
        ok = [r for r in cell if r["status"] == "ok"]
        s = {"method": method, "runs": len(cell), "failures": len(cell) - len(ok)}
        for key, col in (("rmse", "rmse"), ("mae", "mae"), ("cpu", "cpu_seconds")):
            vals = np.array([r[col] for r in ok], dtype=float)
            s[f"{key}_mean"] = float(vals.mean()) if vals.size else float("nan")
            # population std, so a single repetition reports 0
            s[f"{key}_std"] = float(vals.std()) if vals.size else float("nan")
        out.append(s)
    return out


def format_table(summary):
    lines = [f"{'method':<8} {'runs':>4} {'fail':>4}  {'RMSE':>17}  {'MAE':>17}  {'CPU s':>13}"]
    for s in summary:
        lines.append(
            f"{s['method']:<8} {s['runs']:>4} {s['failures']:>4}  "
            f"{s['rmse_mean']:8.4f}±{s['rmse_std']:<8.4f}  {s['mae_mean']:8.4f}±{s['mae_std']:<8.4f}  "
            f"{s['cpu_mean']:6.2f}±{s['cpu_std']:<6.2f}")
    return "\n".join(lines) + "\n"


def cmd_bench(r):
    cells = [(r, method, rep) for method in r.methods for rep in range(r.reps)]
    if r.jobs > 1:
        with ProcessPoolExecutor(max_workers=r.jobs) as pool:
            results = list(pool.map(_bench_cell, cells))
    else:
        results = [_bench_cell(c) for c in cells]
    rows = [row for row, _ in results]
    long_rows = [t for _, trs in results for t in trs]
    _write_csv(r.out / "runs.csv", RUN_COLUMNS, [[row[c] for c in RUN_COLUMNS] for row in rows])
    _write_csv(r.out / "traces_long.csv", ("run", "iter", "metric", "value"), long_rows)
    summary = summarize(rows, r.methods)
    _write_csv(r.out / "summary.csv", SUMMARY_COLUMNS,
               [[s[c] for c in SUMMARY_COLUMNS] for s in summary])
    table = format_table(summary)
    with open(r.out / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write(table)
    if r.plots:
        from .plotting import plot_bench, plot_convergence

        plot_bench(summary, r.out / "bench_rmse.png")
        plot_convergence([t for t in long_rows if not t[0].startswith("l2/")],
                         r.out / "convergence_rmse.png", metric="test_rmse")
        plot_convergence(long_rows, r.out / "convergence_objective.png")
    sys.stdout.write(table)
    if all(row["status"] != "ok" for row in rows):
        raise RmfnlError("every benchmark cell failed")
    return 0


COMMANDS = {"synth": cmd_synth, "attack": cmd_attack, "fit": cmd_fit,
            "evaluate": cmd_evaluate, "bench": cmd_bench}


# ---------------------------------------------------------------- main

def _configure_logging():
    level = os.environ.get("RMFNL_LOG", "WARNING").strip().upper()
    if level.isdigit():
        level = int(level)
    elif not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _fail(code, message, status):
    sys.stderr.write(json.dumps({"error": {"code": code, "message": message}}) + "\n")
    return status


def main(argv=None):
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
        recipe = recipe_from_args(args)
        for p in [recipe.input, recipe.factors, *recipe.masks.values()]:
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(f"no such file or directory: {p}")
        recipe.out.mkdir(parents=True, exist_ok=True)
        if not os.access(recipe.out, os.W_OK):
            raise PermissionError(f"output directory is not writable: {recipe.out}")
        return COMMANDS[recipe.command](recipe)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except RmfnlError as exc:
        return _fail(exc.code, str(exc), EXIT_ERROR)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_IO)
    except Exception as exc:  # last resort: never show a traceback
        log.debug("unexpected failure", exc_info=True)
        return _fail("internal", f"{type(exc).__name__}: {exc}", EXIT_ERROR)


if __name__ == "__main__":
    sys.exit(main())
