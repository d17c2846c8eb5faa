"""Command-line front end: cluster, select-k, synth, gen-bench, eval.

Every subcommand writes its result files plus ``run_config.json`` into
``--out``. Result files never contain timestamps; wall-clock times go to
the log unless ``--timing`` asks for them.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .benchgen import KINDS, BenchSpec, read_labels, write_benchmark, write_labels
from .dataset import DataError, load_csv, write_csv
from .engine import default_priors, fit_k, fit_sweep
from .evaluate import adjusted_rand_index
from .selection import ESTIMATORS, TILadder

logger = logging.getLogger("mmm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _run_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    cfg["version"] = __version__
    return cfg


# ------------------------------------------------------------------ helpers


def _load(args):
    if not args.data or not args.schema:
        raise UsageError("--data and --schema are required")
    return load_csv(args.data, args.schema, impute=args.impute,
                    standardize_numeric=not args.no_standardize)


def _priors(args, dataset):
    return default_priors(dataset, dirichlet_c=args.dirichlet_c, beta0=args.beta0,
                          a0=args.a0, b0_scale=args.b0_scale)


def _ladder(args) -> TILadder:
    return TILadder(args.ti_points, args.ti_power, args.ti_sweeps, args.ti_burn_in)


def _estimator_options(args) -> dict:
    opts = {"n_samples": args.samples, "burn_in": args.burn_in}
    if args.select == "hmbeta":
        opts["beta"] = args.beta
    if args.select == "ti":
        opts["ladder"] = _ladder(args)
    if args.select == "exact":
        opts["all_labelings"] = args.all_labelings
    return opts


def _check_selection_flags(args) -> None:
    if args.beta is not None and args.select != "hmbeta":
        raise UsageError("--beta only applies to --select hmbeta")
    if args.all_labelings and args.select != "exact":
        raise UsageError("--all-labelings only applies to --select exact")
    if args.beta is None:
        args.beta = 0.5


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sweep(args, dataset):
    _check_selection_flags(args)
    t0 = time.perf_counter()
    sweep = fit_sweep(dataset, args.kmax, args.select, seed=args.seed, n_restarts=args.restarts,
                      priors=_priors(args, dataset), batch=args.batch,
                      threads=args.threads, **_estimator_options(args))
    logger.info("sweep K=1..%d took %.1f ms; chosen K=%d", args.kmax,
                1e3 * (time.perf_counter() - t0), sweep.chosen_k)
    for K, est in sweep.estimates.items():
        if not math.isfinite(est.log_ml):
            raise NumericalError(f"non-finite {est.estimator} estimate at K={K}")
    return sweep


def _write_estimates(path: Path, sweep, timing: bool) -> None:
    rows = []
    for K in sorted(sweep.estimates):
        est = sweep.estimates[K]
        res = sweep.results[K]
        logger.info("K=%d %s log_ml=%.6f (%.1f ms)", K, est.estimator, est.log_ml, est.wall_time_ms)
        rows.append((K, est.estimator, est.log_ml, est.mc_std_error, est.n_samples,
                     json.dumps(est.seed) if est.seed is not None else "",
                     est.wall_time_ms if timing else None,
                     res.log_lik, sweep.criteria[K], int(K == sweep.chosen_k)))
    _write_rows(path, ["K", "estimator", "log_ml", "std_error", "n_samples", "seed",
                       "wall_time_ms", "log_lik", "criterion", "chosen"], rows)


def _write_assignments(path: Path, assignment) -> None:
    write_labels(assignment, path)


# -------------------------------------------------------------- subcommands


def cmd_cluster(args) -> int:
    if (args.k is None) == (args.kmax is None):
        raise UsageError("give exactly one of --k and --kmax")
    dataset = _load(args)
    out = _out_dir(args)
    summary: dict = {"seed": args.seed}
    if args.k is not None:
        if args.beta is not None:
            raise UsageError("--beta only applies to --select hmbeta with --kmax")
        t0 = time.perf_counter()
        result = fit_k(dataset, args.k, seed=args.seed, n_restarts=args.restarts,
                       priors=_priors(args, dataset), batch=args.batch)
        logger.info("fit K=%d in %.1f ms", args.k, 1e3 * (time.perf_counter() - t0))
        if not math.isfinite(result.log_lik):
            raise NumericalError("non-finite log-likelihood")
        summary.update(K=result.K, requested_k=args.k, log_lik=result.log_lik,
                       passes=result.passes, converged=result.converged, trace=result.trace)
        _write_assignments(out / "assignments.csv", result.assignment)
    else:
        sweep = _sweep(args, dataset)
        chosen = sweep.results[sweep.chosen_k]
        summary.update(K=chosen.K, chosen_k=sweep.chosen_k, selection=args.select,
                       log_lik=chosen.log_lik, passes=chosen.passes, converged=chosen.converged)
        _write_assignments(out / "assignments.csv", chosen.assignment)
        _write_estimates(out / "estimates.csv", sweep, args.timing)
    _write_json(out / "summary.json", summary)
    _write_json(out / "run_config.json", _run_config(args))
    return EXIT_OK


def cmd_select_k(args) -> int:
    if args.kmax is None:
        raise UsageError("--kmax is required")
    dataset = _load(args)
    out = _out_dir(args)
    sweep = _sweep(args, dataset)
    _write_estimates(out / "estimates.csv", sweep, args.timing)
    _write_json(out / "summary.json", {"chosen_k": sweep.chosen_k, "selection": args.select,
                                       "seed": args.seed})
    _write_json(out / "run_config.json", _run_config(args))
    print(sweep.chosen_k)
    return EXIT_OK


def _quality_rows(report, dataset_name: str, run: int, seed) -> list:
    return [(dataset_name, method, run, metric, value, seed)
            for metric, method, value in report.rows()]


def cmd_synth(args) -> int:
    from .synth import fit_generator, load_model, sample_synthetic, save_model, synth_quality_report

    out = _out_dir(args)
    real = None
    if args.data or args.schema:
        real = _load(args)
    if args.model:
        model = load_model(args.model)
    else:
        if real is None:
            raise UsageError("--data and --schema are required unless --model is given")
        if args.k is not None and args.select is not None:
            raise UsageError("give at most one of --k and --select")
        mode = "logistic" if args.logistic_output else "clamped"
        if args.k is not None:
            if args.beta is not None:
                raise UsageError("--beta only applies to --select hmbeta")
            model = fit_generator(real, args.k, seed=args.seed, n_restarts=args.restarts,
                                  output_mode=mode)
        else:
            args.select = args.select or "hmbeta"
            _check_selection_flags(args)
            model = fit_generator(real, args.select, seed=args.seed, k_max=args.kmax or 8,
                                  n_restarts=args.restarts, output_mode=mode,
                                  threads=args.threads, **_estimator_options(args))
        save_model(model, out / "model.txt")
    synthetic = sample_synthetic(model, args.seed)
    write_csv(synthetic, out / "synthetic.csv", destandardize=True)
    if real is not None and not args.no_report:
        report = synth_quality_report(real, synthetic, seed=args.seed)
        name = Path(args.data).stem
        _write_rows(out / "quality.csv", ["dataset", "method", "run", "metric", "value", "seed"],
                    _quality_rows(report, name, 0, args.seed))
    _write_json(out / "run_config.json", _run_config(args))
    return EXIT_OK


def cmd_gen_bench(args) -> int:
    spec = BenchSpec(args.kind, args.rows, tuple(args.ratios), args.delta, args.delta_sigma,
                     args.n_numeric, args.n_binary, args.n_quaternary, args.seed)
    out = _out_dir(args)
    write_benchmark(spec, out)
    _write_json(out / "run_config.json", _run_config(args))
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _out_dir(args)
    header = ["dataset", "method", "run", "metric", "value", "seed"]
    if args.metric == "ari":
        if not args.pred or not args.truth:
            raise UsageError("eval ari needs --pred and --truth")
        rows = []
        truth = read_labels(args.truth)
        for run, p in enumerate(args.pred):
            pred = read_labels(p)
            if pred.size != truth.size:
                raise DataError(f"{p} has {pred.size} rows, {args.truth} has {truth.size}")
            rows.append((args.name or Path(args.truth).parent.name, Path(p).parent.name, run, "ari",
                         adjusted_rand_index(pred, truth), args.seed))
        _write_rows(out / "eval.csv", header, rows)
    else:
        from .synth import fit_generator, sample_synthetic, synth_quality_report

        real = _load(args)
        name = args.name or Path(args.data).stem
        rows = []
        for run in range(args.runs):
            seed = args.seed + run
            if args.synthetic and args.runs == 1:
                synthetic = load_csv(args.synthetic, args.schema, impute=args.impute,
                                     standardize_numeric=False)
                synthetic = _restandardize(synthetic, real)
            else:
                model = fit_generator(real, args.k if args.k is not None else "hmbeta", seed=seed,
                                      n_restarts=args.restarts)
                synthetic = sample_synthetic(model, seed)
            report = synth_quality_report(real, synthetic, seed=seed)
            rows += _quality_rows(report, name, run, seed)
        _write_rows(out / "eval.csv", header, rows)
    _write_json(out / "run_config.json", _run_config(args))
    return EXIT_OK


def _restandardize(synthetic, real):
    """Put raw synthetic numeric columns on the real data's standardized scale."""
    from .dataset import Dataset

    cols = list(synthetic.columns)
    for i, (mean, std) in real.transforms.items():
        cols[i] = (cols[i] - mean) / std
    if synthetic.schema != real.schema:
        raise DataError("synthetic file does not match the real schema")
    return Dataset(real.schema, cols, dict(real.transforms))


# ------------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    if data:
        p.add_argument("--data", help="input CSV with a header row")
        p.add_argument("--schema", help="schema file (name,kind[,labels] per line)")
        p.add_argument("--impute", action="store_true", help="fill missing cells with mean/mode")
        p.add_argument("--no-standardize", action="store_true",
                       help="keep numeric columns on their raw scale")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker cap (default: available CPUs)")
    p.add_argument("--verbose", "-v", action="count", default=0)


def _clustering_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kmax", type=int)
    p.add_argument("--select", choices=ESTIMATORS, default="hmbeta")
    p.add_argument("--beta", type=float, default=None, help="HMbeta inverse temperature (0.5)")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--ti-points", type=int, default=11)
    p.add_argument("--ti-power", type=float, default=1.0)
    p.add_argument("--ti-sweeps", type=int, default=2000)
    p.add_argument("--ti-burn-in", type=int, default=400)
    p.add_argument("--restarts", type=int, default=5,
                   help="independent fits per K; the best likelihood is kept")
    p.add_argument("--all-labelings", action="store_true",
                   help="exact ML over all K^N labelings, empty clusters included")
    p.add_argument("--batch", action="store_true", help="batch (non-sequential) EM updates")
    p.add_argument("--timing", action="store_true", help="record wall times in result files")
    p.add_argument("--dirichlet-c", type=float, default=1.0)
    p.add_argument("--beta0", type=float, default=1.0)
    p.add_argument("--a0", type=float, default=1.0)
    p.add_argument("--b0-scale", type=float, default=0.5)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("cluster", help="cluster rows for a fixed K or a selected K")
    _common(p)
    _clustering_flags(p)
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("select-k", help="estimate the marginal likelihood for K = 1..kmax")
    _common(p)
    _clustering_flags(p)
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("synth", help="fit a cluster-wise generator and sample synthetic rows")
    _common(p)
    _clustering_flags(p)
    p.set_defaults(select=None)
    p.add_argument("--k", type=int)
    p.add_argument("--model", help="sample from a saved generator model instead of fitting")
    p.add_argument("--logistic-output", action="store_true",
                   help="logistic instead of clamped linear model for a binary output")
    p.add_argument("--no-report", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gen-bench", help="write a benchmark dataset with true labels")
    _common(p, data=False)
    p.add_argument("--kind", choices=KINDS, default="mixed")
    p.add_argument("--rows", type=int, default=5000)
    p.add_argument("--ratios", type=float, nargs="+", default=[5, 4, 3, 2, 1])
    p.add_argument("--delta", type=float, default=2.5)
    p.add_argument("--delta-sigma", type=float)
    p.add_argument("--n-numeric", type=int)
    p.add_argument("--n-binary", type=int)
    p.add_argument("--n-quaternary", type=int)
    p.set_defaults(func=cmd_gen_bench)

    p = sub.add_parser("eval", help="ARI between label files or synthetic-data AUC")
    _common(p)
    p.add_argument("metric", choices=("ari", "auc"))
    p.add_argument("--pred", nargs="+", help="predicted label files (row_index,cluster)")
    p.add_argument("--truth", help="true label file")
    p.add_argument("--synthetic", help="synthetic CSV to score (auc; single run)")
    p.add_argument("--runs", type=int, default=1, help="generator refits for auc")
    p.add_argument("--k", type=int, help="fixed K for the generator (default: HMbeta)")
    p.add_argument("--restarts", type=int, default=5,
                   help="independent fits per K; the best likelihood is kept")
    p.add_argument("--name", help="dataset name for the report")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mmm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, OSError) as exc:
        print(f"mmm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"mmm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"mmm: invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
