"""Command line interface: ``doseopt fit|simulate|benchmark|report``.

Exit codes: 0 success, 2 invalid input or arguments, 3 infeasible model space.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .bma import ESTIMATORS, DoseGrid, curve_summary, fit_bfp
from .dgp_sim import DEFAULT_DOSES, DEFAULT_REPLICATES, SCENARIOS, SIGMA_GRID, ScenarioSpec, simulate
from .evaluation import METHODS, MissingCellError, paired_bootstrap, rank_table, setting_summary
from .fp_basis import DoseDomainError
from .model_search import DEFAULT_ITERATIONS, InfeasibleModelSpaceError
from .serialization import (FitReport, InputFormatError, file_digest, read_benchmark_csv, read_dataset_csv,
                            write_curve_csv, write_dataset_csv, write_fit_report, write_rows_csv)

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 2, 3
TOP_MODELS = 10

log = logging.getLogger("doseopt")


class UsageError(ValueError):
    pass


def _g_arg(text: str):
    if text == "eb":
        return "eb"
    try:
        g = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("g must be a positive number or 'eb'") from None
    if not g > 0:
        raise argparse.ArgumentTypeError("g must be positive")
    return g


def _curve_dict(summary) -> dict:
    return {
        "scale": summary.scale,
        "mean": summary.mean.tolist(),
        "q025": summary.quantiles[0.025].tolist(),
        "q500": summary.quantiles[0.5].tolist(),
        "q975": summary.quantiles[0.975].tolist(),
    }


def build_fit_report(data, result, args, digest: str, runtime_ms: int) -> FitReport:
    ens = result.ensemble
    grid = result.draws.grid
    top = [
        {"terms": e.model.names(), "gamma": str(e.model), "pmp": e.pmp, "log_evidence": e.log_evidence}
        for e in ens.entries[:TOP_MODELS]
    ]
    curve = {"grid": {"x_min": grid.x_min, "x_max": grid.x_max, "points": grid.points,
                      "values": grid.values.tolist()}}
    curve.update(_curve_dict(result.summary()))
    if data.family == "bernoulli":
        curve["response"] = _curve_dict(result.summary(scale="response"))
    opt = result.optimum(args.estimator)
    optimum = {"estimator": args.estimator, "point": opt.point, "cri_low": opt.cri_low,
               "cri_high": opt.cri_high, "samples": opt.samples.tolist()}
    settings = {"iterations": args.iterations if args.search == "mjmcmc" else None,
                "draws": args.draws, "max_terms": ens.max_terms, "visited_count": ens.visited_count,
                "ensemble_size": len(ens)}
    return FitReport(digest, data.family, ens.search_mode, args.seed, ens.g, top, curve, optimum,
                     runtime_ms, settings)


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    data = read_dataset_csv(args.input, family=args.family)
    grid = DoseGrid(args.grid_min, args.grid_max, args.grid_points)
    result = fit_bfp(data, grid, search=args.search, g=args.g, iterations=args.iterations, seed=args.seed,
                     draws=args.draws, max_terms=args.max_terms)
    runtime = int(round((time.perf_counter() - t0) * 1000))
    report = build_fit_report(data, result, args, file_digest(args.input), runtime)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_fit_report(report, out / "fit_report.json")
    response = result.summary(scale="response") if data.family == "bernoulli" else None
    write_curve_csv(curve_summary(result.draws), out / "curve.csv", response_summary=response)
    opt = report.optimum
    print(f"optimum ({args.estimator}): {opt['point']:.4g}  95% CrI [{opt['cri_low']:.4g}, {opt['cri_high']:.4g}]")
    for m in report.top_models[:5]:
        print(f"  pmp={m['pmp']:.4f}  {' + '.join(m['terms']) or '(intercept only)'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.sigma not in SIGMA_GRID and not args.sigma_free:
        raise UsageError(f"sigma {args.sigma} is not in {SIGMA_GRID}; pass --sigma-free to allow it")
    if args.sigma < 0:
        raise UsageError("sigma must be non-negative")
    reps = args.replicates or DEFAULT_REPLICATES[args.family]
    doses = tuple(args.doses) if args.doses else DEFAULT_DOSES
    spec = ScenarioSpec(args.scenario, args.family, args.sigma, design=tuple((d, reps) for d in doses),
                        seed=args.seed)
    data = simulate(spec)
    write_dataset_csv(data, args.output)
    print(f"wrote {data.n} rows to {args.output}")
    return EXIT_OK


def _benchmark_config(args):
    from .benchmark import BenchmarkConfig

    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
    overrides = {
        "methods": args.methods, "scenarios": args.scenarios, "families": args.families,
        "sigmas": args.sigmas, "replicates": args.replicates, "master_seed": args.master_seed,
        "search": args.search, "iterations": args.iterations, "draws": args.draws,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    return BenchmarkConfig.from_dict(base)


def cmd_benchmark(args) -> int:
    from .benchmark import plan_cells, run_benchmark

    cfg = _benchmark_config(args)
    if args.dry_run:
        cells = plan_cells(cfg)
        print(f"{len(cells)} cells x {len(cfg.methods)} methods = {len(cells) * len(cfg.methods)} rows")
        return EXIT_OK

    def progress(i, total, cell):
        log.info("[%d/%d] %s", i, total, cell.key)

    records = run_benchmark(cfg, args.output, threads=args.threads, progress=progress)
    print(f"wrote {len(records)} rows to {args.output}")
    return EXIT_OK


def format_rank_table(rows) -> str:
    lines = [f"{'Method':<14}{'Sum':>9}{'Median':>8}{'IQR':>7}{'MeanAbs':>9}{'SDAbs':>8}"]
    for r in rows:
        lines.append(f"{r.method:<14}{r.sum_of_ranks:>9.1f}{r.median_rank:>8.2f}{r.iqr_rank:>7.2f}"
                     f"{r.mean_abs_bias:>9.2f}{r.sd_abs_bias:>8.2f}")
    lines.append(f"{'gam':<14}{'not implemented':>41}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    records = read_benchmark_csv(args.input)
    rows = rank_table(records)
    boot = paired_bootstrap(records, args.reference, resamples=args.resamples, seed=args.seed)
    settings = setting_summary(records)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_rows_csv(rows, out / "rank_table.csv",
                   ("method", "sum_of_ranks", "median_rank", "iqr_rank", "mean_abs_bias", "sd_abs_bias"))
    write_rows_csv(boot, out / "bootstrap.csv", ("method", "reference", "mean_diff", "ci_low", "ci_high"))
    write_rows_csv(settings, out / "settings.csv",
                   ("method", "scenario", "family", "sigma", "mean_abs_bias", "min_abs_bias",
                    "max_abs_bias", "replicates"))
    print(format_rank_table(rows))
    print()
    print(f"paired bootstrap vs {args.reference} ({args.resamples} resamples, 95% percentile CI)")
    for b in boot:
        print(f"  {b.method:<14}{b.mean_diff:>8.3f}  [{b.ci_low:.3f}, {b.ci_high:.3f}]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="doseopt", description="Bayesian fractional polynomial dose-response fitting")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a dose,response CSV and report the optimal dose")
    f.add_argument("input")
    f.add_argument("--family", choices=("gaussian", "bernoulli"), default="gaussian")
    f.add_argument("--search", choices=("mjmcmc", "enumerate"), default="mjmcmc")
    f.add_argument("--iterations", type=int, default=DEFAULT_ITERATIONS)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--g", type=_g_arg, default=None, help="g-prior scale; default max(n, 256); 'eb' for empirical Bayes")
    f.add_argument("--grid-min", type=float, default=0.4)
    f.add_argument("--grid-max", type=float, default=30.0)
    f.add_argument("--grid-points", type=int, default=512)
    f.add_argument("--draws", type=int, default=4000)
    f.add_argument("--estimator", choices=ESTIMATORS, default="pmedian")
    f.add_argument("--max-terms", type=int, default=None)
    f.add_argument("--output", default="doseopt_fit")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="simulate one scenario dataset")
    s.add_argument("--scenario", choices=SCENARIOS, required=True)
    s.add_argument("--family", choices=("gaussian", "bernoulli"), default="gaussian")
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--sigma-free", action="store_true", help="allow sigma outside the benchmark grid")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--replicates", type=int, default=None, help="replicates per dose")
    s.add_argument("--doses", type=float, nargs="+", default=None)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("benchmark", help="run the simulation benchmark")
    b.add_argument("--config", help="JSON file with BenchmarkConfig fields")
    b.add_argument("--methods", nargs="+", choices=METHODS)
    b.add_argument("--scenarios", nargs="+", choices=SCENARIOS)
    b.add_argument("--families", nargs="+", choices=("gaussian", "bernoulli"))
    b.add_argument("--sigmas", nargs="+", type=float)
    b.add_argument("--replicates", type=int)
    b.add_argument("--master-seed", type=int)
    b.add_argument("--search", choices=("mjmcmc", "enumerate"))
    b.add_argument("--iterations", type=int)
    b.add_argument("--draws", type=int)
    b.add_argument("--threads", type=int, default=None, help="worker processes (default: DOSEOPT_THREADS or CPU count)")
    b.add_argument("--dry-run", action="store_true")
    b.add_argument("--output", default="benchmark.csv")
    b.set_defaults(func=cmd_benchmark)

    r = sub.add_parser("report", help="rank table and bootstrap comparisons from a benchmark CSV")
    r.add_argument("input")
    r.add_argument("--reference", default="bfp_pmedian")
    r.add_argument("--resamples", type=int, default=2000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--output", default="benchmark_report")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InfeasibleModelSpaceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InputFormatError, UsageError, DoseDomainError, MissingCellError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
