"""Command-line entry point: ``hyran run | grid | diagnose | plot``.

Exit codes: 0 success, 1 a diagnostic failed (or an output could not be
written), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from hyran import diagnostics as dg
from hyran.config import load_config, merge
from hyran.environment import correlated_gaussian_env
from hyran.errors import HyranError, InvalidArgument, UnsupportedConfiguration
from hyran.harness import (
    PAPER_ALGOS,
    PAPER_GRIDS,
    AggregateResult,
    CurveStats,
    ExperimentConfig,
    aggregate,
    default_out_dir,
    read_raw_csv,
    run_experiment,
)
from hyran.plotting import emit_cloud_plot, emit_plot

log = logging.getLogger("hyran")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

CHECKS = (
    "psi_size",
    "self_normalized",
    "regret_decomposition",
    "imputation_error",
    "lower_bound",
    "pseudo_rewards",
    "estimator_cloud",
)

# per-check defaults, sized like the acceptance runs
CHECK_DEFAULTS = {
    "psi_size": dict(p=0.5, epsilon=0.5, delta=0.1, T=2000, trials=500),
    "self_normalized": dict(d=5, N=10, p=0.5, delta=0.05, T=2000, trials=100, burn_in=200),
    "regret_decomposition": dict(d=5, N=10, p=0.5, T=500, trials=50, mc_contexts=500),
    "imputation_error": dict(d=5, N=10, p=0.5, delta=0.05, T=5000, trials=20),
    "lower_bound": dict(algo="hyran", d=4, N=4, T=1024, runs=20, p=0.5),
    "pseudo_rewards": dict(d=5, N=10, p=0.5, trials=100, draws=10000),
    "estimator_cloud": dict(d=2, N=5, p=0.5, T=1000, M=1000),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI file; flags override its values")
    p.add_argument("--algo", action="append", dest="algos", help="algorithm (repeatable)")
    p.add_argument("--env", choices=["correlated_gaussian", "hard_instance"])
    p.add_argument("--d", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir", type=Path)
    p.add_argument("--workers", type=int)
    p.add_argument("--p", type=float, help="HyRan hybridization probability")
    p.add_argument("--alpha", type=float, help="LinUCB/SupLinUCB exploration weight")
    p.add_argument("--v", type=float, help="LinTS/DRTS posterior scale")
    p.add_argument("--schedule", choices=["practical", "theory"])
    p.add_argument("--impute-mode", dest="impute_mode", choices=["practical", "theory"])
    p.add_argument("--impute-timing", dest="impute_timing", choices=["refit", "lagged"])
    p.add_argument("--delta", type=float)
    p.add_argument("--experimental", action="store_true", default=None, help="enable DRTS")
    p.add_argument("--no-plot", action="store_true", help="skip the SVG figure")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hyran", description="HyRan contextual bandit experiments and diagnostics")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run algorithms at fixed hyperparameters")
    _add_common(run)

    grid = sub.add_parser("grid", help="hyperparameter grid search")
    _add_common(grid)
    grid.add_argument("--preset", choices=["paper"], help="published grids, T=30000, 20 repetitions")
    grid.add_argument("--grid", action="append", default=[], metavar="ALGO=V1,V2,...",
                      help="grid for one algorithm (repeatable)")

    diag = sub.add_parser("diagnose", help="Monte-Carlo checks of the estimator guarantees")
    diag.add_argument("--check", required=True, choices=list(CHECKS) + ["all"])
    diag.add_argument("--seed", type=int, default=0)
    diag.add_argument("--out-dir", dest="out_dir", type=Path)
    diag.add_argument("--algo", choices=["hyran", "linucb", "lints", "suplinucb", "random"])
    for name, kind in (("d", int), ("N", int), ("T", int), ("trials", int), ("runs", int), ("M", int),
                       ("draws", int), ("p", float), ("delta", float), ("epsilon", float)):
        diag.add_argument(f"--{name}", type=kind)
    diag.add_argument("--burn-in", dest="burn_in", type=int)
    diag.add_argument("--mc-contexts", dest="mc_contexts", type=int)
    diag.add_argument("--no-plot", action="store_true")

    plot = sub.add_parser("plot", help="render regret curves from raw or aggregate CSVs")
    plot.add_argument("--in", dest="inputs", nargs="+", required=True, type=Path)
    plot.add_argument("--out", required=True, type=Path)
    plot.add_argument("--title")
    return parser


def _parse_grid(items: list[str]) -> dict[str, list[float]]:
    grid = {}
    for item in items:
        algo, sep, values = item.partition("=")
        if not sep:
            raise InvalidArgument(f"--grid expects ALGO=V1,V2,..., got {item!r}")
        try:
            grid[algo.strip()] = [float(v) for v in values.split(",") if v.strip()]
        except ValueError as exc:
            raise InvalidArgument(f"bad grid values in {item!r}") from exc
        if not grid[algo.strip()]:
            raise InvalidArgument(f"empty grid for {algo!r}")
    return grid


def _experiment_config(args, preset: str | None = None, grid: dict | None = None) -> ExperimentConfig:
    file_values = load_config(args.config) if args.config else {}
    cli = {k: getattr(args, k) for k in ("algos", "env", "d", "N", "T", "sigma", "reps", "seed", "out_dir",
                                         "workers", "p", "alpha", "v", "schedule", "impute_mode",
                                         "impute_timing", "delta", "experimental")}
    values = merge(file_values, cli)
    kw = {}
    if preset == "paper":
        kw.update(algos=list(PAPER_ALGOS), grid={a: list(PAPER_GRIDS[a]) for a in PAPER_ALGOS}, T=30000, reps=20)
    for key in ("env", "d", "N", "T", "sigma", "reps", "workers", "schedule", "impute_mode",
                "impute_timing", "delta", "experimental"):
        if key in values:
            kw[key] = values[key]
    if "algos" in values:
        kw["algos"] = values["algos"]
    if "seed" in values:
        kw["master_seed"] = values["seed"]
    kw["out_dir"] = Path(values["out_dir"]) if "out_dir" in values else default_out_dir()
    hypers = {}
    if "p" in values:
        hypers["hyran"] = values["p"]
    if "alpha" in values:
        hypers["linucb"] = hypers["suplinucb"] = values["alpha"]
    if "v" in values:
        hypers["lints"] = hypers["drts"] = values["v"]
    kw["hypers"] = hypers
    g = dict(kw.get("grid", {}))
    g.update(values.get("grid", {}))
    g.update(grid or {})
    if g:
        kw["grid"] = g
        if "algos" not in values and preset is None:
            kw["algos"] = list(g)
    return ExperimentConfig(**kw)


def _plot_best(agg: AggregateResult, path: Path, title: str) -> Path:
    return emit_plot([agg.best[a] for a in sorted(agg.best)], path, title=title)


def cmd_run(args) -> int:
    config = _experiment_config(args)
    agg, paths = run_experiment(config, use_grid=False, prefix="run")
    if not args.no_plot:
        paths["plot"] = emit_plot(agg.curves, config.out_dir / "run_regret.svg", title=f"d={config.d}, N={config.N}")
    _report_run(agg, paths)
    return EXIT_OK


def cmd_grid(args) -> int:
    grid = _parse_grid(args.grid)
    if args.preset is None and not grid and not args.config:
        raise InvalidArgument("grid needs --preset paper, --grid ALGO=..., or a config with a [grid] section")
    config = _experiment_config(args, preset=args.preset, grid=grid)
    agg, paths = run_experiment(config, use_grid=True, prefix="grid")
    if not args.no_plot:
        paths["plot"] = _plot_best(agg, config.out_dir / "grid_best.svg", f"best per algorithm, d={config.d}")
    _report_run(agg, paths)
    return EXIT_OK


def _report_run(agg: AggregateResult, paths: dict) -> None:
    print("algo,hyper_name,hyper_value,mean_final_regret,std_final_regret")
    for c in agg.curves:
        print(f"{c.algo},{c.hyper_name},{c.hyper_value!r},{c.final_mean!r},{agg.final_std[(c.algo, c.hyper_value)]!r}")
    print("best: " + ", ".join(f"{a}={c.hyper_value:g}" for a, c in sorted(agg.best.items())))
    for kind, path in sorted(paths.items()):
        print(f"wrote {kind}: {path}")


def _diag_params(check: str, args) -> dict:
    params = dict(CHECK_DEFAULTS[check])
    for key in ("d", "N", "T", "trials", "runs", "M", "draws", "p", "delta", "epsilon", "burn_in",
                "mc_contexts", "algo"):
        value = getattr(args, key, None)
        if value is not None and (key in params or key == "burn_in"):
            params[key] = value
    return params


def run_check(check: str, params: dict, seed: int, out_dir: Path | None = None, plot: bool = True) -> dg.DiagnosticReport:
    """Run one named diagnostic; ``seed`` together with ``check`` fixes every draw."""
    ss = np.random.SeedSequence([seed, CHECKS.index(check)])
    env_ss, run_ss = ss.spawn(2)
    rng = np.random.default_rng(run_ss)
    q = params
    if check == "psi_size":
        report = dg.check_psi_size(q["p"], q["epsilon"], q["T"], q["delta"], q["trials"], rng)
    elif check == "self_normalized":
        spec = correlated_gaussian_env(q["d"], q["N"], np.random.default_rng(env_ss))
        settings = dg.HyRanSettings(p=q["p"], schedule="theory", impute_mode="theory", delta=q["delta"])
        report = dg.check_self_normalized(settings, spec, q["T"], q["trials"], rng, burn_in=q.get("burn_in"))
    elif check == "regret_decomposition":
        spec = correlated_gaussian_env(q["d"], q["N"], np.random.default_rng(env_ss))
        report = dg.check_regret_decomposition(dg.HyRanSettings(p=q["p"]), spec, q["T"], q["trials"],
                                               q["mc_contexts"], rng)
    elif check == "imputation_error":
        spec = correlated_gaussian_env(q["d"], q["N"], np.random.default_rng(env_ss))
        settings = dg.HyRanSettings(p=q["p"], schedule="theory", impute_mode="theory", delta=q["delta"])
        report = dg.check_imputation_error(settings, spec, q["T"], q["trials"], rng, burn_in=q.get("burn_in"))
    elif check == "lower_bound":
        hyper = q["p"] if q["algo"] == "hyran" else None
        report = dg.check_lower_bound(q["algo"], q["d"], q["N"], q["T"], q["runs"], rng, hyper=hyper)
    elif check == "pseudo_rewards":
        report = dg.check_pseudo_rewards(q["trials"], q["draws"], rng, d=q["d"], N=q["N"], p=q["p"])
    else:
        report, clouds, beta = dg.check_estimator_cloud(d=q["d"], N=q["N"], t=q["T"], M=q["M"], p=q["p"], seed=seed)
        if out_dir is not None:
            for p, cloud in sorted(clouds.items()):
                dg.write_cloud(Path(out_dir) / f"estimator_cloud_p{p:g}.csv", cloud)
            if plot:
                emit_cloud_plot(clouds, beta, Path(out_dir) / "estimator_cloud.svg")
    if out_dir is not None:
        report.write(Path(out_dir))
    return report


def cmd_diagnose(args) -> int:
    out_dir = args.out_dir or default_out_dir()
    checks = list(CHECKS) if args.check == "all" else [args.check]
    failed = []
    for check in checks:
        report = run_check(check, _diag_params(check, args), args.seed, out_dir, plot=not args.no_plot)
        print(report.summary())
        if not report.passed:
            failed.append(check)
    print(f"diagnostics: {len(checks) - len(failed)}/{len(checks)} passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return EXIT_FAIL if failed else EXIT_OK


def _read_curves(path: Path) -> list[CurveStats]:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    if "cum_regret" in header:
        return aggregate(read_raw_csv(path)).curves
    if "mean_cum_regret" in header:
        rows: dict[tuple, list] = {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                key = (row["algo"], row["hyper_name"], float(row["hyper_value"]))
                rows.setdefault(key, []).append(
                    (int(row["t"]), float(row["mean_cum_regret"]), float(row["std_cum_regret"]), int(row["reps"]))
                )
        curves = []
        for (algo, name, value), pts in sorted(rows.items()):
            pts.sort()
            curves.append(CurveStats(algo, name, value, np.array([p[1] for p in pts]),
                                     np.array([p[2] for p in pts]), pts[0][3]))
        return curves
    raise InvalidArgument(f"{path} is neither a raw nor an aggregate regret CSV")


def cmd_plot(args) -> int:
    curves = []
    for path in args.inputs:
        if not path.exists():
            raise InvalidArgument(f"input {path} does not exist")
        curves.extend(_read_curves(path))
    out = emit_plot(curves, args.out, title=args.title)
    print(f"wrote plot: {out}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "grid": cmd_grid, "diagnose": cmd_diagnose, "plot": cmd_plot}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InvalidArgument, UnsupportedConfiguration) as exc:
        print(f"hyran: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HyranError, OSError) as exc:
        print(f"hyran: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
