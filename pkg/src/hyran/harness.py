"""Experiment driver: seeded trajectories, hyperparameter grids, aggregation
and CSV output."""

from __future__ import annotations

import csv
import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from hyran.baselines import DRTS, LinTS, LinUCB, SupLinUCB, UniformRandom
from hyran.core import HyRanBandit, RegularizationSchedule
from hyran.environment import (
    ContextStream,
    EnvironmentSpec,
    RegretTrace,
    correlated_gaussian_env,
    gen_hard_instance,
)
from hyran.errors import InvalidArgument, UnsupportedConfiguration

log = logging.getLogger(__name__)

CSV_HEADER = ["algo", "d", "N", "T", "hyper_name", "hyper_value", "rep", "t", "cum_regret"]
AGG_HEADER = ["algo", "d", "N", "T", "hyper_name", "hyper_value", "t", "mean_cum_regret", "std_cum_regret", "reps"]
BEST_HEADER = ["algo", "hyper_name", "hyper_value", "mean_final_regret", "std_final_regret"]

HYPER_NAMES = {"hyran": "p", "linucb": "alpha", "suplinucb": "alpha", "lints": "v", "drts": "v", "random": "none"}
DEFAULT_HYPERS = {"hyran": 0.5, "linucb": 1.0, "suplinucb": 1.0, "lints": 1.0, "drts": 1.0, "random": 0.0}
PAPER_GRIDS = {
    "hyran": [0.5, 0.65, 0.8, 0.95],
    "linucb": [0.001, 0.01, 0.1, 1.0],
    "lints": [0.001, 0.01, 0.1, 1.0],
    "suplinucb": [0.001, 0.01, 0.1, 1.0],
    "drts": [0.001, 0.01, 0.1, 1.0],
}
PAPER_ALGOS = ["hyran", "linucb", "lints", "suplinucb"]
OUT_DIR_ENV = "HYRAN_OUT_DIR"


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_DIR_ENV, "hyran_out"))


@dataclass
class ExperimentConfig:
    algos: list[str] = field(default_factory=lambda: ["hyran"])
    hypers: dict[str, float] = field(default_factory=dict)
    grid: dict[str, list[float]] = field(default_factory=dict)
    env: str = "correlated_gaussian"
    d: int = 5
    N: int = 10
    T: int = 1000
    sigma: float = 1.0
    reps: int = 10
    master_seed: int = 0
    schedule: str = "practical"
    impute_mode: str = "practical"
    impute_timing: str = "refit"
    delta: float = 0.05
    experimental: bool = False
    workers: int = 1
    out_dir: Path = field(default_factory=default_out_dir)

    def __post_init__(self):
        for algo in self.algos:
            if algo not in HYPER_NAMES:
                raise InvalidArgument(f"unknown algorithm {algo!r}")
            if algo == "drts" and not self.experimental:
                raise UnsupportedConfiguration("DRTS is experimental; enable the experimental flag")
        if self.env not in ("correlated_gaussian", "hard_instance"):
            raise InvalidArgument(f"unknown environment {self.env!r}")
        if self.T < 0 or self.reps < 1:
            raise InvalidArgument(f"need T >= 0 and reps >= 1, got T={self.T}, reps={self.reps}")
        if self.env == "hard_instance" and not 2 <= self.d <= self.N:
            raise InvalidArgument(f"hard instance needs 2 <= d <= N, got d={self.d}, N={self.N}")
        self.out_dir = Path(self.out_dir)

    @classmethod
    def paper_preset(cls, **overrides) -> "ExperimentConfig":
        base = dict(algos=list(PAPER_ALGOS), grid={a: list(PAPER_GRIDS[a]) for a in PAPER_ALGOS}, T=30000, reps=20)
        base.update(overrides)
        return cls(**base)

    def cells(self, use_grid: bool) -> list[tuple[str, str, float]]:
        """``(algo, hyper_name, hyper_value)`` for every configuration to run."""
        out = []
        for algo in self.algos:
            name = HYPER_NAMES[algo]
            if use_grid and algo in self.grid and self.grid[algo]:
                values = self.grid[algo]
            else:
                values = [self.hypers.get(algo, DEFAULT_HYPERS[algo])]
            out.extend((algo, name, float(v)) for v in values)
        return out


def config_key(algo: str, hyper_name: str, hyper_value: float) -> int:
    """Stable integer id of a configuration, independent of grid composition."""
    return zlib.crc32(f"{algo}|{hyper_name}|{float(hyper_value)!r}".encode())


def _env_streams(master_seed: int, rep: int):
    ss = np.random.SeedSequence([master_seed, rep, 0x5EED])
    beta_ss, ctx_ss, noise_ss = ss.spawn(3)
    return np.random.default_rng(beta_ss), np.random.default_rng(ctx_ss), np.random.default_rng(noise_ss)


def _algo_streams(master_seed: int, key: int, rep: int):
    ss = np.random.SeedSequence([master_seed, key, rep])
    algo_ss, h_ss = ss.spawn(2)
    return np.random.default_rng(algo_ss), np.random.default_rng(h_ss)


def build_environment(config: ExperimentConfig, rep: int) -> tuple[EnvironmentSpec, ContextStream]:
    beta_rng, ctx_rng, noise_rng = _env_streams(config.master_seed, rep)
    if config.env == "hard_instance":
        specs, X = gen_hard_instance(config.d, config.N, max(config.T, 1))
        spec = specs[rep % config.d]
        return spec, ContextStream(spec, ctx_rng, noise_rng, fixed_contexts=X)
    spec = correlated_gaussian_env(config.d, config.N, beta_rng, noise_sigma=config.sigma)
    return spec, ContextStream(spec, ctx_rng, noise_rng)


def make_policy(
    algo: str,
    hyper: float,
    d: int,
    N: int,
    T: int,
    algo_rng: np.random.Generator,
    h_rng: np.random.Generator,
    schedule: str = "practical",
    impute_mode: str = "practical",
    impute_timing: str = "refit",
    delta: float = 0.05,
    experimental: bool = False,
    record: bool = False,
):
    if algo == "hyran":
        sched = RegularizationSchedule(schedule, d, delta if schedule == "theory" else None)
        return HyRanBandit(
            d,
            N,
            p=hyper,
            schedule=sched,
            h_rng=h_rng,
            impute_mode=impute_mode,
            impute_timing=impute_timing,
            delta=delta,
            record=record,
        )
    if algo == "linucb":
        return LinUCB(d, alpha=hyper)
    if algo == "lints":
        return LinTS(d, v=hyper, rng=algo_rng)
    if algo == "suplinucb":
        return SupLinUCB(d, T=max(T, 1), alpha=hyper)
    if algo == "drts":
        return DRTS(d, N, v=hyper, rng=algo_rng, experimental=experimental)
    if algo == "random":
        return UniformRandom(N, rng=algo_rng)
    raise InvalidArgument(f"unknown algorithm {algo!r}")


def build_policy(config: ExperimentConfig, algo: str, hyper: float, rep: int, record: bool = False):
    algo_rng, h_rng = _algo_streams(config.master_seed, config_key(algo, HYPER_NAMES[algo], hyper), rep)
    return make_policy(
        algo, hyper, config.d, config.N, config.T, algo_rng, h_rng,
        schedule=config.schedule,
        impute_mode=config.impute_mode,
        impute_timing=config.impute_timing,
        delta=config.delta,
        experimental=config.experimental,
        record=record,
    )


def play(policy, stream: ContextStream, beta_star: np.ndarray, T: int) -> RegretTrace:
    """Run ``policy`` for ``T`` rounds against ``stream``."""
    arms = np.empty(T, dtype=np.int64)
    hs = np.full(T, -1, dtype=np.int64)
    rewards = np.empty(T)
    regret = np.empty(T)
    for k, (X, Y) in enumerate(stream.rounds(T)):
        a = policy.select(X)
        policy.update(X, a, Y[a])
        means = X @ beta_star
        arms[k] = a
        rewards[k] = Y[a]
        regret[k] = means.max() - means[a]
        h = getattr(policy, "last_h", None)
        if h is not None:
            hs[k] = h
    return RegretTrace(arms, hs, rewards, regret)


def run_trajectory(
    config: ExperimentConfig, rep_index: int, algo: str | None = None, hyper: float | None = None
) -> RegretTrace:
    algo = algo or config.algos[0]
    if hyper is None:
        hyper = config.hypers.get(algo, DEFAULT_HYPERS[algo])
    spec, stream = build_environment(config, rep_index)
    policy = build_policy(config, algo, hyper, rep_index)
    trace = play(policy, stream, spec.beta_star, config.T)
    trace.metadata = {
        "seed": config.master_seed,
        "rep": rep_index,
        "algo": algo,
        "hyper_name": HYPER_NAMES[algo],
        "hyper_value": float(hyper),
        "spec": spec.to_dict(),
    }
    return trace


def _run_cell(args) -> tuple[tuple, np.ndarray]:
    config, algo, name, value, rep = args
    trace = run_trajectory(config, rep, algo, value)
    return (algo, name, value, rep), trace.cum_regret


def run_cells(config: ExperimentConfig, cells: list[tuple[str, str, float]]) -> dict[tuple, np.ndarray]:
    """Cumulative-regret curves keyed by ``(algo, hyper_name, hyper_value, rep)``."""
    jobs = [(config, a, n, v, r) for (a, n, v) in cells for r in range(config.reps)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_cell, jobs, chunksize=1))
    else:
        results = [_run_cell(j) for j in jobs]
    return dict(sorted(results, key=lambda kv: kv[0]))


@dataclass
class CurveStats:
    algo: str
    hyper_name: str
    hyper_value: float
    mean: np.ndarray
    std: np.ndarray
    reps: int

    @property
    def final_mean(self) -> float:
        return float(self.mean[-1]) if self.mean.size else 0.0


@dataclass
class AggregateResult:
    curves: list[CurveStats]
    best: dict[str, CurveStats]
    final_std: dict[tuple, float] = field(default_factory=dict)

    def curve(self, algo: str, hyper_value: float) -> CurveStats:
        for c in self.curves:
            if c.algo == algo and c.hyper_value == hyper_value:
                return c
        raise KeyError((algo, hyper_value))


def aggregate(raw: dict[tuple, np.ndarray]) -> AggregateResult:
    groups: dict[tuple, list[np.ndarray]] = {}
    for (algo, name, value, _rep), curve in raw.items():
        groups.setdefault((algo, name, value), []).append(curve)
    curves = []
    final_std = {}
    for (algo, name, value), members in sorted(groups.items()):
        M = np.vstack(members) if members[0].size else np.zeros((len(members), 0))
        ddof = 1 if len(members) > 1 else 0
        std = M.std(axis=0, ddof=ddof)
        curves.append(CurveStats(algo, name, value, M.mean(axis=0), std, len(members)))
        final_std[(algo, value)] = float(std[-1]) if std.size else 0.0
    return AggregateResult(curves, select_best(curves), final_std)


def select_best(curves: list[CurveStats]) -> dict[str, CurveStats]:
    """Lowest mean final cumulative regret per algorithm; ties go to the smaller value."""
    best: dict[str, CurveStats] = {}
    for c in sorted(curves, key=lambda c: (c.algo, c.final_mean, c.hyper_value)):
        best.setdefault(c.algo, c)
    return best


def _fmt(x: float) -> str:
    return repr(float(x))


def write_raw_csv(path: Path, config: ExperimentConfig, raw: dict[tuple, np.ndarray]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for (algo, name, value, rep), curve in sorted(raw.items()):
                prefix = [algo, config.d, config.N, config.T, name, _fmt(value), rep]
                for t, cr in enumerate(curve.tolist(), start=1):
                    w.writerow(prefix + [t, _fmt(cr)])
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    return path


def write_aggregate_csv(path: Path, config: ExperimentConfig, agg: AggregateResult) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(AGG_HEADER)
            for c in agg.curves:
                for t in range(c.mean.size):
                    w.writerow(
                        [c.algo, config.d, config.N, config.T, c.hyper_name, _fmt(c.hyper_value),
                         t + 1, _fmt(c.mean[t]), _fmt(c.std[t]), c.reps]
                    )
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    return path


def write_best_csv(path: Path, agg: AggregateResult) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(BEST_HEADER)
            for algo, c in sorted(agg.best.items()):
                w.writerow([algo, c.hyper_name, _fmt(c.hyper_value), _fmt(c.final_mean),
                            _fmt(agg.final_std[(algo, c.hyper_value)])])
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    return path


def read_raw_csv(path: Path) -> dict[tuple, np.ndarray]:
    """Inverse of :func:`write_raw_csv`."""
    rows: dict[tuple, list[tuple[int, float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["algo"], row["hyper_name"], float(row["hyper_value"]), int(row["rep"]))
            rows.setdefault(key, []).append((int(row["t"]), float(row["cum_regret"])))
    return {k: np.array([v for _, v in sorted(pts)]) for k, pts in rows.items()}


def run_experiment(config: ExperimentConfig, use_grid: bool, prefix: str = "run") -> tuple[AggregateResult, dict[str, Path]]:
    """Run every cell, write raw/aggregate/best CSVs and return the aggregate."""
    cells = config.cells(use_grid)
    if not cells:
        raise InvalidArgument("empty grid")
    log.info("running %d configurations x %d repetitions, T=%d", len(cells), config.reps, config.T)
    raw = run_cells(config, cells)
    agg = aggregate(raw)
    out = config.out_dir
    paths = {
        "raw": write_raw_csv(out / f"{prefix}_regret.csv", config, raw),
        "aggregate": write_aggregate_csv(out / f"{prefix}_aggregate.csv", config, agg),
        "best": write_best_csv(out / f"{prefix}_best.csv", agg),
    }
    return agg, paths


def run_grid(config: ExperimentConfig) -> tuple[AggregateResult, dict[str, Path]]:
    return run_experiment(config, use_grid=True, prefix="grid")


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **kw)
