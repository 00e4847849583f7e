"""Acceptance suite: one test per criterion, each logging a single pass/fail line.

Every criterion runs at its stated size and tolerance. Total runtime is a few
minutes on one core.
"""

import math
import os

import numpy as np
import pytest

from hyran.cli import main, run_check, CHECK_DEFAULTS
from hyran.core import BanditState, HybridizationConfig, HyRanBandit, estimate
from hyran.harness import ExperimentConfig, PAPER_ALGOS, PAPER_GRIDS, aggregate, read_raw_csv, run_grid

SEED = 0


@pytest.fixture(scope="module")
def scaled_grid(tmp_path_factory):
    out = tmp_path_factory.mktemp("grid")
    config = ExperimentConfig(
        algos=list(PAPER_ALGOS),
        grid={a: list(PAPER_GRIDS[a]) for a in PAPER_ALGOS},
        d=5, N=10, sigma=1.0, T=5000, reps=10, master_seed=SEED,
        workers=os.cpu_count() or 1, out_dir=out,
    )
    agg, paths = run_grid(config)
    return agg, paths


def test_criterion_01_ordering(scaled_grid, record_criterion):
    agg, _ = scaled_grid
    final = {a: agg.best[a].final_mean for a in PAPER_ALGOS}
    ok = final["hyran"] < final["linucb"] and final["hyran"] < final["lints"] and final["suplinucb"] == max(final.values())
    detail = ", ".join(f"{a}={final[a]:.2f} ({agg.best[a].hyper_name}={agg.best[a].hyper_value:g})" for a in PAPER_ALGOS)
    record_criterion(1, "grid-best ordering at d=5, T=5000, 10 reps", ok, detail)
    assert final["suplinucb"] == max(final.values())
    assert final["hyran"] < final["linucb"]
    assert final["hyran"] < final["lints"]


def test_criterion_02_sublinear(scaled_grid, record_criterion):
    agg, _ = scaled_grid
    curve = agg.best["hyran"]
    early = curve.mean[499] / 500
    late = curve.mean[4999] / 5000
    ok = late < 0.5 * early
    record_criterion(2, "sublinear HyRan regret", ok, f"R(5000)/5000={late:.5f}, 0.5*R(500)/500={0.5 * early:.5f}")
    assert ok


def test_criterion_03_psi_size(record_criterion):
    rep = run_check("psi_size", dict(CHECK_DEFAULTS["psi_size"]), SEED)
    assert (rep.trials, rep.details["threshold_round"] > 0) == (500, True)
    record_criterion(3, "|Psi_t| concentration", rep.passed,
                     f"violation rate {rep.rate:.4f} <= {rep.threshold:.4f}; within 4sd {rep.details['fraction_within_4sd']:.3f}")
    assert rep.passed


def test_criterion_04_self_normalized(record_criterion):
    params = dict(CHECK_DEFAULTS["self_normalized"])
    assert params == dict(d=5, N=10, p=0.5, delta=0.05, T=2000, trials=100, burn_in=200)
    rep = run_check("self_normalized", params, SEED)
    record_criterion(4, "self-normalized bound", rep.passed,
                     f"violation rate {rep.rate:.4f} <= {rep.threshold:.4f}; median ratio {rep.details['median_norm_to_bound_ratio']:.4f}")
    assert rep.passed


def test_criterion_05_regret_decomposition(record_criterion):
    params = dict(CHECK_DEFAULTS["regret_decomposition"])
    assert (params["d"], params["N"], params["T"], params["trials"]) == (5, 10, 500, 50)
    rep = run_check("regret_decomposition", params, SEED)
    cs = rep.details["cauchy_schwarz_failures"]
    dec = rep.details["decomposition_failures"]
    record_criterion(5, "regret decomposition audit", rep.passed,
                     f"{rep.trials} audited rounds, {dec} decomposition and {cs} Cauchy-Schwarz exceptions")
    assert cs == 0 and dec == 0


def test_criterion_06_pseudo_rewards(record_criterion):
    params = dict(CHECK_DEFAULTS["pseudo_rewards"])
    assert (params["trials"], params["draws"]) == (100, 10_000)
    rep = run_check("pseudo_rewards", params, SEED)
    record_criterion(6, "pseudo-reward unbiasedness", rep.passed,
                     f"max |z| reward {rep.details['max_z_reward']:.2f}, multiplier {rep.details['max_z_multiplier']:.2f} (limit 4)")
    assert rep.passed


def test_criterion_07_lower_bound(record_criterion):
    params = dict(CHECK_DEFAULTS["lower_bound"])
    assert (params["d"], params["N"], params["T"], params["runs"], params["algo"]) == (4, 4, 1024, 20, "hyran")
    rep = run_check("lower_bound", params, SEED)
    assert rep.threshold == 8.0
    record_criterion(7, "hard-instance lower bound", rep.passed,
                     f"mean regret {rep.details['mean_regret']:.2f} >= 8.0 - 2*{rep.details['se']:.2f}")
    assert rep.passed


def _random_trajectory(rng):
    d = int(rng.integers(1, 11))
    N = int(rng.integers(2, 11))
    T = int(rng.integers(1, 101))
    timing = "lagged" if rng.random() < 0.5 else "refit"
    bandit = HyRanBandit(d, N, p=float(rng.uniform(0.1, 0.9)), h_rng=np.random.default_rng(rng.integers(2**32)),
                         impute_timing=timing, record=True)
    beta = rng.uniform(-1, 1, d) / math.sqrt(d)
    for _ in range(T):
        X = rng.standard_normal((N, d))
        X /= np.maximum(1.0, np.linalg.norm(X, axis=1, keepdims=True))
        a = bandit.select(X)
        bandit.update(X, a, float(X[a] @ beta + rng.standard_normal()))
    return bandit


def _from_scratch(bandit):
    st = bandit.state
    p = st.hybrid.p
    V = np.eye(st.d)
    Z = np.zeros(st.d)
    for e in bandit.log:
        X, a, h, y = e["contexts"], e["arm"], e["h"], e["reward"]
        if h == a:
            imp = e["impute_before"] if st.impute_timing == "lagged" else st.impute
            yt = X @ imp
            yt[a] = (1 - 1 / p) * yt[a] + y / p
            V += X.T @ X
            Z += X.T @ yt
        else:
            V += np.outer(X[a], X[a])
            Z += X[a] * y
    return V, Z


def test_criterion_08_oracles(scaled_grid, record_criterion):
    rng = np.random.default_rng(SEED)
    worst_gram = 0.0
    for _ in range(100):
        b = _random_trajectory(rng)
        V, Z = _from_scratch(b)
        worst_gram = max(worst_gram,
                         np.linalg.norm(b.state.V - V) / np.linalg.norm(V),
                         np.linalg.norm(b.state.Z - Z) / max(np.linalg.norm(Z), 1e-300))
    worst_inv = 0.0
    for d in (1, 2, 3):
        for _ in range(50):
            M = rng.standard_normal((d, d))
            st = BanditState(d, HybridizationConfig(0.5, 2), V=np.eye(d) + M @ M.T, Z=rng.standard_normal(d))
            lam = float(rng.uniform(0.1, 10))
            ref = np.linalg.inv(st.V + lam * np.eye(d)) @ st.Z
            worst_inv = max(worst_inv, float(np.abs(estimate(st, lam) - ref).max()))
    _, paths = scaled_grid
    raw = read_raw_csv(paths["raw"])
    agg = aggregate(raw)
    worst_agg = 0.0
    for c in agg.curves:
        M = np.vstack([v for k, v in raw.items() if k[0] == c.algo and k[2] == c.hyper_value])
        worst_agg = max(worst_agg, float(np.abs(c.mean - M.mean(axis=0)).max()),
                        float(np.abs(c.std - M.std(axis=0, ddof=1)).max()))
    ok = worst_gram <= 1e-8 and worst_inv <= 1e-10 and worst_agg <= 1e-10
    record_criterion(8, "oracle equivalences", ok,
                     f"Gram rel err {worst_gram:.2e}, solve vs inverse {worst_inv:.2e}, aggregate {worst_agg:.2e}")
    assert ok


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_09_determinism(tmp_path, record_criterion):
    common = ["--T", "300", "--reps", "3", "--d", "4", "--N", "5", "--seed", "11"]
    runs = {
        "run": ["run", "--algo", "hyran", "--algo", "lints", "--algo", "suplinucb"] + common,
        "grid": ["grid", "--grid", "hyran=0.5,0.8", "--grid", "linucb=0.1,1"] + common,
    }
    identical = True
    for name, argv in runs.items():
        outs = []
        for k, workers in enumerate(("1", "1", "3")):
            out = tmp_path / f"{name}{k}"
            assert main(argv + ["--workers", workers, "--out-dir", str(out)]) == 0
            outs.append(_tree_bytes(out))
        identical &= outs[0] == outs[1] == outs[2]
    diag = ["diagnose", "--check", "all", "--seed", "4", "--T", "150", "--trials", "4", "--runs", "2", "--M", "40",
            "--draws", "500", "--mc-contexts", "50", "--burn-in", "20"]
    outs = []
    for k in range(2):
        out = tmp_path / f"diag{k}"
        main(diag + ["--out-dir", str(out)])
        outs.append(_tree_bytes(out))
    identical &= outs[0] == outs[1] and len(outs[0]) > 0
    record_criterion(9, "byte-identical reruns (run, grid serial/parallel, diagnose)", identical,
                     f"{sum(len(o) for o in outs)} diagnose files compared")
    assert identical


def test_criterion_10_estimator_cloud(record_criterion):
    params = dict(CHECK_DEFAULTS["estimator_cloud"])
    assert (params["d"], params["T"], params["M"], params["p"]) == (2, 1000, 1000, 0.5)
    rep = run_check("estimator_cloud", params, SEED)
    s_lo = rep.details["spread_p"]
    record_criterion(10, "estimator cloud spread and collapse", rep.passed,
                     f"spread at p=0.5 {s_lo[0]:.2e}/{s_lo[1]:.2e}, ratio at p=0.999 {max(rep.empirical):.4f} < 0.1")
    assert min(s_lo) > 0
    assert rep.passed
