"""Monte-Carlo checks of the HyRan guarantees.

Each ``check_*`` function returns a :class:`DiagnosticReport` with a
machine-readable verdict. Bounds whose constants involve the unspecified
absolute constant ``C`` are reported parametrically; no verdict depends on it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hyran.core import (
    HybridizationConfig,
    HyRanBandit,
    RegularizationSchedule,
    hybridization_from_uniform,
    lambda_value,
    sample_hybridization,
    theory_gamma,
)
from hyran.environment import (
    ContextStream,
    EnvironmentSpec,
    correlated_gaussian_env,
    estimate_phi_sq,
    gen_contexts_batch,
    gen_hard_instance,
)
from hyran.errors import InsufficientData, InvalidArgument


@dataclass
class BoundParams:
    p: float
    sigma: float = 1.0
    delta: float = 0.05
    epsilon: float = 0.5
    phi_sq_hat: float | None = None
    C: float = 1.0  # placeholder for the unnamed absolute constant

    def __post_init__(self):
        for name in ("p", "delta", "epsilon"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise InvalidArgument(f"{name} must lie in (0, 1), got {v}")

    @property
    def D(self) -> float:
        return 1.0 + 4.0 * math.sqrt(2.0) / (1.0 - self.p) + self.sigma / self.p

    @property
    def C_p_sigma(self) -> float:
        p, s = self.p, self.sigma
        return 8.0 * (2.0 - p) / ((1.0 - p) * math.sqrt(p)) + math.sqrt(2.0) * self.C * s / p**2 + 8.0 / math.sqrt(p)

    def exploration_horizon(self, N: int, T: int) -> float:
        """Burn-in ``max{(8/p) log(T/delta), C_{p,sigma} N^2 phi^-4 log(2T/delta)}``, at least 1."""
        first = 8.0 / self.p * math.log(T / self.delta)
        if self.phi_sq_hat is None or self.phi_sq_hat <= 0:
            second = math.inf
        else:
            second = self.C_p_sigma * N**2 / self.phi_sq_hat**2 * math.log(2.0 * T / self.delta)
        return max(first, second, 1.0)

    def self_normalized_bound(self, t: int, d: int, lambda_t: float) -> float:
        width = 4.0 * math.sqrt(2.0) / (1.0 - self.p) + self.sigma / self.p
        return math.sqrt(lambda_t) + width * math.sqrt(d * math.log(4.0 * t * t / self.delta))

    def psi_threshold(self, T: int) -> float:
        return 2.0 / (self.p * (1.0 - self.epsilon) ** 2) * math.log(T / self.delta)


@dataclass
class DiagnosticReport:
    check: str
    trials: int
    violations: int
    passed: bool
    threshold: float = float("nan")
    empirical: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bound: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ci: tuple[float, float] = (float("nan"), float("nan"))
    details: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def rate(self) -> float:
        return self.violations / self.trials if self.trials else 0.0

    def summary(self) -> str:
        lines = [
            f"check: {self.check}",
            f"verdict: {'PASS' if self.passed else 'FAIL'}",
            f"trials: {self.trials}",
            f"violations: {self.violations}",
            f"violation rate: {self.rate:.6g}",
            f"threshold: {self.threshold:.6g}",
            f"confidence interval: [{self.ci[0]:.6g}, {self.ci[1]:.6g}]",
        ]
        for k in sorted(self.details):
            lines.append(f"{k}: {_fmt_value(self.details[k])}")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: Path) -> dict[str, Path]:
        """Write ``<check>_report.csv`` (series), ``<check>_summary.csv`` and ``<check>_summary.txt``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        series = out_dir / f"{self.check}_report.csv"
        with open(series, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["check", "index", "empirical", "bound"])
            n = max(self.empirical.size, self.bound.size)
            for i in range(n):
                e = self.empirical[i] if i < self.empirical.size else float("nan")
                b = self.bound[i] if i < self.bound.size else float("nan")
                w.writerow([self.check, i, repr(float(e)), repr(float(b))])
        summary_csv = out_dir / f"{self.check}_summary.csv"
        with open(summary_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["check", "trials", "violations", "rate", "threshold", "ci_low", "ci_high", "passed"])
            w.writerow([self.check, self.trials, self.violations, repr(self.rate), repr(float(self.threshold)),
                        repr(float(self.ci[0])), repr(float(self.ci[1])), int(self.passed)])
        text = out_dir / f"{self.check}_summary.txt"
        text.write_text(self.summary())
        return {"series": series, "summary_csv": summary_csv, "summary": text}


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _rate_ci(k: int, n: int) -> tuple[float, float]:
    """Normal-approximation 95% interval for a proportion, clipped to [0, 1]."""
    if n == 0:
        return (0.0, 1.0)
    r = k / n
    half = 1.96 * math.sqrt(max(r * (1 - r), 1.0 / n) / n)
    return (max(0.0, r - half), min(1.0, r + half))


@dataclass
class HyRanSettings:
    """How diagnostics build a HyRan policy."""

    p: float = 0.5
    schedule: str = "practical"
    impute_mode: str = "practical"
    impute_timing: str = "refit"
    delta: float = 0.05
    impute: np.ndarray | None = None

    def make(self, d: int, N: int, h_rng: np.random.Generator, record: bool = False) -> HyRanBandit:
        sched = RegularizationSchedule(self.schedule, d, self.delta if self.schedule == "theory" else None)
        return HyRanBandit(
            d, N, p=self.p, schedule=sched, h_rng=h_rng,
            impute_mode=self.impute_mode, impute_timing=self.impute_timing,
            delta=self.delta, impute=self.impute, record=record,
        )


def _child_rngs(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    return list(rng.spawn(n))


# --- |Psi_t| concentration -------------------------------------------------------


def check_psi_size(
    p: float,
    epsilon: float,
    T: int,
    delta: float,
    trials: int,
    rng: np.random.Generator,
    num_arms: int = 10,
) -> DiagnosticReport:
    """Fraction of ``h``-sequences with ``|Psi_t| < epsilon p t`` for some ``t`` past the threshold.

    The Psi indicator only depends on whether ``h`` hits the played arm, so the
    played arm is held at 0; :func:`sample_hybridization` draws every ``h``.
    """
    params = BoundParams(p=p, delta=delta, epsilon=epsilon)
    config = HybridizationConfig(p, num_arms)
    t0 = params.psi_threshold(T)
    t = np.arange(1, T + 1)
    mask = t >= t0
    finals = np.empty(trials)
    violated = 0
    for k, g in enumerate(_child_rngs(rng, trials)):
        hits = np.fromiter((sample_hybridization(0, config, g) == 0 for _ in range(T)), dtype=bool, count=T)
        psi = np.cumsum(hits)
        if np.any(psi[mask] < epsilon * p * t[mask]):
            violated += 1
        finals[k] = psi[-1] / T if T else 0.0
    se_rate = math.sqrt(delta * (1 - delta) / trials)
    threshold = delta + 3 * se_rate
    frac = violated / trials
    tol = 4 * math.sqrt(p * (1 - p) / T)
    within = float(np.mean(np.abs(finals - p) <= tol))
    mean_se = math.sqrt(p * (1 - p) / (T * trials))
    mean_ok = abs(finals.mean() - p) <= 4 * mean_se
    passed = frac <= threshold and within >= 0.99 and mean_ok
    return DiagnosticReport(
        check="psi_size",
        trials=trials,
        violations=violated,
        passed=passed,
        threshold=threshold,
        empirical=finals,
        bound=np.full(trials, p),
        ci=_rate_ci(violated, trials),
        details={
            "threshold_round": t0,
            "fraction_within_4sd": within,
            "mean_psi_fraction": float(finals.mean()),
            "mean_psi_fraction_ok": bool(mean_ok),
        },
    )


# --- self-normalized bound -------------------------------------------------------


def _resolve_burn_in(params: BoundParams, N: int, T: int, burn_in: int | None, notes: list[str]) -> int:
    horizon = params.exploration_horizon(N, T)
    if burn_in is not None:
        notes.append(f"configured burn-in {burn_in} used; theoretical burn-in is {horizon:.6g}")
        return int(burn_in)
    if horizon > T:
        surrogate = max(1, T // 10)
        notes.append(
            f"theoretical burn-in {horizon:.6g} exceeds T={T}; surrogate burn-in {surrogate} used"
        )
        return surrogate
    return int(math.ceil(horizon))


def self_normalized_error(state, beta_star: np.ndarray, lambda_t: float) -> float:
    """``||b - beta*||_M`` with ``M = (V - I) + lambda_t I`` and ``b = M^-1 Z``."""
    eye = np.eye(state.d)
    M = state.V - eye + lambda_t * eye
    err = np.linalg.solve(M, state.Z) - beta_star
    return math.sqrt(max(float(err @ M @ err), 0.0))


def check_self_normalized(
    settings: HyRanSettings,
    env_spec: EnvironmentSpec,
    T: int,
    trials: int,
    rng: np.random.Generator,
    burn_in: int | None = None,
    phi_sq_hat: float | None = None,
) -> DiagnosticReport:
    """Violation rate of the self-normalized error bound along HyRan trajectories.

    At each audited round the closed-form estimate uses the hybrid Gram matrix
    without the identity initialisation plus ``lambda_t I``, and the error is
    measured in that same matrix's norm.
    """
    d, N = env_spec.d, env_spec.N
    params = BoundParams(p=settings.p, sigma=env_spec.noise_sigma, delta=settings.delta, phi_sq_hat=phi_sq_hat)
    notes: list[str] = []
    start = _resolve_burn_in(params, N, T, burn_in, notes)
    sched = RegularizationSchedule("theory", d, settings.delta)
    beta = env_spec.beta_star
    violated = 0
    ratios = []
    worst = np.zeros(trials)
    for k, g in enumerate(_child_rngs(rng, trials)):
        ctx_rng, noise_rng, h_rng = g.spawn(3)
        policy = settings.make(d, N, h_rng)
        stream = ContextStream(env_spec, ctx_rng, noise_rng)
        hit = False
        worst_ratio = 0.0
        for t, (X, Y) in enumerate(stream.rounds(T), start=1):
            a = policy.select(X)
            policy.update(X, a, Y[a])
            if t < start:
                continue
            lam = lambda_value(sched, t)
            norm = self_normalized_error(policy.state, beta, lam)
            bound = params.self_normalized_bound(t, d, lam)
            r = norm / bound
            ratios.append(r)
            worst_ratio = max(worst_ratio, r)
            if norm > bound:
                hit = True
        worst[k] = worst_ratio
        violated += int(hit)
    allowed = 6 * settings.delta
    se = math.sqrt(min(allowed, 1.0) * max(1 - allowed, 0.0) / trials)
    threshold = allowed + 3 * se
    ratios_arr = np.asarray(ratios)
    median_ratio = float(np.median(ratios_arr)) if ratios_arr.size else float("nan")
    return DiagnosticReport(
        check="self_normalized",
        trials=trials,
        violations=violated,
        passed=violated / trials <= threshold,
        threshold=threshold,
        empirical=worst,
        bound=np.ones(trials),
        ci=_rate_ci(violated, trials),
        details={
            "burn_in": start,
            "median_norm_to_bound_ratio": median_ratio,
            "max_norm_to_bound_ratio": float(ratios_arr.max()) if ratios_arr.size else float("nan"),
            "C_p_sigma(C)": params.C_p_sigma,
            "C_placeholder": params.C,
        },
        notes=notes,
    )


# --- regret decomposition -------------------------------------------------------


def max_residual(contexts: np.ndarray, err: np.ndarray) -> np.ndarray:
    """``max_i |x_i^T err|`` over the arm axis; ``contexts`` is ``(..., N, d)``."""
    return np.abs(contexts @ err).max(axis=-1)


def check_regret_decomposition(
    settings: HyRanSettings,
    env_spec: EnvironmentSpec,
    T: int,
    trajectories: int,
    mc_contexts: int,
    rng: np.random.Generator,
    audit_every: int = 1,
) -> DiagnosticReport:
    """Audit the three-term regret decomposition and its Cauchy-Schwarz step.

    At round ``t`` (with at least one Psi-round) the estimate ``b`` that picks
    round ``t+1``'s arm is compared against ``beta*``; ``M`` is the matrix the
    estimate inverts. The conditional expectation of the next round's max
    residual is estimated from ``mc_contexts`` fresh context draws.
    """
    d, N = env_spec.d, env_spec.N
    beta = env_spec.beta_star
    cs_failures = 0
    decomp_failures = 0
    audits = 0
    slack_cs = []
    slack_decomp = []
    traj_failed = 0
    for g in _child_rngs(rng, trajectories):
        ctx_rng, noise_rng, h_rng, mc_rng = g.spawn(4)
        policy = settings.make(d, N, h_rng)
        stream = ContextStream(env_spec, ctx_rng, noise_rng)
        psi_contexts: list[np.ndarray] = []
        failed = False
        pending = None
        for t, (X, Y) in enumerate(stream.rounds(T), start=1):
            # X is round t; audit the estimate built from rounds 1..t-1 against it
            a = policy.select(X)
            if pending is not None:
                b_err, lhs_sum, n_psi, term3, mc_mean, mc_se = pending
                regret = float((X @ beta).max() - X[a] @ beta)
                resid_next = float(max_residual(X, b_err))
                term1 = 2.0 * (resid_next - mc_mean)
                term2 = 2.0 * (mc_mean - lhs_sum / n_psi)
                rhs = term1 + term2 + term3 + 2.0 * 4.0 * mc_se
                slack_decomp.append(rhs - regret)
                if regret > rhs:
                    decomp_failures += 1
                    failed = True
                pending = None
            policy.update(X, a, Y[a])
            if policy.last_h == a:
                psi_contexts.append(X)
            if not psi_contexts or t % audit_every or t >= T:
                continue
            audits += 1
            state = policy.state
            lam = policy.schedule.value(t + 1)
            M = state.V + lam * np.eye(d)
            b = np.linalg.solve(M, state.Z)
            err = b - beta
            psi_X = np.asarray(psi_contexts)
            lhs_sum = float(max_residual(psi_X, err).sum())
            n_psi = len(psi_contexts)
            v_norm = math.sqrt(max(float(err @ M @ err), 0.0))
            rhs_cs = math.sqrt(n_psi) * v_norm
            slack_cs.append(rhs_cs - lhs_sum)
            if lhs_sum > rhs_cs + 1e-9:
                cs_failures += 1
                failed = True
            fresh = gen_contexts_batch(env_spec, mc_rng, mc_contexts)
            resid = max_residual(fresh, err)
            mc_mean = float(resid.mean())
            mc_se = float(resid.std(ddof=1) / math.sqrt(mc_contexts)) if mc_contexts > 1 else 0.0
            term3 = 2.0 / math.sqrt(n_psi) * v_norm
            pending = (err, lhs_sum, n_psi, term3, mc_mean, mc_se)
        traj_failed += int(failed)
    return DiagnosticReport(
        check="regret_decomposition",
        trials=audits,
        violations=cs_failures + decomp_failures,
        passed=cs_failures == 0 and decomp_failures == 0,
        threshold=0.0,
        empirical=np.asarray(slack_decomp),
        bound=np.zeros(len(slack_decomp)),
        ci=_rate_ci(cs_failures + decomp_failures, max(audits, 1)),
        details={
            "trajectories": trajectories,
            "trajectories_with_failures": traj_failed,
            "cauchy_schwarz_failures": cs_failures,
            "decomposition_failures": decomp_failures,
            "min_cauchy_schwarz_slack": float(min(slack_cs)) if slack_cs else float("nan"),
            "min_decomposition_slack": float(min(slack_decomp)) if slack_decomp else float("nan"),
        },
    )


# --- imputation error -----------------------------------------------------------


def check_imputation_error(
    settings: HyRanSettings,
    env_spec: EnvironmentSpec,
    T: int,
    trials: int,
    rng: np.random.Generator,
    burn_in: int | None = None,
    phi_sq_hat: float | None = None,
    fit_from: int | None = None,
    min_negative_fraction: float = 0.95,
) -> DiagnosticReport:
    """Trend and 1/N bound of the imputation error ``||impute_t - beta*||``.

    The trend test fits log-error against log-t over rounds ``fit_from..T``
    (default ``T // 10``) and needs a negative slope in at least
    ``min_negative_fraction`` of runs. The 1/N bound is scored only past the
    burn-in; when the theoretical burn-in exceeds ``T`` and no surrogate is
    configured, that part is vacuous.
    """
    d, N = env_spec.d, env_spec.N
    params = BoundParams(p=settings.p, sigma=env_spec.noise_sigma, delta=settings.delta, phi_sq_hat=phi_sq_hat)
    notes: list[str] = []
    horizon = params.exploration_horizon(N, T)
    if burn_in is None:
        start = int(math.ceil(horizon)) if horizon <= T else None
        if start is None:
            notes.append(f"theoretical burn-in {horizon:.6g} exceeds T={T}; the 1/N bound part is vacuous")
    else:
        start = int(burn_in)
        notes.append(f"configured burn-in {burn_in} used; theoretical burn-in is {horizon:.6g}")
    beta = env_spec.beta_star
    fit_from = max(1, T // 10) if fit_from is None else fit_from
    slopes = np.empty(trials)
    bound_ok = 0
    curves = np.empty((trials, T))
    for k, g in enumerate(_child_rngs(rng, trials)):
        ctx_rng, noise_rng, h_rng = g.spawn(3)
        policy = settings.make(d, N, h_rng)
        stream = ContextStream(env_spec, ctx_rng, noise_rng)
        for t, (X, Y) in enumerate(stream.rounds(T), start=1):
            a = policy.select(X)
            policy.update(X, a, Y[a])
            curves[k, t - 1] = np.linalg.norm(policy.state.impute - beta)
        ts = np.arange(fit_from, T + 1)
        ys = np.log(np.maximum(curves[k, fit_from - 1:], 1e-300))
        slopes[k] = np.polyfit(np.log(ts), ys, 1)[0]
        if start is not None and start <= T:
            bound_ok += int(np.all(curves[k, start - 1:] <= 1.0 / N))
    negative = float(np.mean(slopes < 0))
    trend_ok = negative >= min_negative_fraction
    if start is not None and start <= T:
        rate_ok = bound_ok / trials
        bound_threshold = 1 - settings.delta - 3 * math.sqrt(settings.delta * (1 - settings.delta) / trials)
        bound_pass = rate_ok >= bound_threshold
    else:
        rate_ok = float("nan")
        bound_threshold = float("nan")
        bound_pass = True
    return DiagnosticReport(
        check="imputation_error",
        trials=trials,
        violations=int(np.sum(slopes >= 0)),
        passed=trend_ok and bound_pass,
        threshold=min_negative_fraction,
        empirical=curves.mean(axis=0),
        bound=np.full(T, 1.0 / N),
        ci=_rate_ci(int(np.sum(slopes < 0)), trials),
        details={
            "negative_slope_fraction": negative,
            "slopes": [round(float(s), 6) for s in slopes],
            "bound_rate": rate_ok,
            "bound_threshold": bound_threshold,
            "burn_in": start if start is not None else "vacuous",
        },
        notes=notes,
    )


# --- lower bound ----------------------------------------------------------------


def check_lower_bound(
    algo: str,
    d: int,
    N: int,
    T: int,
    runs_per_instance: int,
    rng: np.random.Generator,
    hyper: float | None = None,
    settings: HyRanSettings | None = None,
) -> DiagnosticReport:
    """Instance-averaged regret on the hard instance against ``sqrt(dT)/8``."""
    from hyran.harness import DEFAULT_HYPERS, make_policy

    specs, X = gen_hard_instance(d, N, T)
    hyper = DEFAULT_HYPERS[algo] if hyper is None else hyper
    settings = settings or HyRanSettings(p=hyper if algo == "hyran" else 0.5)
    per_instance = np.empty((d, runs_per_instance))
    for i, spec in enumerate(specs):
        for r, g in enumerate(_child_rngs(rng, runs_per_instance)):
            ctx_rng, noise_rng, algo_rng, h_rng = g.spawn(4)
            if algo == "hyran":
                policy = settings.make(d, N, h_rng)
            else:
                policy = make_policy(algo, hyper, d, N, T, algo_rng, h_rng)
            stream = ContextStream(spec, ctx_rng, noise_rng, fixed_contexts=X)
            total = 0.0
            means = X @ spec.beta_star
            best = means.max()
            for Xt, Y in stream.rounds(T):
                a = policy.select(Xt)
                policy.update(Xt, a, Y[a])
                total += best - means[a]
            per_instance[i, r] = total
    inst_means = per_instance.mean(axis=1)
    mean = float(inst_means.mean())
    ddof = 1 if runs_per_instance > 1 else 0
    se = float(math.sqrt(np.sum(per_instance.var(axis=1, ddof=ddof) / runs_per_instance)) / d)
    threshold = math.sqrt(d * T) / 8.0
    gap = specs[0].delta_gap
    return DiagnosticReport(
        check="lower_bound",
        trials=d * runs_per_instance,
        violations=int(mean < threshold - 2 * se),
        passed=mean >= threshold - 2 * se,
        threshold=threshold,
        empirical=inst_means,
        bound=np.full(d, threshold),
        ci=(mean - 2 * se, mean + 2 * se),
        details={
            "algo": algo,
            "mean_regret": mean,
            "se": se,
            "gap": gap,
            "random_policy_regret": gap * T * (1 - 1 / N),
        },
    )


# --- pseudo-reward unbiasedness -------------------------------------------------


def check_pseudo_rewards(
    snapshots: int,
    draws: int,
    rng: np.random.Generator,
    d: int = 5,
    N: int = 10,
    p: float = 0.5,
    warmup: int = 50,
    sigma: float = 1.0,
) -> DiagnosticReport:
    """Monte-Carlo mean of pseudo-rewards and IPW multipliers over ``h`` and noise.

    Each snapshot freezes contexts, the played arm and the imputation vector of
    a HyRan run after ``warmup`` rounds; every draw resamples ``h`` and the
    rewards of all arms, so every arm's pseudo-reward can be formed.
    """
    config = HybridizationConfig(p, N)
    max_z_reward = 0.0
    max_z_mult = 0.0
    failures = 0
    zs = []
    for g in _child_rngs(rng, snapshots):
        env_rng, ctx_rng, noise_rng, h_rng, mc_rng = g.spawn(5)
        spec = correlated_gaussian_env(d, N, env_rng, noise_sigma=sigma)
        policy = HyRanBandit(d, N, p=p, h_rng=h_rng)
        stream = ContextStream(spec, ctx_rng, noise_rng)
        for X, Y in stream.rounds(warmup):
            a = policy.select(X)
            policy.update(X, a, Y[a])
        X = gen_contexts_batch(spec, ctx_rng, 1)[0]
        a = policy.select(X)
        impute = policy.state.impute
        pi = config.probabilities(a)
        h = hybridization_from_uniform(mc_rng.random(draws), a, config)
        ind = (h[:, None] == np.arange(N)[None, :]) / pi[None, :]  # (draws, N)
        mult = 1.0 - ind
        means = X @ spec.beta_star
        Y_all = means[None, :] + sigma * mc_rng.standard_normal((draws, N))
        y_tilde = mult * (X @ impute)[None, :] + ind * Y_all
        for values, target, kind in ((y_tilde, means, "reward"), (mult, np.zeros(N), "mult")):
            m = values.mean(axis=0)
            se = values.std(axis=0, ddof=1) / math.sqrt(draws)
            z = np.abs(m - target) / np.where(se > 0, se, np.inf)
            bad = int(np.sum(np.abs(m - target) > 4 * se))
            failures += bad
            if kind == "reward":
                max_z_reward = max(max_z_reward, float(z.max()))
                zs.extend(z.tolist())
            else:
                max_z_mult = max(max_z_mult, float(z.max()))
    total = snapshots * N * 2
    return DiagnosticReport(
        check="pseudo_rewards",
        trials=total,
        violations=failures,
        passed=failures == 0,
        threshold=4.0,
        empirical=np.asarray(zs),
        bound=np.full(len(zs), 4.0),
        ci=_rate_ci(failures, total),
        details={"max_z_reward": max_z_reward, "max_z_multiplier": max_z_mult, "draws": draws},
    )


# --- estimator cloud ------------------------------------------------------------


@dataclass
class TrajectoryLog:
    """Everything needed to replay a HyRan trajectory with new ``h`` draws."""

    contexts: np.ndarray  # (T, N, d)
    arms: np.ndarray
    rewards: np.ndarray
    hs: np.ndarray
    settings: HyRanSettings
    h_seed: int | None = None
    beta_star: np.ndarray | None = None

    @property
    def T(self) -> int:
        return int(self.arms.shape[0])

    @classmethod
    def from_policy(cls, policy: HyRanBandit, settings: HyRanSettings, h_seed=None, beta_star=None) -> "TrajectoryLog":
        if not policy.log:
            raise InsufficientData("policy was not run with record=True")
        return cls(
            contexts=np.stack([e["contexts"] for e in policy.log]),
            arms=np.array([e["arm"] for e in policy.log]),
            rewards=np.array([e["reward"] for e in policy.log]),
            hs=np.array([e["h"] for e in policy.log]),
            settings=settings,
            h_seed=h_seed,
            beta_star=beta_star,
        )


def record_trajectory(
    settings: HyRanSettings, env_spec: EnvironmentSpec, T: int, seed: int
) -> tuple[TrajectoryLog, np.ndarray]:
    """Run HyRan for ``T`` rounds; return the log and the final estimate."""
    ss = np.random.SeedSequence(seed)
    ctx_ss, noise_ss = ss.spawn(2)
    h_seed = int(np.random.default_rng(ss.spawn(1)[0]).integers(2**62))
    policy = settings.make(env_spec.d, env_spec.N, np.random.default_rng(h_seed), record=True)
    stream = ContextStream(env_spec, np.random.default_rng(ctx_ss), np.random.default_rng(noise_ss))
    for X, Y in stream.rounds(T):
        a = policy.select(X)
        policy.update(X, a, Y[a])
    log = TrajectoryLog.from_policy(policy, settings, h_seed=h_seed, beta_star=env_spec.beta_star)
    return log, policy.current_estimate()


def _check_log(log: TrajectoryLog) -> None:
    if log.contexts is None or log.contexts.ndim != 3 or log.contexts.shape[0] != log.T:
        raise InsufficientData("trajectory log lacks full per-round contexts")


def replay(log: TrajectoryLog, h_rng: np.random.Generator) -> np.ndarray:
    """Replay through the scalar state machine with fixed arms and rewards."""
    from hyran.core import update_state

    _check_log(log)
    T, N, d = log.contexts.shape
    policy = log.settings.make(d, N, h_rng)
    for k in range(T):
        X = log.contexts[k]
        a = int(log.arms[k])
        h = sample_hybridization(a, policy.hybrid, h_rng)
        update_state(policy.state, X, a, h, float(log.rewards[k]))
    return policy.current_estimate()


def _batched_replay(log: TrajectoryLog, uniforms: np.ndarray) -> np.ndarray:
    """Replay ``M`` trajectories in lockstep; ``uniforms`` is ``(M, T)``.

    Only whether ``h`` equals the played arm matters for the update, and that
    is ``u < p`` for the uniform the sampler would consume.
    """
    s = log.settings
    T, N, d = log.contexts.shape
    M = uniforms.shape[0]
    p = s.p
    eye = np.eye(d)
    V = np.broadcast_to(eye, (M, d, d)).copy()
    Z = np.zeros((M, d))
    B = np.zeros((M, d, d))
    c = np.zeros((M, d))
    impute = np.zeros((M, d)) if s.impute is None else np.tile(np.asarray(s.impute, float), (M, 1))
    psi = np.zeros(M, dtype=np.int64)
    ridge_A = eye.copy()
    ridge_b = np.zeros(d)
    for k in range(T):
        X = log.contexts[k]
        a = int(log.arms[k])
        y = float(log.rewards[k])
        x = X[a]
        hit = uniforms[:, k] < p
        hf = hit.astype(float)
        full = X.T @ X
        sel = np.outer(x, x)
        V += sel[None] + hf[:, None, None] * (full - sel)[None]
        y_imp = impute @ X.T  # (M, N)
        y_imp[:, a] = (1 - 1 / p) * y_imp[:, a] + y / p
        Z += hf[:, None] * (y_imp @ X) + (1 - hf)[:, None] * (x * y)[None]
        B += hf[:, None, None] * (full - sel / p)[None]
        c += (hf / p + (1 - hf))[:, None] * (x * y)[None]
        psi += hit
        t = k + 1
        if s.impute_mode == "practical":
            rhs = np.einsum("mij,mj->mi", B, impute) + c if s.impute_timing == "refit" else Z
            impute = np.linalg.solve(V + math.sqrt(t) * eye, rhs[:, :, None])[:, :, 0]
        elif s.impute_mode == "theory":
            ridge = np.linalg.solve(ridge_A, ridge_b)
            ridge = ridge / max(float(np.linalg.norm(ridge)), 1.0)
            gam = np.array([theory_gamma(N, int(n), t, s.delta) for n in psi])
            W = V - eye + gam[:, None, None] * eye
            W[psi == 0] = eye
            rhs = np.einsum("mij,j->mi", B, ridge) + c
            impute = np.linalg.solve(W, rhs[:, :, None])[:, :, 0]
            impute[psi == 0] = 0.0
        if s.impute_timing == "refit":
            Z = np.einsum("mij,mj->mi", B, impute) + c
        ridge_A += sel
        ridge_b += x * y
    sched = RegularizationSchedule(s.schedule, d, s.delta if s.schedule == "theory" else None)
    lam = sched.value(T + 1)
    return np.linalg.solve(V + lam * eye, Z[:, :, None])[:, :, 0]


def estimator_cloud(
    log: TrajectoryLog,
    M: int,
    rng: np.random.Generator | None = None,
    h_rngs: list[np.random.Generator] | None = None,
    engine: str = "batch",
) -> np.ndarray:
    """``M`` realisations of the final estimate under resampled ``h`` sequences.

    Arms and rewards stay as logged. Pass ``h_rngs`` to control the replays'
    generators (e.g. the original one to reproduce the logged run).
    """
    _check_log(log)
    if h_rngs is None:
        if rng is None:
            raise InvalidArgument("need rng or h_rngs")
        h_rngs = _child_rngs(rng, M)
    if len(h_rngs) != M:
        raise InvalidArgument(f"expected {M} generators, got {len(h_rngs)}")
    if engine == "scalar":
        return np.stack([replay(log, g) for g in h_rngs])
    if engine != "batch":
        raise InvalidArgument(f"unknown engine {engine!r}")
    if log.settings.impute_mode == "fixed" and log.settings.impute is None:
        raise InvalidArgument("fixed imputation needs settings.impute")
    uniforms = np.stack([g.random(log.T) for g in h_rngs])
    return _batched_replay(log, uniforms)


def cloud_spread(cloud: np.ndarray) -> np.ndarray:
    """Per-coordinate standard deviation across replays."""
    return cloud.std(axis=0, ddof=1) if cloud.shape[0] > 1 else np.zeros(cloud.shape[1])


def write_cloud(path: Path, cloud: np.ndarray) -> list[Path]:
    """One two-column CSV per coordinate pair ``(i, j)``, ``i < j``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = cloud.shape[1]
    out = []
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)] or [(0, 0)]
    for i, j in pairs:
        target = path.with_name(f"{path.stem}_{i + 1}_{j + 1}{path.suffix or '.csv'}")
        with open(target, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"beta_{i + 1}", f"beta_{j + 1}"])
            for row in cloud:
                w.writerow([repr(float(row[i])), repr(float(row[j]))])
        out.append(target)
    return out


def check_estimator_cloud(
    d: int = 2,
    N: int = 5,
    t: int = 1000,
    M: int = 1000,
    p: float = 0.5,
    p_high: float = 0.999,
    seed: int = 0,
    ratio_limit: float = 0.1,
) -> tuple[DiagnosticReport, dict[float, np.ndarray], np.ndarray]:
    """Spread of the estimate cloud at ``p`` and its collapse at ``p_high``.

    Both clouds replay the same logged trajectory (recorded at ``p``), so only
    the hybridization probability differs.
    """
    ss = np.random.SeedSequence(seed)
    env_ss, rep_ss = ss.spawn(2)
    spec = correlated_gaussian_env(d, N, np.random.default_rng(env_ss))
    base = HyRanSettings(p=p)
    log, _ = record_trajectory(base, spec, t, seed)
    clouds = {}
    for q, child in zip((p, p_high), rep_ss.spawn(2)):
        log_q = TrajectoryLog(log.contexts, log.arms, log.rewards, log.hs, HyRanSettings(p=q), log.h_seed, log.beta_star)
        clouds[q] = estimator_cloud(log_q, M, np.random.default_rng(child))
    s_lo = cloud_spread(clouds[p])
    s_hi = cloud_spread(clouds[p_high])
    ratio = s_hi / np.where(s_lo > 0, s_lo, np.inf)
    passed = bool(np.all(s_lo > 0) and np.all(ratio < ratio_limit))
    report = DiagnosticReport(
        check="estimator_cloud",
        trials=M,
        violations=int(np.sum(ratio >= ratio_limit) + np.sum(s_lo <= 0)),
        passed=passed,
        threshold=ratio_limit,
        empirical=ratio,
        bound=np.full(d, ratio_limit),
        details={
            "spread_p": [float(v) for v in s_lo],
            "spread_p_high": [float(v) for v in s_hi],
            "centroid_p": [float(v) for v in clouds[p].mean(axis=0)],
            "centroid_distance_to_beta_star": float(np.linalg.norm(clouds[p].mean(axis=0) - spec.beta_star)),
            "beta_star": [float(v) for v in spec.beta_star],
        },
    )
    return report, clouds, spec.beta_star
