"""HyRan estimator: arm selection, hybridization, pseudo-rewards and state updates.

Arms are indexed from 0. A round's contexts are stored as an ``(N, d)`` array,
one row per arm.

The estimator keeps a hybrid Gram matrix ``V`` (initialised to the identity)
and moment vector ``Z``. On rounds where the hybridization draw ``h`` equals
the played arm, every arm's context enters ``V`` and ``Z`` with a doubly
robust pseudo-reward; otherwise only the played context and its reward do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Union

import numpy as np

from hyran.errors import (
    ContractViolation,
    InvalidArgument,
    NumericError,
    UnsupportedConfiguration,
)
from hyran.linalg import spd_solve

NORM_SLACK = 1e-9

ImputeMode = Literal["practical", "theory", "fixed"]
ImputeTiming = Literal["lagged", "refit"]
ScheduleMode = Literal["practical", "theory"]


@dataclass(frozen=True)
class ContextSet:
    """The contexts of all ``N`` arms at one round."""

    vectors: np.ndarray
    round: int = 1

    def __post_init__(self):
        X = np.asarray(self.vectors, dtype=float)
        if X.ndim != 2:
            raise InvalidArgument(f"contexts must be a 2-D (N, d) array, got shape {X.shape}")
        N, d = X.shape
        if N < 2 or d < 1:
            raise InvalidArgument(f"need N >= 2 arms and d >= 1, got N={N}, d={d}")
        if self.round < 1:
            raise InvalidArgument(f"round index must be positive, got {self.round}")
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms > 1.0 + NORM_SLACK):
            raise InvalidArgument(f"context norms must be <= 1, max is {norms.max():.6g}")
        object.__setattr__(self, "vectors", X)

    @property
    def num_arms(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


Contexts = Union[ContextSet, np.ndarray]


def _as_array(contexts: Contexts) -> np.ndarray:
    if isinstance(contexts, ContextSet):
        return contexts.vectors
    return np.asarray(contexts, dtype=float)


@dataclass(frozen=True)
class HybridizationConfig:
    p: float
    num_arms: int

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise InvalidArgument(f"p must lie in (0, 1), got {self.p}")
        if self.num_arms < 2:
            raise UnsupportedConfiguration(
                f"hybridization needs at least 2 arms, got {self.num_arms}"
            )

    @property
    def other_mass(self) -> float:
        """Probability assigned to each arm other than the played one."""
        return (1.0 - self.p) / (self.num_arms - 1)

    def probabilities(self, chosen_arm: int) -> np.ndarray:
        pi = np.full(self.num_arms, self.other_mass)
        pi[chosen_arm] = self.p
        return pi


@dataclass(frozen=True)
class RegularizationSchedule:
    """``lambda_t`` for the main estimator.

    ``practical``: ``d * log((t + 1)^2)``; ``theory``: ``d * log(4 t^2 / delta)``.
    """

    mode: ScheduleMode = "practical"
    d: int = 1
    delta: float | None = None

    def __post_init__(self):
        if self.mode not in ("practical", "theory"):
            raise InvalidArgument(f"unknown schedule mode {self.mode!r}")
        if self.d < 1:
            raise InvalidArgument(f"d must be >= 1, got {self.d}")
        if self.mode == "theory" and (self.delta is None or not 0.0 < self.delta < 1.0):
            raise InvalidArgument(f"theory schedule needs delta in (0, 1), got {self.delta}")

    def value(self, t: int) -> float:
        return lambda_value(self, t)


def lambda_value(schedule: RegularizationSchedule, t: int) -> float:
    if t < 1:
        raise InvalidArgument(f"round index must be >= 1, got {t}")
    if schedule.mode == "theory":
        return schedule.d * math.log(4.0 * t * t / schedule.delta)
    return schedule.d * math.log((t + 1.0) ** 2)


def select_arm(contexts: Contexts, beta_hat: np.ndarray) -> int:
    """Greedy arm under ``beta_hat``; ties go to the lowest index."""
    X = _as_array(contexts)
    beta_hat = np.asarray(beta_hat, dtype=float)
    if beta_hat.ndim != 1 or beta_hat.shape[0] != X.shape[1]:
        raise InvalidArgument(
            f"beta_hat has shape {beta_hat.shape}, contexts have dimension {X.shape[1]}"
        )
    # np.argmax returns the first maximiser
    return int(np.argmax(X @ beta_hat))


def sample_hybridization(chosen_arm: int, config: HybridizationConfig, rng: np.random.Generator) -> int:
    """Draw ``h`` with mass ``p`` on ``chosen_arm`` and ``(1-p)/(N-1)`` elsewhere.

    Exactly one uniform variate is consumed per call, so a replay that reuses
    the generator reproduces the same ``h`` sequence for any arm sequence.
    """
    N = config.num_arms
    if not 0 <= chosen_arm < N:
        raise InvalidArgument(f"chosen arm {chosen_arm} outside [0, {N})")
    u = rng.random()
    if u < config.p:
        return chosen_arm
    k = min(int((u - config.p) / (1.0 - config.p) * (N - 1)), N - 2)
    return k if k < chosen_arm else k + 1


def hybridization_from_uniform(u: np.ndarray, chosen_arm: int, config: HybridizationConfig) -> np.ndarray:
    """Vectorised form of :func:`sample_hybridization` for given uniforms ``u``."""
    N = config.num_arms
    u = np.asarray(u, dtype=float)
    k = np.minimum(((u - config.p) / (1.0 - config.p) * (N - 1)).astype(np.int64), N - 2)
    other = np.where(k < chosen_arm, k, k + 1)
    return np.where(u < config.p, chosen_arm, other)


def compute_pseudo_rewards(
    contexts: Contexts,
    chosen_arm: int,
    h: int,
    observed_reward: float,
    impute: np.ndarray,
    config: HybridizationConfig,
) -> np.ndarray:
    """Doubly robust pseudo-rewards for every arm on a round with ``h == chosen_arm``."""
    if h != chosen_arm:
        raise ContractViolation(
            f"pseudo-rewards need the observed reward of arm h={h}, but arm {chosen_arm} was played"
        )
    X = _as_array(contexts)
    y = X @ impute
    inv_p = 1.0 / config.p
    y[chosen_arm] = (1.0 - inv_p) * y[chosen_arm] + inv_p * observed_reward
    return y


@dataclass
class BanditState:
    """Running sufficient statistics of the HyRan estimator.

    ``B`` and ``c`` split ``Z`` into its imputation-dependent and
    imputation-free parts, ``Z = B @ impute + c`` when every Psi-round is
    re-imputed with one vector. ``ridge_A``/``ridge_b`` hold the unit-ridge
    regression on played pairs, used by the theory-mode imputation.
    """

    d: int
    hybrid: HybridizationConfig
    impute_mode: ImputeMode = "practical"
    impute_timing: ImputeTiming = "refit"
    delta: float = 0.05
    V: np.ndarray = field(default=None)
    Z: np.ndarray = field(default=None)
    B: np.ndarray = field(default=None)
    c: np.ndarray = field(default=None)
    ridge_A: np.ndarray = field(default=None)
    ridge_b: np.ndarray = field(default=None)
    impute: np.ndarray = field(default=None)
    t: int = 0
    psi_count: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise InvalidArgument(f"d must be >= 1, got {self.d}")
        if self.impute_mode not in ("practical", "theory", "fixed"):
            raise InvalidArgument(f"unknown imputation mode {self.impute_mode!r}")
        if self.impute_timing not in ("lagged", "refit"):
            raise InvalidArgument(f"unknown imputation timing {self.impute_timing!r}")
        if self.impute_mode == "theory" and not 0.0 < self.delta < 1.0:
            raise InvalidArgument(f"theory imputation needs delta in (0, 1), got {self.delta}")
        d = self.d
        if self.V is None:
            self.V = np.eye(d)
        if self.Z is None:
            self.Z = np.zeros(d)
        if self.B is None:
            self.B = np.zeros((d, d))
        if self.c is None:
            self.c = np.zeros(d)
        if self.ridge_A is None:
            self.ridge_A = np.eye(d)
        if self.ridge_b is None:
            self.ridge_b = np.zeros(d)
        if self.impute is None:
            self.impute = np.zeros(d)

    @property
    def num_arms(self) -> int:
        return self.hybrid.num_arms

    def copy(self) -> "BanditState":
        out = BanditState(
            d=self.d,
            hybrid=self.hybrid,
            impute_mode=self.impute_mode,
            impute_timing=self.impute_timing,
            delta=self.delta,
        )
        for name in ("V", "Z", "B", "c", "ridge_A", "ridge_b", "impute"):
            setattr(out, name, getattr(self, name).copy())
        out.t = self.t
        out.psi_count = self.psi_count
        return out


def estimate(state: BanditState, lambda_t: float) -> np.ndarray:
    """Solve ``(V + lambda_t I) beta = Z``."""
    if not lambda_t > 0:
        raise InvalidArgument(f"lambda_t must be positive, got {lambda_t}")
    if not (np.isfinite(state.V).all() and np.isfinite(state.Z).all()):
        raise NumericError("state V or Z has non-finite entries")
    A = state.V + lambda_t * np.eye(state.d)
    return spd_solve(A, state.Z)


def normalized_ridge(state: BanditState) -> np.ndarray:
    """Unit-ridge estimate on played pairs, scaled into the unit ball."""
    est = spd_solve(state.ridge_A, state.ridge_b)
    return est / max(float(np.linalg.norm(est)), 1.0)


def theory_gamma(N: int, psi_count: int, t: int, delta: float) -> float:
    return 4.0 * math.sqrt(2.0) * N * math.sqrt(psi_count * math.log(4.0 * t * t / delta))


def update_imputation(state: BanditState) -> np.ndarray:
    """Refresh ``state.impute`` after ``state`` has been advanced to round ``t``.

    ``practical`` solves ``(V_t + sqrt(t) I) x = Z_t``. ``theory`` uses the
    gamma-regularised hybrid Gram (without the identity initialisation) and
    pseudo-rewards imputed with the normalized ridge estimate of the previous
    round; with no Psi-rounds yet it returns the zero vector. ``fixed`` keeps
    the injected vector.
    """
    d = state.d
    if state.t < 1:
        raise InvalidArgument("state must be advanced to round t >= 1 before imputation")
    if state.impute_mode == "fixed":
        return state.impute
    if state.impute_mode == "practical":
        if state.impute_timing == "refit":
            rhs = state.B @ state.impute + state.c
        else:
            rhs = state.Z
        new = spd_solve(state.V + math.sqrt(state.t) * np.eye(d), rhs)
    else:
        if state.psi_count == 0:
            new = np.zeros(d)
        else:
            gamma = theory_gamma(state.num_arms, state.psi_count, state.t, state.delta)
            W = state.V - np.eye(d) + gamma * np.eye(d)
            rhs = state.B @ normalized_ridge(state) + state.c
            new = spd_solve(W, rhs)
    state.impute = new
    if state.impute_timing == "refit":
        state.Z = state.B @ new + state.c
    return new


def update_state(
    state: BanditState,
    contexts: Contexts,
    chosen_arm: int,
    h: int,
    observed_reward: float,
) -> BanditState:
    """Advance ``state`` by one round in place and return it."""
    X = _as_array(contexts)
    if X.shape != (state.num_arms, state.d):
        raise InvalidArgument(
            f"contexts shape {X.shape} does not match state (N={state.num_arms}, d={state.d})"
        )
    x_a = X[chosen_arm]
    p = state.hybrid.p
    if h == chosen_arm:
        full = X.T @ X
        selected = np.outer(x_a, x_a)
        y_tilde = compute_pseudo_rewards(X, chosen_arm, h, observed_reward, state.impute, state.hybrid)
        state.V += full
        state.Z += X.T @ y_tilde
        state.B += full - selected / p
        state.c += x_a * (observed_reward / p)
        state.psi_count += 1
    else:
        selected = np.outer(x_a, x_a)
        state.V += selected
        state.Z += x_a * observed_reward
        state.c += x_a * observed_reward
    state.t += 1
    update_imputation(state)
    # the theory imputation at round t must only see played pairs up to t - 1
    state.ridge_A += selected
    state.ridge_b += x_a * observed_reward
    return state


class HyRanBandit:
    """Greedy play on the HyRan estimate with post-hoc hybridization.

    ``h_rng`` drives the hybridization draws only, so a logged trajectory can
    be replayed with fresh ``h`` sequences.
    """

    name = "hyran"

    def __init__(
        self,
        d: int,
        num_arms: int,
        p: float = 0.5,
        schedule: RegularizationSchedule | None = None,
        h_rng: np.random.Generator | None = None,
        impute_mode: ImputeMode = "practical",
        impute_timing: ImputeTiming = "refit",
        delta: float = 0.05,
        impute: np.ndarray | None = None,
        record: bool = False,
    ):
        self.hybrid = HybridizationConfig(p, num_arms)
        self.schedule = schedule or RegularizationSchedule("practical", d)
        self.h_rng = h_rng if h_rng is not None else np.random.default_rng(0)
        self.state = BanditState(
            d=d,
            hybrid=self.hybrid,
            impute_mode=impute_mode,
            impute_timing=impute_timing,
            delta=delta,
        )
        if impute is not None:
            self.state.impute = np.asarray(impute, dtype=float).copy()
        self.record = record
        self.events: list[tuple[int, str]] = []
        self.log: list[dict] = []
        self.last_h: int | None = None
        self._pending: tuple[int, int] | None = None

    def current_estimate(self) -> np.ndarray:
        """Estimate used to select the arm of the next round."""
        return estimate(self.state, self.schedule.value(self.state.t + 1))

    def select(self, contexts: Contexts) -> int:
        beta_hat = self.current_estimate()
        arm = select_arm(contexts, beta_hat)
        t = self.state.t + 1
        self._pending = (t, arm)
        if self.record:
            self.events.append((t, "select"))
        return arm

    def update(self, contexts: Contexts, arm: int, reward: float) -> None:
        t = self.state.t + 1
        if self._pending is not None and self._pending != (t, arm):
            raise ContractViolation(f"update for arm {arm} does not match the selection {self._pending}")
        self._pending = None
        h = sample_hybridization(arm, self.hybrid, self.h_rng)
        if self.record:
            self.events.append((t, "hybridize"))
            self.log.append(
                {
                    "t": t,
                    "contexts": np.array(_as_array(contexts), copy=True),
                    "arm": arm,
                    "h": h,
                    "reward": float(reward),
                    "impute_before": self.state.impute.copy(),
                }
            )
        update_state(self.state, contexts, arm, h, reward)
        self.last_h = h
