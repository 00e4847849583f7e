"""Reference policies: LinUCB, LinTS, SupLinUCB, an experimental DRTS and a
uniformly random policy.

Every policy exposes ``select(contexts) -> arm`` and
``update(contexts, arm, reward)``; contexts are ``(N, d)`` arrays.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import lapack

from hyran.core import select_arm
from hyran.errors import (
    InternalInvariantError,
    InvalidArgument,
    NumericError,
    UnsupportedConfiguration,
)
from hyran.linalg import solve_lower_transposed, spd_cholesky, spd_solve


class RidgeState:
    """Ridge regression on played pairs: ``A = lam I + sum x x^T``, ``b = sum x y``."""

    def __init__(self, d: int, regularizer: float = 1.0):
        if regularizer <= 0:
            raise InvalidArgument(f"regularizer must be positive, got {regularizer}")
        self.d = d
        self.regularizer = regularizer
        self.A = regularizer * np.eye(d)
        self.b = np.zeros(d)
        self.n = 0

    def estimate(self) -> np.ndarray:
        return spd_solve(self.A, self.b)

    def update(self, x: np.ndarray, y: float) -> None:
        self.A += np.outer(x, x)
        self.b += y * x
        self.n += 1

    def widths(self, X: np.ndarray) -> np.ndarray:
        """``sqrt(x_i^T A^-1 x_i)`` for each row of ``X``."""
        L = spd_cholesky(self.A)
        S, info = lapack.dtrtrs(L, X.T, lower=1)
        if info != 0:
            raise NumericError(f"triangular solve failed (info={info})")
        return np.sqrt(np.einsum("ij,ij->j", S, S))


def linucb_scores(state: RidgeState, X: np.ndarray, alpha: float) -> np.ndarray:
    return X @ state.estimate() + alpha * state.widths(X)


class LinUCB:
    name = "linucb"

    def __init__(self, d: int, alpha: float = 1.0, regularizer: float = 1.0):
        if alpha < 0:
            raise InvalidArgument(f"alpha must be non-negative, got {alpha}")
        self.alpha = alpha
        self.state = RidgeState(d, regularizer)

    def select(self, X: np.ndarray) -> int:
        if self.alpha == 0:
            return select_arm(X, self.state.estimate())
        return int(np.argmax(linucb_scores(self.state, X, self.alpha)))

    def update(self, X: np.ndarray, arm: int, reward: float) -> None:
        self.state.update(X[arm], reward)


def sample_posterior(state: RidgeState, v: float, rng: np.random.Generator) -> np.ndarray:
    """Draw from ``N(A^-1 b, v^2 A^-1)`` using the Cholesky factor of ``A``."""
    L = spd_cholesky(state.A)
    mean, info = lapack.dpotrs(L, state.b, lower=1)
    if info != 0:
        raise NumericError(f"posterior mean solve failed (info={info})")
    z = rng.standard_normal(state.d)
    return mean + v * solve_lower_transposed(L, z)


class LinTS:
    name = "lints"

    def __init__(self, d: int, v: float = 1.0, rng: np.random.Generator | None = None, regularizer: float = 1.0):
        if v <= 0:
            raise InvalidArgument(f"v must be positive, got {v}")
        self.v = v
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.state = RidgeState(d, regularizer)

    def select(self, X: np.ndarray) -> int:
        return select_arm(X, sample_posterior(self.state, self.v, self.rng))

    def update(self, X: np.ndarray, arm: int, reward: float) -> None:
        self.state.update(X[arm], reward)


class SupLinUCB:
    """Level-descent elimination with per-level ridge states.

    Levels ``s = 1..S`` with ``S = ceil(log2 T)``; level ``s`` uses threshold
    ``2^-s``. A round only updates the level it was recorded at; rounds
    resolved by the ``1/sqrt(T)`` exploitation branch update nothing.
    """

    name = "suplinucb"

    def __init__(self, d: int, T: int, alpha: float = 1.0):
        if T < 1:
            raise InvalidArgument(f"SupLinUCB needs a horizon T >= 1, got {T}")
        if alpha <= 0:
            raise InvalidArgument(f"alpha must be positive, got {alpha}")
        self.d = d
        self.T = T
        self.alpha = alpha
        self.num_levels = max(1, math.ceil(math.log2(T)))
        self.levels = [RidgeState(d) for _ in range(self.num_levels)]
        self.recorded: list[list[int]] = [[] for _ in range(self.num_levels)]
        self.exploit_rounds: list[int] = []
        self.t = 0
        self._pending_level: int | None = None

    def select(self, X: np.ndarray) -> int:
        active = np.arange(X.shape[0])
        threshold = 1.0 / math.sqrt(self.T)
        s = 0
        while True:
            if s >= self.num_levels:
                raise InternalInvariantError(f"level overflow: s={s + 1} > S={self.num_levels}")
            state = self.levels[s]
            Xa = X[active]
            w = self.alpha * state.widths(Xa)
            ucb = Xa @ state.estimate() + w
            if np.all(w <= threshold):
                self._pending_level = None
                return int(active[np.argmax(ucb)])
            if np.all(w <= 2.0 ** -(s + 1)):
                keep = ucb >= ucb.max() - 2.0 ** -s
                active = active[keep]
                s += 1
                continue
            self._pending_level = s
            return int(active[np.argmax(w)])

    def update(self, X: np.ndarray, arm: int, reward: float) -> None:
        self.t += 1
        if self._pending_level is None:
            self.exploit_rounds.append(self.t)
        else:
            self.levels[self._pending_level].update(X[arm], reward)
            self.recorded[self._pending_level].append(self.t)
        self._pending_level = None


class DRTS:
    """Doubly robust Thompson sampling (experimental).

    Posterior draws are centred on a doubly robust estimate that uses every
    arm's context, with selection probabilities estimated by Monte-Carlo
    resampling. With ``dr=False`` this is exactly :class:`LinTS`.
    """

    name = "drts"

    def __init__(
        self,
        d: int,
        num_arms: int,
        v: float = 1.0,
        rng: np.random.Generator | None = None,
        dr: bool = True,
        mc_samples: int = 50,
        max_resample: int = 10,
        experimental: bool = False,
    ):
        if not experimental:
            raise UnsupportedConfiguration("DRTS is experimental; pass experimental=True to enable it")
        if v <= 0:
            raise InvalidArgument(f"v must be positive, got {v}")
        self.d = d
        self.num_arms = num_arms
        self.v = v
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.dr = dr
        self.mc_samples = mc_samples
        self.max_resample = max_resample
        self.gamma = 1.0 / (num_arms + 1)
        self.ridge = RidgeState(d)
        self.G = np.zeros((d, d))
        self.g = np.zeros(d)
        self.t = 0
        self._pi: float | None = None

    def _dr_posterior(self) -> RidgeState:
        lam = math.sqrt(self.t + 1)
        st = RidgeState(self.d, lam)
        st.A = self.G + lam * np.eye(self.d)
        st.b = self.g.copy()
        return st

    def select(self, X: np.ndarray) -> int:
        if not self.dr:
            return select_arm(X, sample_posterior(self.ridge, self.v, self.rng))
        post = self._dr_posterior()
        L = spd_cholesky(post.A)
        mean = spd_solve(post.A, post.b)
        for _ in range(self.max_resample):
            z = self.rng.standard_normal((self.d, self.mc_samples + 1))
            draws = mean[:, None] + self.v * np.column_stack(
                [solve_lower_transposed(L, z[:, k]) for k in range(z.shape[1])]
            )
            picks = np.argmax(X @ draws, axis=0)
            arm = int(picks[0])
            pi = float(np.mean(picks[1:] == arm))
            if pi > self.gamma:
                break
        self._pi = pi
        return arm

    def update(self, X: np.ndarray, arm: int, reward: float) -> None:
        self.t += 1
        x = X[arm]
        if self.dr and self._pi is not None and self._pi > self.gamma:
            impute = self.ridge.estimate()
            y = X @ impute
            y[arm] += (reward - y[arm]) / self._pi
            self.G += X.T @ X
            self.g += X.T @ y
        self.ridge.update(x, reward)
        self._pi = None


class UniformRandom:
    """Plays every arm with equal probability; a regret oracle for sanity checks."""

    name = "random"

    def __init__(self, num_arms: int, rng: np.random.Generator | None = None):
        self.num_arms = num_arms
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def select(self, X: np.ndarray) -> int:
        return int(self.rng.integers(self.num_arms))

    def update(self, X: np.ndarray, arm: int, reward: float) -> None:
        pass
