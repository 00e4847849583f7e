"""Synthetic environments: correlated-Gaussian contexts, the lower-bound hard
instance, reward draws and ground-truth regret."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Literal

import numpy as np

from hyran.errors import InvalidArgument, UnsupportedConfiguration

EnvKind = Literal["correlated_gaussian", "hard_instance"]


def default_mean_vector(N: int) -> np.ndarray:
    """Arm means ``(-2k, ..., -2, 2, ..., 2k)`` for even ``N = 2k``.

    For odd ``N`` the positive half gets the extra arm.
    """
    if N < 1:
        raise InvalidArgument(f"N must be >= 1, got {N}")
    neg = N // 2
    pos = N - neg
    return np.concatenate([-2.0 * np.arange(neg, 0, -1), 2.0 * np.arange(1, pos + 1)])


def cross_covariance(N: int, cross_corr: float = 0.5) -> np.ndarray:
    V = np.full((N, N), cross_corr)
    np.fill_diagonal(V, 1.0)
    return V


@dataclass
class EnvironmentSpec:
    d: int
    N: int
    beta_star: np.ndarray
    kind: EnvKind = "correlated_gaussian"
    mean_vector: np.ndarray | None = None
    cross_corr: float = 0.5
    noise_sigma: float = 1.0
    delta_gap: float | None = None
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.beta_star = np.asarray(self.beta_star, dtype=float)
        if self.d < 1 or self.N < 1:
            raise InvalidArgument(f"need d >= 1 and N >= 1, got d={self.d}, N={self.N}")
        if self.beta_star.shape != (self.d,):
            raise InvalidArgument(f"beta_star must have shape ({self.d},), got {self.beta_star.shape}")
        if np.linalg.norm(self.beta_star) > 1.0 + 1e-12:
            raise InvalidArgument("beta_star must have Euclidean norm <= 1")
        if self.noise_sigma < 0:
            raise InvalidArgument(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.kind not in ("correlated_gaussian", "hard_instance"):
            raise InvalidArgument(f"unknown environment kind {self.kind!r}")
        if self.kind == "correlated_gaussian":
            if self.mean_vector is None:
                self.mean_vector = default_mean_vector(self.N)
            self.mean_vector = np.asarray(self.mean_vector, dtype=float)
            if self.mean_vector.shape != (self.N,):
                raise InvalidArgument(f"mean_vector must have shape ({self.N},)")
            try:
                self._chol = np.linalg.cholesky(cross_covariance(self.N, self.cross_corr))
            except np.linalg.LinAlgError as exc:
                raise InvalidArgument(
                    f"cross covariance with correlation {self.cross_corr} is not positive definite"
                ) from exc

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if not k.startswith("_")}
        for k, v in out.items():
            if isinstance(v, np.ndarray):
                out[k] = v.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EnvironmentSpec":
        data = dict(data)
        for k in ("beta_star", "mean_vector"):
            if data.get(k) is not None:
                data[k] = np.asarray(data[k], dtype=float)
        return cls(**data)


def gen_beta_star(d: int, rng: np.random.Generator) -> np.ndarray:
    """Coordinates iid uniform on ``(-1/sqrt(d), 1/sqrt(d))``."""
    if d < 1:
        raise InvalidArgument(f"d must be >= 1, got {d}")
    bound = 1.0 / math.sqrt(d)
    return rng.uniform(-bound, bound, size=d)


def correlated_gaussian_env(
    d: int, N: int, rng: np.random.Generator, noise_sigma: float = 1.0, cross_corr: float = 0.5
) -> EnvironmentSpec:
    return EnvironmentSpec(
        d=d, N=N, beta_star=gen_beta_star(d, rng), noise_sigma=noise_sigma, cross_corr=cross_corr
    )


def gen_contexts_batch(
    spec: EnvironmentSpec, rng: np.random.Generator, rounds: int, truncate: bool = True
) -> np.ndarray:
    """Draw ``rounds`` independent context sets, shape ``(rounds, N, d)``.

    For each of the first ``d - 1`` coordinates the ``N`` arms' values are
    jointly Gaussian with the spec's means and cross-arm covariance. The last
    coordinate of each arm copies one of that arm's own coordinates, chosen
    uniformly and independently per arm and round. Each context is then scaled
    by ``1 / max(1, ||x||)``.
    """
    if spec.kind != "correlated_gaussian":
        raise UnsupportedConfiguration(f"gen_contexts needs a correlated_gaussian spec, got {spec.kind}")
    d, N = spec.d, spec.N
    if d < 2:
        raise UnsupportedConfiguration("correlated-Gaussian contexts need d >= 2")
    z = rng.standard_normal((rounds, d - 1, N))
    base = z @ spec._chol.T + spec.mean_vector  # (rounds, d-1, N)
    X = np.empty((rounds, N, d))
    X[:, :, : d - 1] = np.swapaxes(base, 1, 2)
    pick = rng.integers(0, d - 1, size=(rounds, N))
    X[:, :, d - 1] = np.take_along_axis(X[:, :, : d - 1], pick[:, :, None], axis=2)[:, :, 0]
    if truncate:
        norms = np.linalg.norm(X, axis=2, keepdims=True)
        X /= np.maximum(norms, 1.0)
    return X


def gen_contexts(spec: EnvironmentSpec, rng: np.random.Generator, truncate: bool = True) -> np.ndarray:
    return gen_contexts_batch(spec, rng, 1, truncate=truncate)[0]


def gen_hard_instance(d: int, N: int, T: int) -> tuple[list[EnvironmentSpec], np.ndarray]:
    """Lower-bound construction: basis-vector contexts and ``beta_i = Delta e_i``.

    Returns one spec per ``i`` in ``[d]`` (unit Gaussian noise) and the fixed
    ``(N, d)`` context array ``(e_1, ..., e_d, 0, ..., 0)``.
    """
    if not 2 <= d <= N:
        raise InvalidArgument(f"hard instance needs 2 <= d <= N, got d={d}, N={N}")
    if T < d / 4:
        raise InvalidArgument(f"hard instance needs T >= d/4, got T={T}, d={d}")
    gap = 0.5 * math.sqrt(d / T)
    X = np.zeros((N, d))
    X[:d, :] = np.eye(d)
    specs = []
    for i in range(d):
        beta = np.zeros(d)
        beta[i] = gap
        specs.append(
            EnvironmentSpec(d=d, N=N, beta_star=beta, kind="hard_instance", noise_sigma=1.0, delta_gap=gap)
        )
    return specs, X


def draw_reward(x: np.ndarray, beta_star: np.ndarray, sigma: float, rng: np.random.Generator) -> float:
    return float(x @ beta_star + sigma * rng.standard_normal())


def instantaneous_regret(contexts: np.ndarray, beta_star: np.ndarray, chosen_arm: int) -> float:
    means = np.asarray(contexts) @ beta_star
    return float(means.max() - means[chosen_arm])


def estimate_phi_sq(spec: EnvironmentSpec, rng: np.random.Generator, rounds: int = 10_000) -> float:
    """Smallest eigenvalue of the empirical mean of ``N^-1 sum_i x_i x_i^T``."""
    X = gen_contexts_batch(spec, rng, rounds)
    M = np.einsum("tnd,tne->de", X, X) / (rounds * spec.N)
    return float(np.linalg.eigvalsh(M)[0])


class ContextStream:
    """Per-round contexts and full noise vectors for one trajectory.

    Contexts and noise use separate generators and are produced in chunks, so
    every algorithm run on the same streams sees identical rounds. Noise is
    drawn for all arms; only the played arm's reward is revealed to a policy.
    """

    def __init__(
        self,
        spec: EnvironmentSpec,
        context_rng: np.random.Generator,
        noise_rng: np.random.Generator,
        fixed_contexts: np.ndarray | None = None,
        chunk: int = 1024,
    ):
        self.spec = spec
        self.context_rng = context_rng
        self.noise_rng = noise_rng
        self.fixed_contexts = fixed_contexts
        self.chunk = chunk

    def rounds(self, T: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield ``(contexts, rewards_all_arms)`` for ``T`` rounds."""
        spec = self.spec
        done = 0
        while done < T:
            n = min(self.chunk, T - done)
            if self.fixed_contexts is not None:
                X = np.broadcast_to(self.fixed_contexts, (n,) + self.fixed_contexts.shape)
            else:
                X = gen_contexts_batch(spec, self.context_rng, n)
            eta = self.noise_rng.standard_normal((n, spec.N))
            Y = X @ spec.beta_star + spec.noise_sigma * eta
            for k in range(n):
                yield X[k], Y[k]
            done += n


@dataclass
class RegretTrace:
    """Per-round record of one trajectory; ``h`` is -1 where not applicable."""

    arms: np.ndarray
    h: np.ndarray
    rewards: np.ndarray
    regret: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return int(self.arms.shape[0])

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.regret)

    @property
    def total_regret(self) -> float:
        return float(self.regret.sum())
