"""Problem instances, samplers and running counts.

Arms and contexts are 0-indexed throughout. A Bernoulli instance stores
its conditional means as a ``(K, D)`` array: row ``a`` holds arm ``a``'s
mean reward in every context.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

RNG_ALGORITHM = "numpy.random.Philox(SeedSequence(seed, spawn_key=(stream_id,)))"


class InstanceError(ValueError):
    """Raised when an instance violates its validity constraints."""


@dataclass(frozen=True, eq=False)
class BernoulliInstance:
    cond_means: np.ndarray
    context_probs: np.ndarray

    def __post_init__(self):
        means = np.array(self.cond_means, dtype=float)
        probs = np.array(self.context_probs, dtype=float).reshape(-1)
        if means.ndim == 1:
            means = means.reshape(-1, 1)
        if means.ndim != 2:
            raise InstanceError("cond_means must be a (num_arms, num_contexts) array")
        if means.shape[0] < 2:
            raise InstanceError("need at least two arms")
        if means.shape[1] != probs.size or probs.size < 1:
            raise InstanceError(
                f"context_probs has {probs.size} entries for {means.shape[1]} contexts"
            )
        if not np.all((means >= 0.0) & (means <= 1.0)):
            raise InstanceError("conditional means must lie in [0, 1]")
        if np.any(probs <= 0.0):
            raise InstanceError("every context probability must be positive")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise InstanceError(f"context probabilities sum to {probs.sum()!r}, not 1")
        marg = means @ probs
        top = np.sort(marg)[::-1]
        if not top[0] - top[1] > 0.0:
            raise InstanceError("the best arm (by marginal mean) is not unique")
        means.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "cond_means", means)
        object.__setattr__(self, "context_probs", probs)

    @property
    def num_arms(self) -> int:
        return self.cond_means.shape[0]

    @property
    def num_contexts(self) -> int:
        return self.cond_means.shape[1]

    @property
    def best_arm(self) -> int:
        return int(np.argmax(marginal_means(self)))

    def to_dict(self) -> dict:
        return {
            "kind": "bernoulli",
            "cond_means": self.cond_means.tolist(),
            "context_probs": self.context_probs.tolist(),
        }


@dataclass(frozen=True)
class GaussianTwoArmInstance:
    """Two Gaussian arms sharing one Gaussian context.

    ``rho1``/``rho2`` are the correlations between each arm's reward and
    the context. Given the context, the arms are independent.
    """

    mu1: float
    mu2: float
    sigma1: float
    sigma2: float
    mu_x: float = 0.0
    sigma_x: float = 1.0
    rho1: float = 0.0
    rho2: float = 0.0

    def __post_init__(self):
        for name in ("mu1", "mu2", "sigma1", "sigma2", "mu_x", "sigma_x", "rho1", "rho2"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InstanceError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if self.mu1 == self.mu2:
            raise InstanceError("the two arm means must differ")
        if self.sigma1 <= 0 or self.sigma2 <= 0 or self.sigma_x <= 0:
            raise InstanceError("standard deviations must be positive")
        if not (-1 < self.rho1 < 1 and -1 < self.rho2 < 1):
            raise InstanceError("correlations must lie in (-1, 1)")

    @property
    def means(self) -> tuple[float, float]:
        return (self.mu1, self.mu2)

    @property
    def sigmas(self) -> tuple[float, float]:
        return (self.sigma1, self.sigma2)

    @property
    def rhos(self) -> tuple[float, float]:
        return (self.rho1, self.rho2)

    @property
    def cond_stds(self) -> tuple[float, float]:
        """Reward standard deviations once the context is known."""
        return (
            self.sigma1 * math.sqrt(1.0 - self.rho1**2),
            self.sigma2 * math.sqrt(1.0 - self.rho2**2),
        )

    @property
    def slopes(self) -> tuple[float, float]:
        """Regression coefficients of each reward on the context."""
        return (
            self.rho1 * self.sigma1 / self.sigma_x,
            self.rho2 * self.sigma2 / self.sigma_x,
        )

    @property
    def best_arm(self) -> int:
        return 0 if self.mu1 > self.mu2 else 1

    def covariance(self) -> np.ndarray:
        """Covariance of ``(R_1, R_2, X)`` under the common-context factor model."""
        s1, s2, sx = self.sigma1, self.sigma2, self.sigma_x
        c12 = self.rho1 * self.rho2 * s1 * s2
        c1x = self.rho1 * s1 * sx
        c2x = self.rho2 * s2 * sx
        return np.array([[s1 * s1, c12, c1x], [c12, s2 * s2, c2x], [c1x, c2x, sx * sx]])

    def without_context(self) -> "GaussianTwoArmInstance":
        return GaussianTwoArmInstance(
            self.mu1, self.mu2, self.sigma1, self.sigma2, self.mu_x, self.sigma_x, 0.0, 0.0
        )

    def to_dict(self) -> dict:
        return {
            "kind": "gaussian2",
            "mu1": self.mu1,
            "mu2": self.mu2,
            "sigma1": self.sigma1,
            "sigma2": self.sigma2,
            "mu_x": self.mu_x,
            "sigma_x": self.sigma_x,
            "rho1": self.rho1,
            "rho2": self.rho2,
        }


class SeededStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Streams with different ids are statistically independent; the same
    pair always replays the same draws.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"SeededStream(seed={self.seed}, stream_id={self.stream_id})"

    def uniform(self, size=None):
        return self.generator.random(size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)


def marginal_means(instance: BernoulliInstance) -> np.ndarray:
    return instance.cond_means @ instance.context_probs


def collapse_context(instance: BernoulliInstance) -> BernoulliInstance:
    """The context-free instance with the same marginal arm means."""
    return BernoulliInstance(marginal_means(instance).reshape(-1, 1), np.ones(1))


def draw_context(cum_probs: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(cum_probs, u, side="right"))
    return min(idx, cum_probs.size - 1)


def sample_round(
    instance: BernoulliInstance, arm_policy: Callable[[int], int], stream: SeededStream
) -> tuple[int, int, int]:
    """Draw a context, ask the policy for an arm, then draw its reward.

    Consumes exactly two uniforms, context first, matching the CTS loop so
    that both replay identically from the same stream.
    """
    cum = np.cumsum(instance.context_probs)
    x = draw_context(cum, stream.uniform())
    arm = int(arm_policy(x))
    if not 0 <= arm < instance.num_arms:
        raise ValueError(f"policy returned arm {arm}, valid arms are 0..{instance.num_arms - 1}")
    reward = int(stream.uniform() < instance.cond_means[arm, x])
    return x, arm, reward


def sample_gaussian_round(
    instance: GaussianTwoArmInstance, arm: int, stream: SeededStream
) -> tuple[float, float]:
    if arm not in (0, 1):
        raise ValueError("arm must be 0 or 1")
    zx, zr = stream.normal(2)
    return gaussian_round_from_normals(instance, arm, zx, zr)


def gaussian_round_from_normals(instance, arm, zx, zr):
    x = instance.mu_x + instance.sigma_x * zx
    r = instance.means[arm] + instance.slopes[arm] * (x - instance.mu_x) + instance.cond_stds[arm] * zr
    return float(x), float(r)


@dataclass
class CountsState:
    """Running tallies ``N_x``, ``N_{a,x}`` and reward sums for one run."""

    num_arms: int
    num_contexts: int
    t: int = 0
    context_counts: np.ndarray = field(default=None)
    arm_counts: np.ndarray = field(default=None)
    reward_sums: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.context_counts is None:
            self.context_counts = np.zeros(self.num_contexts, dtype=np.int64)
        if self.arm_counts is None:
            self.arm_counts = np.zeros((self.num_arms, self.num_contexts), dtype=np.int64)
        if self.reward_sums is None:
            self.reward_sums = np.zeros((self.num_arms, self.num_contexts))

    @classmethod
    def for_instance(cls, instance: BernoulliInstance) -> "CountsState":
        return cls(instance.num_arms, instance.num_contexts)

    def update(self, context: int, arm: int, reward: float) -> "CountsState":
        self.t += 1
        self.context_counts[context] += 1
        self.arm_counts[arm, context] += 1
        self.reward_sums[arm, context] += reward
        return self

    def empirical_means(self, fill: float = 0.0) -> np.ndarray:
        """``mu_hat[a, x]``; entries with no samples are set to ``fill``."""
        out = np.full(self.arm_counts.shape, float(fill))
        seen = self.arm_counts > 0
        out[seen] = self.reward_sums[seen] / self.arm_counts[seen]
        return out

    def context_freqs(self) -> np.ndarray:
        if self.t == 0:
            return np.zeros(self.num_contexts)
        return self.context_counts / self.t

    def empirical_marginals(self) -> np.ndarray:
        return self.empirical_means() @ self.context_freqs()

    def copy(self) -> "CountsState":
        return CountsState(
            self.num_arms,
            self.num_contexts,
            self.t,
            self.context_counts.copy(),
            self.arm_counts.copy(),
            self.reward_sums.copy(),
        )


def update_counts(state: CountsState, context: int, arm: int, reward: float) -> CountsState:
    return state.update(context, arm, reward)


def instance_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "bernoulli":
        try:
            return BernoulliInstance(doc["cond_means"], doc["context_probs"])
        except KeyError as exc:
            raise InstanceError(f"bernoulli instance is missing field {exc}") from None
    if kind == "gaussian2":
        keys = ("mu1", "mu2", "sigma1", "sigma2", "mu_x", "sigma_x", "rho1", "rho2")
        missing = [k for k in keys if k not in doc]
        if missing:
            raise InstanceError(f"gaussian2 instance is missing fields {missing}")
        return GaussianTwoArmInstance(**{k: doc[k] for k in keys})
    raise InstanceError(f"unknown instance kind {kind!r}")


def load_instance(path) -> BernoulliInstance | GaussianTwoArmInstance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def save_instance(instance, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(instance.to_dict(), indent=2) + "\n")
    return path
