"""Two-armed Gaussian bandits with a Gaussian context.

The context enters only through the residualized estimators
``R - slope_a (X - mu_x)``, whose variance shrinks from ``sigma_a^2`` to
``sigma_a^2 (1 - rho_a^2)``. The alpha-elimination rule pulls arm 0 a
deterministic ``ceil(alpha t)`` times out of ``t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .kl import _elimination_threshold
from .model import GaussianTwoArmInstance, SeededStream

CHUNK = 4096


def gaussian_characteristic_time(instance: GaussianTwoArmInstance) -> float:
    """``2 (s1' + s2')^2 / (mu1 - mu2)^2`` with the conditional std-devs ``s'``."""
    gap = instance.mu1 - instance.mu2
    if gap == 0.0:
        raise ValueError("arm means must differ")
    s1, s2 = instance.cond_stds
    return 2.0 * (s1 + s2) ** 2 / gap**2


def efficiency_gain(rho1: float, rho2: float, sigma1: float = 1.0, sigma2: float = 1.0) -> float:
    """Fraction of samples saved by using the context: ``1 - ((s1'+s2')/(s1+s2))^2``."""
    if abs(rho1) > 1 or abs(rho2) > 1:
        raise ValueError("correlations must lie in [-1, 1]")
    if sigma1 <= 0 or sigma2 <= 0:
        raise ValueError("standard deviations must be positive")
    c1 = sigma1 * math.sqrt(1.0 - rho1 * rho1)
    c2 = sigma2 * math.sqrt(1.0 - rho2 * rho2)
    return 1.0 - ((c1 + c2) / (sigma1 + sigma2)) ** 2


def gain_grid(steps: int = 101, sigma1: float = 1.0, sigma2: float = 1.0):
    """Efficiency gain over ``rho1, rho2`` in ``[0, 1]``; returns (rhos, gains)."""
    rhos = np.linspace(0.0, 1.0, steps)
    gains = np.array([[efficiency_gain(r1, r2, sigma1, sigma2) for r2 in rhos] for r1 in rhos])
    return rhos, gains


@dataclass
class ResidualEstimatorState:
    counts: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=np.int64))
    sums: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def means(self) -> np.ndarray:
        out = np.full(2, np.nan)
        seen = self.counts > 0
        out[seen] = self.sums[seen] / self.counts[seen]
        return out


def residual_update(
    state: ResidualEstimatorState, arm: int, x: float, r: float, instance: GaussianTwoArmInstance
) -> ResidualEstimatorState:
    if arm not in (0, 1):
        raise ValueError("arm must be 0 or 1")
    state.sums[arm] += r - instance.slopes[arm] * (x - instance.mu_x)
    state.counts[arm] += 1
    return state


def elimination_alpha(instance: GaussianTwoArmInstance, use_context: bool = True) -> float:
    s1, s2 = instance.cond_stds if use_context else instance.sigmas
    return s1 / (s1 + s2)


@dataclass
class EliminationResult:
    tau: int
    recommended: int
    truncated: bool
    alpha: float
    use_context: bool
    d: np.ndarray | None = None
    arm_counts: tuple = (0, 0)


@njit(cache=True)
def _ceil_alpha(alpha, t):
    return math.ceil(alpha * t)


@njit(cache=True)
def _alpha_chunk(
    normals, status, sums, alpha, means, slopes, cond_stds, mu_x, sigma_x,
    est_slopes, est_stds, delta, max_rounds, out_d,
):
    """Advance alpha-elimination by at most ``normals.shape[0]`` rounds.

    ``status`` is ``[t, n_0, n_1]``. Rewards are generated from the true
    model (``slopes``, ``cond_stds``) and residualized with the estimator's
    model (``est_slopes``, ``est_stds``).
    """
    n = normals.shape[0]
    for i in range(n):
        t = status[0]
        if t >= max_rounds:
            return i, False
        t += 1
        status[0] = t
        arm = 1 if _ceil_alpha(alpha, t) == _ceil_alpha(alpha, t - 1) else 0
        x = mu_x + sigma_x * normals[i, 0]
        r = means[arm] + slopes[arm] * (x - mu_x) + cond_stds[arm] * normals[i, 1]
        sums[arm] += r - est_slopes[arm] * (x - mu_x)
        status[1 + arm] += 1
        n0 = status[1]
        n1 = status[2]
        if n0 == 0 or n1 == 0:
            out_d[i] = np.nan
            continue
        d = sums[0] / n0 - sums[1] / n1
        out_d[i] = d
        var = est_stds[0] ** 2 / n0 + est_stds[1] ** 2 / n1
        if abs(d) > math.sqrt(2.0 * var * _elimination_threshold(t, delta)):
            return i + 1, True
    return n, False


def run_alpha_elimination(
    instance: GaussianTwoArmInstance,
    delta: float,
    seed: int = 0,
    max_rounds: int = 10_000_000,
    use_context: bool = True,
    stream: SeededStream | None = None,
    record_trace: bool = False,
) -> EliminationResult:
    """Alpha-elimination with residualized (``use_context``) or raw mean estimators.

    The baseline (``use_context=False``) ignores the context entirely: raw
    sample means, ``alpha = s1 / (s1 + s2)`` and the unconditional variances
    in the confidence width. Both variants consume the stream identically,
    so equal seeds give paired runs.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if stream is None:
        stream = SeededStream(seed)
    alpha = elimination_alpha(instance, use_context)
    if use_context:
        est_slopes = np.array(instance.slopes)
        est_stds = np.array(instance.cond_stds)
    else:
        est_slopes = np.zeros(2)
        est_stds = np.array(instance.sigmas)
    status = np.zeros(3, dtype=np.int64)
    sums = np.zeros(2)
    traces = []
    stopped = False
    while status[0] < max_rounds and not stopped:
        n = int(min(CHUNK, max_rounds - status[0]))
        normals = stream.normal((n, 2))
        out_d = np.empty(n)
        done, stopped = _alpha_chunk(
            normals, status, sums, alpha, np.array(instance.means), np.array(instance.slopes),
            np.array(instance.cond_stds), instance.mu_x, instance.sigma_x,
            est_slopes, est_stds, delta, max_rounds, out_d,
        )
        if record_trace:
            traces.append(out_d[:done])
    means = sums / np.maximum(status[1:], 1)
    return EliminationResult(
        tau=int(status[0]),
        recommended=0 if means[0] >= means[1] else 1,
        truncated=not stopped,
        alpha=alpha,
        use_context=use_context,
        d=np.concatenate(traces) if record_trace else None,
        arm_counts=(int(status[1]), int(status[2])),
    )
