"""Generalized likelihood ratio statistics and the stopping decision."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .allocator import _project
from .kl import cts_threshold
from .model import CountsState


@njit(cache=True)
def _empirical_marginal(arm_counts, reward_sums, ctx_counts, t, a):
    s = 0.0
    for x in range(ctx_counts.size):
        if arm_counts[a, x] > 0:
            s += (ctx_counts[x] / t) * (reward_sums[a, x] / arm_counts[a, x])
    return s


@njit(cache=True)
def _leader(arm_counts, reward_sums, ctx_counts, t):
    best = 0
    best_val = -1.0
    for a in range(arm_counts.shape[0]):
        v = _empirical_marginal(arm_counts, reward_sums, ctx_counts, t, a)
        if v > best_val:
            best_val = v
            best = a
    return best


@njit(cache=True)
def _glrt_pair(arm_counts, reward_sums, ctx_counts, t, a, b):
    """Signed statistic Z_{a,b}(t); 0 until both arms are sampled in every seen context."""
    D = ctx_counts.size
    if t <= 0:
        return 0.0
    for x in range(D):
        if ctx_counts[x] > 0 and (arm_counts[a, x] == 0 or arm_counts[b, x] == 0):
            return 0.0
    ma = _empirical_marginal(arm_counts, reward_sums, ctx_counts, t, a)
    mb = _empirical_marginal(arm_counts, reward_sums, ctx_counts, t, b)
    if ma == mb:
        return 0.0
    if ma > mb:
        hi, lo, sign = a, b, 1.0
    else:
        hi, lo, sign = b, a, -1.0
    mu_hi = np.zeros(D)
    mu_lo = np.zeros(D)
    zeta = np.zeros(D)
    v_hi = np.zeros(D)
    v_lo = np.zeros(D)
    for x in range(D):
        if ctx_counts[x] > 0:
            zeta[x] = ctx_counts[x] / t
            mu_hi[x] = reward_sums[hi, x] / arm_counts[hi, x]
            mu_lo[x] = reward_sums[lo, x] / arm_counts[lo, x]
            v_hi[x] = arm_counts[hi, x] / t
            v_lo[x] = arm_counts[lo, x] / t
    cost, _, _ = _project(mu_hi, mu_lo, zeta, v_hi, v_lo, np.empty(D), np.empty(D), 1e-13)
    return sign * t * cost


@njit(cache=True)
def _glrt_max_min(arm_counts, reward_sums, ctx_counts, t):
    """Z(t) and the leader. Only the leader's row can attain the max-min:
    every other arm has a nonpositive statistic against the leader."""
    lead = _leader(arm_counts, reward_sums, ctx_counts, t)
    z = np.inf
    for b in range(arm_counts.shape[0]):
        if b != lead:
            zb = _glrt_pair(arm_counts, reward_sums, ctx_counts, t, lead, b)
            if zb < z:
                z = zb
    return z, lead


def _arrays(state: CountsState):
    return (
        np.ascontiguousarray(state.arm_counts, dtype=np.int64),
        np.ascontiguousarray(state.reward_sums, dtype=float),
        np.ascontiguousarray(state.context_counts, dtype=np.int64),
    )


def glrt_statistic(state: CountsState, a: int, b: int) -> float:
    """``Z_{a,b}(t)``: t times the plug-in transportation cost, signed by which arm leads."""
    if a == b:
        raise ValueError("a and b must be different arms")
    counts, sums, ctx = _arrays(state)
    return float(_glrt_pair(counts, sums, ctx, state.t, a, b))


def leader(state: CountsState) -> int:
    """Arm with the largest empirical marginal mean, lowest index on ties."""
    counts, sums, ctx = _arrays(state)
    return int(_leader(counts, sums, ctx, max(state.t, 1)))


@dataclass
class GlrtSnapshot:
    z_pairs: np.ndarray
    z: float
    leader: int
    stop: bool
    threshold: float


def stopping_decision(state: CountsState, delta: float, num_arms: int | None = None) -> GlrtSnapshot:
    if state.t < 1:
        raise ValueError("need at least one observation")
    K = state.num_arms if num_arms is None else num_arms
    counts, sums, ctx = _arrays(state)
    z_pairs = np.zeros((K, K))
    for a in range(K):
        for b in range(a + 1, K):
            z = _glrt_pair(counts, sums, ctx, state.t, a, b)
            z_pairs[a, b] = z
            z_pairs[b, a] = -z
    masked = z_pairs + np.diag(np.full(K, np.inf))
    z_t = float(np.max(masked.min(axis=1)))
    threshold = cts_threshold(state.t, delta, K)
    return GlrtSnapshot(
        z_pairs=z_pairs,
        z=z_t,
        leader=int(_leader(counts, sums, ctx, state.t)),
        stop=bool(z_t > threshold),
        threshold=threshold,
    )
