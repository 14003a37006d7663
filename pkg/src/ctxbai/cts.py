"""Contextual Track-and-Stop for finite-context Bernoulli bandits.

Each round observes a context, samples an arm (forced exploration first,
then D-tracking of the plug-in optimal allocation), observes a Bernoulli
reward and stops once the GLRT statistic exceeds ``log(2t(K-1)/delta)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .allocator import _ascend, uniform_allocation
from .glrt import _glrt_max_min, _leader
from .kl import _cts_threshold
from .model import BernoulliInstance, CountsState, SeededStream

CHUNK = 4096
WARM_MIX = 1e-3
MAX_STEP_OFFSET = 1000


@dataclass
class CtsConfig:
    delta: float = 0.05
    update_period: int = 10
    allocator_tolerance: float = 1e-6
    allocator_max_iter: int = 100
    max_rounds: int = 10_000_000
    seed: int = 0
    stopping: bool = True
    record_trace: bool = True

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.update_period < 1:
            raise ValueError("update_period must be at least 1")
        if self.allocator_tolerance <= 0 or self.allocator_max_iter < 1:
            raise ValueError("allocator settings must be positive")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")


@dataclass
class CtsTrace:
    tau: int
    recommended: int
    stopped: bool
    truncated: bool
    contexts: np.ndarray
    arms: np.ndarray
    rewards: np.ndarray
    z: np.ndarray
    allocation_times: np.ndarray
    allocations: np.ndarray
    counts: CountsState = field(repr=False)

    @property
    def t(self) -> np.ndarray:
        return np.arange(1, self.z.size + 1)


@njit(cache=True)
def _forced_mask(arm_counts, ctx_counts, x, mask):
    K = arm_counts.shape[0]
    floor = math.sqrt(ctx_counts[x]) - K / 2.0
    any_forced = False
    for a in range(K):
        mask[a] = arm_counts[a, x] < floor
        if mask[a]:
            any_forced = True
    return any_forced


@njit(cache=True)
def _select_arm(arm_counts, ctx_counts, x, w):
    K = arm_counts.shape[0]
    mask = np.zeros(K, dtype=np.bool_)
    if _forced_mask(arm_counts, ctx_counts, x, mask):
        best = -1
        for a in range(K):
            if mask[a] and (best < 0 or arm_counts[a, x] < arm_counts[best, x]):
                best = a
        return best
    best = 0
    best_score = ctx_counts[x] * w[0, x] - arm_counts[0, x]
    for a in range(1, K):
        score = ctx_counts[x] * w[a, x] - arm_counts[a, x]
        if score > best_score:
            best_score = score
            best = a
    return best


@njit(cache=True)
def _update_allocation(arm_counts, reward_sums, ctx_counts, t, w, tol, max_iter, offset):
    """Re-solve the allocation on the clamped plug-in instance, warm-started
    from ``w``. Returns the number of ascent iterations used (0 if skipped)."""
    K, D = arm_counts.shape
    for x in range(D):
        if ctx_counts[x] == 0:
            return 0
    clamp = 1.0 / (t + 2.0)
    mu = np.empty((K, D))
    zeta = np.empty(D)
    for x in range(D):
        zeta[x] = ctx_counts[x] / t
        for a in range(K):
            m = reward_sums[a, x] / arm_counts[a, x] if arm_counts[a, x] > 0 else 0.5
            mu[a, x] = min(max(m, clamp), 1.0 - clamp)
    marg = np.zeros(K)
    for a in range(K):
        for x in range(D):
            marg[a] += zeta[x] * mu[a, x]
    top = np.sort(marg)
    if not top[K - 1] - top[K - 2] > 0.0:
        return 0
    w0 = (1.0 - WARM_MIX) * w + WARM_MIX / K
    w_new, _, iters, _, _, _ = _ascend(mu, zeta, w0, tol, max_iter, 1.0, 5, offset)
    for x in range(D):
        s = 0.0
        for a in range(K):
            s += w_new[a, x]
        for a in range(K):
            w[a, x] = w_new[a, x] / s
    return iters


@njit(cache=True)
def _cts_chunk(
    mu, cum_zeta, u, arm_counts, reward_sums, ctx_counts, status, w,
    delta, period, tol, max_iter, stopping, max_rounds,
    out_ctx, out_arm, out_rew, out_z, snap_t, snap_w,
):
    """Advance one run by at most ``u.shape[0]`` rounds.

    ``status`` holds ``[t, total ascent iterations, snapshots written]``.
    Returns ``(rounds done, stopped)``.
    """
    K, D = mu.shape
    n = u.shape[0]
    status[2] = 0
    for i in range(n):
        t = status[0]
        if t >= max_rounds:
            return i, False
        x = 0
        while x < D - 1 and u[i, 0] >= cum_zeta[x]:
            x += 1
        arm = _select_arm(arm_counts, ctx_counts, x, w)
        r = 1.0 if u[i, 1] < mu[arm, x] else 0.0
        t += 1
        status[0] = t
        ctx_counts[x] += 1
        arm_counts[arm, x] += 1
        reward_sums[arm, x] += r
        if t % period == 0:
            offset = min(status[1], MAX_STEP_OFFSET)
            used = _update_allocation(
                arm_counts, reward_sums, ctx_counts, t, w, tol, max_iter, offset
            )
            if used > 0:
                status[1] += used
                j = status[2]
                snap_t[j] = t
                snap_w[j, :, :] = w
                status[2] = j + 1
        z, _ = _glrt_max_min(arm_counts, reward_sums, ctx_counts, t)
        out_ctx[i] = x
        out_arm[i] = arm
        out_rew[i] = r
        out_z[i] = z
        if stopping and z > _cts_threshold(t, delta, K):
            return i + 1, True
    return n, False


def forced_exploration_set(state: CountsState, context: int) -> list[int]:
    """Arms whose count in ``context`` lags ``sqrt(N_x) - K/2``."""
    mask = np.zeros(state.num_arms, dtype=np.bool_)
    _forced_mask(state.arm_counts, state.context_counts, context, mask)
    return [int(a) for a in np.flatnonzero(mask)]


def select_arm(state: CountsState, context: int, allocation) -> int:
    w = np.ascontiguousarray(allocation, dtype=float)
    return int(_select_arm(state.arm_counts, state.context_counts, context, w))


def run_cts(
    instance: BernoulliInstance, config: CtsConfig, stream: SeededStream | None = None
) -> CtsTrace:
    """Run Contextual Track-and-Stop until the GLRT stops or ``max_rounds``.

    With ``config.stopping`` off the run goes to ``max_rounds`` and is not
    flagged as truncated. Draws two uniforms per round from ``stream``
    (context, then reward); defaults to ``SeededStream(config.seed)``.
    """
    if stream is None:
        stream = SeededStream(config.seed)
    K, D = instance.num_arms, instance.num_contexts
    mu = np.ascontiguousarray(instance.cond_means, dtype=float)
    cum = np.cumsum(instance.context_probs)
    state = CountsState.for_instance(instance)
    w = uniform_allocation(K, D)
    status = np.zeros(3, dtype=np.int64)
    chunks = {"ctx": [], "arm": [], "rew": [], "z": []}
    snap_times, snap_allocs = [], []
    stopped = False
    while status[0] < config.max_rounds and not stopped:
        n = int(min(CHUNK, config.max_rounds - status[0]))
        u = stream.uniform((n, 2))
        out_ctx = np.empty(n, dtype=np.int64)
        out_arm = np.empty(n, dtype=np.int64)
        out_rew = np.empty(n)
        out_z = np.empty(n)
        snap_t = np.empty(n // config.update_period + 1, dtype=np.int64)
        snap_w = np.empty((snap_t.size, K, D))
        done, stopped = _cts_chunk(
            mu, cum, u, state.arm_counts, state.reward_sums, state.context_counts,
            status, w, config.delta, config.update_period, config.allocator_tolerance,
            config.allocator_max_iter, config.stopping, config.max_rounds,
            out_ctx, out_arm, out_rew, out_z, snap_t, snap_w,
        )
        if config.record_trace:
            chunks["ctx"].append(out_ctx[:done])
            chunks["arm"].append(out_arm[:done])
            chunks["rew"].append(out_rew[:done])
            chunks["z"].append(out_z[:done])
            k = int(status[2])
            snap_times.append(snap_t[:k].copy())
            snap_allocs.append(snap_w[:k].copy())
        else:
            chunks["z"] = [out_z[done - 1:done]] if done else chunks["z"]
    state.t = int(status[0])

    def cat(parts, dtype):
        return np.concatenate(parts) if parts else np.empty(0, dtype=dtype)

    tau = state.t
    lead = int(_leader(state.arm_counts, state.reward_sums, state.context_counts, max(tau, 1)))
    return CtsTrace(
        tau=tau,
        recommended=lead,
        stopped=bool(stopped),
        truncated=bool(config.stopping and not stopped),
        contexts=cat(chunks["ctx"], np.int64) if config.record_trace else np.empty(0, np.int64),
        arms=cat(chunks["arm"], np.int64) if config.record_trace else np.empty(0, np.int64),
        rewards=cat(chunks["rew"], float) if config.record_trace else np.empty(0),
        z=cat(chunks["z"], float),
        allocation_times=cat(snap_times, np.int64),
        allocations=np.concatenate(snap_allocs) if snap_allocs else np.empty((0, K, D)),
        counts=state,
    )
