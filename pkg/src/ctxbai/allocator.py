"""Characteristic time and optimal allocations for finite-context Bernoulli bandits.

For an allocation ``w`` (one probability vector over arms per context)
the transportation cost against challenger ``a`` is

    L_a(w) = min  sum_x zeta_x (w[best,x] kl(mu[best,x], l1[x]) + w[a,x] kl(mu[a,x], la[x]))
             s.t. sum_x zeta_x l1[x] == sum_x zeta_x la[x]

and ``1 / T* = max_w min_a L_a(w)``. The inner problem is solved by
bisection on the scalar Lagrange multiplier of the equality constraint;
each per-context minimiser has a closed form once the multiplier is
fixed. The outer problem is solved by exponentiated-gradient ascent on
the product of per-context simplices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .kl import _kl
from .model import BernoulliInstance, InstanceError, marginal_means

KAPPA = 1e-6
TIE_TOL = 1e-9
CONSTRAINT_TOL = 1e-8


@njit(cache=True)
def _tilted_root(mu, c):
    """argmin over [0, 1] of kl(mu, lam) - c * lam.

    Interior solutions solve (lam - mu) = c lam (1 - lam); exactly one root
    of that quadratic lies in [0, 1]. Both branches are the cancellation-free
    form of the same root.
    """
    if c == 0.0:
        return mu
    one_c = 1.0 - c
    disc = one_c * one_c + 4.0 * c * mu
    if disc < 0.0:
        disc = 0.0
    sq = math.sqrt(disc)
    if one_c >= 0.0:
        den = one_c + sq
        lam = 2.0 * mu / den if den > 0.0 else 0.0
    else:
        lam = (sq - one_c) / (2.0 * c)
    if lam < 0.0:
        return 0.0
    if lam > 1.0:
        return 1.0
    return lam


@njit(cache=True)
def _kl_second(mu, lam):
    if lam <= 0.0 or lam >= 1.0:
        return np.inf
    return mu / (lam * lam) + (1.0 - mu) / ((1.0 - lam) * (1.0 - lam))


@njit(cache=True)
def _fill_lambdas(gamma, mu_hi, mu_lo, zeta, v_hi, v_lo, lam_hi, lam_lo):
    """Minimisers at multiplier ``gamma > 0``.

    Returns the constraint gap ``h`` and its derivative in ``gamma``.
    """
    h = 0.0
    dh = 0.0
    for x in range(mu_hi.size):
        z = zeta[x]
        if z <= 0.0:
            lam_hi[x] = mu_hi[x]
            lam_lo[x] = mu_lo[x]
            continue
        if v_hi[x] > 0.0:
            lam_hi[x] = _tilted_root(mu_hi[x], -gamma * z / v_hi[x])
            dh -= z * z / (v_hi[x] * _kl_second(mu_hi[x], lam_hi[x]))
        else:
            lam_hi[x] = 0.0
        if v_lo[x] > 0.0:
            lam_lo[x] = _tilted_root(mu_lo[x], gamma * z / v_lo[x])
            dh -= z * z / (v_lo[x] * _kl_second(mu_lo[x], lam_lo[x]))
        else:
            lam_lo[x] = 1.0
        h += z * (lam_hi[x] - lam_lo[x])
    return h, dh


@njit(cache=True)
def _project(mu_hi, mu_lo, zeta, v_hi, v_lo, lam_hi, lam_lo, tol):
    """Equality-constrained KL projection of the pair (hi, lo).

    ``v_*`` are the effective weights multiplying each kl term (already
    including the context probability), ``zeta`` weights the constraint.
    Writes the minimisers into ``lam_hi``/``lam_lo`` and returns
    ``(cost, gamma, residual)``.
    """
    n = mu_hi.size
    gap = 0.0
    for x in range(n):
        gap += zeta[x] * (mu_hi[x] - mu_lo[x])
        lam_hi[x] = mu_hi[x]
        lam_lo[x] = mu_lo[x]
    if gap <= 0.0:
        return 0.0, 0.0, gap

    # limit gamma -> 0+: weighted coordinates stay put, free ones jump to the extremes
    s_hi = 0.0
    s_lo = 0.0
    z_hi = 0.0
    z_lo = 0.0
    for x in range(n):
        z = zeta[x]
        if z <= 0.0:
            continue
        if v_hi[x] > 0.0:
            s_hi += z * mu_hi[x]
        else:
            z_hi += z
        if v_lo[x] > 0.0:
            s_lo += z * mu_lo[x]
        else:
            z_lo += z
    h0 = s_hi - s_lo - z_lo
    if h0 <= 0.0:
        # free coordinates absorb the whole gap at zero cost:
        # free hi at 1 - s, free lo at s, with s chosen to close the constraint
        top = s_hi + z_hi - s_lo
        s = top / (top - h0) if top - h0 > 0.0 else 0.0
        for x in range(n):
            if zeta[x] <= 0.0:
                continue
            if v_hi[x] <= 0.0:
                lam_hi[x] = 1.0 - s
            if v_lo[x] <= 0.0:
                lam_lo[x] = s
        res = 0.0
        for x in range(n):
            res += zeta[x] * (lam_hi[x] - lam_lo[x])
        return 0.0, 0.0, res

    # bracket [lo, hi] with h(lo) > 0 >= h(hi); Newton steps, bisection fallback
    lo = 0.0
    hi = 1.0
    h_hi, _ = _fill_lambdas(hi, mu_hi, mu_lo, zeta, v_hi, v_lo, lam_hi, lam_lo)
    while h_hi > 0.0 and hi < 1e300:
        lo = hi
        hi *= 2.0
        h_hi, _ = _fill_lambdas(hi, mu_hi, mu_lo, zeta, v_hi, v_lo, lam_hi, lam_lo)
    gamma = 0.5 * (lo + hi)
    h = h_hi
    for _ in range(300):
        h, dh = _fill_lambdas(gamma, mu_hi, mu_lo, zeta, v_hi, v_lo, lam_hi, lam_lo)
        if abs(h) <= tol:
            break
        if h > 0.0:
            lo = gamma
        else:
            hi = gamma
        if hi - lo <= 4e-16 * hi:
            break
        nxt = gamma - h / dh if dh < 0.0 else -1.0
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        gamma = nxt
    cost = 0.0
    for x in range(n):
        if zeta[x] <= 0.0:
            continue
        if v_hi[x] > 0.0:
            cost += v_hi[x] * _kl(mu_hi[x], lam_hi[x])
        if v_lo[x] > 0.0:
            cost += v_lo[x] * _kl(mu_lo[x], lam_lo[x])
    return cost, gamma, h


@njit(cache=True)
def _best_arm(mu, zeta):
    K, D = mu.shape
    best = 0
    best_val = -1.0
    for a in range(K):
        s = 0.0
        for x in range(D):
            s += zeta[x] * mu[a, x]
        if s > best_val:
            best_val = s
            best = a
    return best


@njit(cache=True)
def _evaluate(mu, zeta, w, best, costs, g_best, g_ch, lam_b, lam_c):
    """Pairwise costs of every challenger and their supergradient rows.

    ``lam_b[a]``/``lam_c[a]`` receive the minimisers for challenger ``a``.
    Returns ``min_a costs[a]``.
    """
    K, D = mu.shape
    v_hi = np.empty(D)
    v_lo = np.empty(D)
    m = np.inf
    for a in range(K):
        if a == best:
            costs[a] = np.inf
            continue
        for x in range(D):
            v_hi[x] = zeta[x] * w[best, x]
            v_lo[x] = zeta[x] * w[a, x]
        cost, _, _ = _project(
            mu[best], mu[a], zeta, v_hi, v_lo, lam_b[a], lam_c[a], 1e-13
        )
        costs[a] = cost
        for x in range(D):
            g_best[a, x] = zeta[x] * _kl(mu[best, x], lam_b[a, x])
            g_ch[a, x] = zeta[x] * _kl(mu[a, x], lam_c[a, x])
        if cost < m:
            m = cost
    return m


@njit(cache=True)
def _dual_bound(mu, zeta, best, q, lam_b, lam_c):
    """Upper bound on max_w min_a L_a(w) from fixed challenger weights ``q``
    and feasible alternatives; valid for any ``q`` in the simplex."""
    K, D = mu.shape
    total = 0.0
    for x in range(D):
        col_best = 0.0
        for a in range(K):
            if a != best:
                col_best += q[a] * _kl(mu[best, x], lam_b[a, x])
        top = col_best
        for a in range(K):
            if a != best:
                val = q[a] * _kl(mu[a, x], lam_c[a, x])
                if val > top:
                    top = val
        total += zeta[x] * top
    return total


@njit(cache=True)
def _tighten_dual(mu, zeta, best, lam_b, lam_c, q0, iters):
    """Minimise the dual bound over challenger weights by mirror descent.

    The alternatives stay fixed, so every iterate gives a valid bound;
    the smallest one is returned.
    """
    K, D = mu.shape
    q = q0.copy()
    n_ch = K - 1
    for a in range(K):
        if a == best:
            q[a] = 0.0
        elif q[a] <= 0.0:
            q[a] = 1e-12
    s = q.sum()
    q /= s
    bound = _dual_bound(mu, zeta, best, q, lam_b, lam_c)
    grad = np.zeros(K)
    for k in range(1, iters + 1):
        grad[:] = 0.0
        for x in range(D):
            col_best = 0.0
            for a in range(K):
                if a != best:
                    col_best += q[a] * _kl(mu[best, x], lam_b[a, x])
            top = col_best
            arg = -1
            for a in range(K):
                if a != best:
                    val = q[a] * _kl(mu[a, x], lam_c[a, x])
                    if val > top:
                        top = val
                        arg = a
            if arg < 0:
                for a in range(K):
                    if a != best:
                        grad[a] += zeta[x] * _kl(mu[best, x], lam_b[a, x])
            else:
                grad[arg] += zeta[x] * _kl(mu[arg, x], lam_c[arg, x])
        gmax = 0.0
        for a in range(K):
            if a != best and abs(grad[a]) > gmax:
                gmax = abs(grad[a])
        if gmax == 0.0:
            break
        eta = 1.0 / (gmax * math.sqrt(k))
        s = 0.0
        for a in range(K):
            if a != best:
                q[a] *= math.exp(-eta * grad[a] / 1.0)
                s += q[a]
        for a in range(K):
            q[a] /= s
        val = _dual_bound(mu, zeta, best, q, lam_b, lam_c)
        if val < bound:
            bound = val
    return bound


@njit(cache=True)
def _ascend(mu, zeta, w0, tol, max_iter, step, patience, k0):
    K, D = mu.shape
    best = _best_arm(mu, zeta)
    costs = np.empty(K)
    g_best = np.zeros((K, D))
    g_ch = np.zeros((K, D))
    lam_b = np.zeros((K, D))
    lam_c = np.zeros((K, D))
    grad = np.zeros((K, D))
    q_avg = np.zeros(K)

    w = w0.copy()
    w_bar = w0.copy()
    m_bar = _evaluate(mu, zeta, w_bar, best, costs, g_best, g_ch, lam_b, lam_c)
    w_out = w_bar.copy()
    m_out = m_bar
    prev = m_bar
    calm = 0
    gnorm = 0.0
    gap = np.inf
    k = 0
    for k in range(1, max_iter + 1):
        m_w = _evaluate(mu, zeta, w, best, costs, g_best, g_ch, lam_b, lam_c)
        if m_w > m_out:
            m_out = m_w
            w_out[:, :] = w
        n_active = 0
        for a in range(K):
            if a != best and costs[a] <= m_w + TIE_TOL:
                n_active += 1
        grad[:, :] = 0.0
        for a in range(K):
            if a != best and costs[a] <= m_w + TIE_TOL:
                q_avg[a] += (1.0 / n_active - q_avg[a]) / k
                for x in range(D):
                    grad[best, x] += g_best[a, x] / n_active
                    grad[a, x] += g_ch[a, x] / n_active
            elif a != best:
                q_avg[a] -= q_avg[a] / k
        gnorm = 0.0
        for a in range(K):
            for x in range(D):
                if abs(grad[a, x]) > gnorm:
                    gnorm = abs(grad[a, x])
        if gnorm == 0.0 or not np.isfinite(gnorm):
            break
        eta = step / (gnorm * math.sqrt(k + k0))
        for x in range(D):
            top = grad[0, x]
            for a in range(1, K):
                if grad[a, x] > top:
                    top = grad[a, x]
            s = 0.0
            for a in range(K):
                w[a, x] *= math.exp(eta * (grad[a, x] - top))
                s += w[a, x]
            for a in range(K):
                w[a, x] /= s
        for a in range(K):
            for x in range(D):
                w_bar[a, x] += (w[a, x] - w_bar[a, x]) / (k + 1)
        m_bar = _evaluate(mu, zeta, w_bar, best, costs, g_best, g_ch, lam_b, lam_c)
        if m_bar > m_out:
            m_out = m_bar
            w_out[:, :] = w_bar
        gap = _dual_bound(mu, zeta, best, q_avg, lam_b, lam_c) - m_bar
        if gap <= tol * m_bar:
            break
        if abs(m_bar - prev) <= tol * abs(m_bar):
            calm += 1
        else:
            calm = 0
        prev = m_bar
        if calm >= patience:
            break
    return w_out, m_out, k, gnorm, gap, q_avg


def _clamped(instance: BernoulliInstance, kappa: float) -> np.ndarray:
    return np.clip(instance.cond_means, kappa, 1.0 - kappa)


def check_allocation(w, num_arms: int, num_contexts: int, atol: float = 1e-10) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (num_arms, num_contexts):
        raise ValueError(f"allocation has shape {w.shape}, expected {(num_arms, num_contexts)}")
    if np.any(w < 0.0):
        raise ValueError("allocation weights must be nonnegative")
    sums = w.sum(axis=0)
    if np.any(np.abs(sums - 1.0) > atol):
        raise ValueError(f"allocation columns sum to {sums}, not 1")
    return w


def uniform_allocation(num_arms: int, num_contexts: int) -> np.ndarray:
    return np.full((num_arms, num_contexts), 1.0 / num_arms)


@dataclass
class AlternativeSolution:
    challenger: int
    lam_best: np.ndarray
    lam_challenger: np.ndarray
    gamma: float
    cost: float
    residual: float


@dataclass
class AllocationResult:
    best_arm: int
    allocation: np.ndarray
    characteristic_time: float
    costs: np.ndarray
    iterations: int
    grad_norm: float
    duality_gap: float
    converged: bool
    dominance_violations: list

    @property
    def value(self) -> float:
        """``max_w min_a L_a(w)``, the inverse characteristic time."""
        return 1.0 / self.characteristic_time


def pairwise_cost(
    instance: BernoulliInstance, challenger: int, allocation, kappa: float = KAPPA
) -> AlternativeSolution:
    """Transportation cost of moving ``challenger`` level with the best arm."""
    best = instance.best_arm
    if challenger == best:
        raise ValueError("challenger must differ from the best arm")
    if not 0 <= challenger < instance.num_arms:
        raise ValueError(f"no arm {challenger}")
    w = check_allocation(allocation, instance.num_arms, instance.num_contexts)
    mu = _clamped(instance, kappa)
    zeta = instance.context_probs
    return _solve_pair(mu[best], mu[challenger], zeta, zeta * w[best], zeta * w[challenger], challenger)


def _solve_pair(mu_hi, mu_lo, zeta, v_hi, v_lo, challenger=-1):
    lam_hi = np.empty(mu_hi.size)
    lam_lo = np.empty(mu_hi.size)
    cost, gamma, res = _project(
        np.ascontiguousarray(mu_hi, dtype=float),
        np.ascontiguousarray(mu_lo, dtype=float),
        np.ascontiguousarray(zeta, dtype=float),
        np.ascontiguousarray(v_hi, dtype=float),
        np.ascontiguousarray(v_lo, dtype=float),
        lam_hi,
        lam_lo,
        1e-13,
    )
    return AlternativeSolution(challenger, lam_hi, lam_lo, gamma, cost, res)


def min_pairwise_cost(instance: BernoulliInstance, allocation, kappa: float = KAPPA) -> float:
    """``m(w) = min_a L_a(w)``: the quantity maximised by the optimal allocation."""
    w = check_allocation(allocation, instance.num_arms, instance.num_contexts, atol=1e-8)
    mu = _clamped(instance, kappa)
    K, D = mu.shape
    buf = np.zeros((K, D))
    return _evaluate(
        mu, instance.context_probs, w, _best_arm(mu, instance.context_probs),
        np.empty(K), buf.copy(), buf.copy(), buf.copy(), buf.copy(),
    )


def characteristic_time(
    instance: BernoulliInstance,
    tolerance: float = 1e-6,
    max_iter: int = 10_000,
    init=None,
    step: float = 1.0,
    kappa: float = KAPPA,
    step_offset: int = 0,
) -> AllocationResult:
    """Solve ``1/T* = max_w min_a L_a(w)`` by exponentiated-gradient ascent.

    Starts from the uniform allocation unless ``init`` is given. Stops when
    the certified duality gap or the change of the averaged objective over
    consecutive iterations drops below ``tolerance``, or after ``max_iter``
    iterations. The best allocation evaluated along the way is returned.
    ``step_offset`` shifts the ``step / sqrt(k)`` schedule, for warm starts.
    """
    mu = _clamped(instance, kappa)
    zeta = np.ascontiguousarray(instance.context_probs)
    marg = mu @ zeta
    order = np.sort(marg)
    if not order[-1] - order[-2] > 0.0:
        raise InstanceError("clamped instance has no unique best arm")
    K, D = mu.shape
    w0 = uniform_allocation(K, D) if init is None else check_allocation(init, K, D, atol=1e-8)
    w, m, iters, gnorm, gap, q = _ascend(
        mu, zeta, np.ascontiguousarray(w0, dtype=float), float(tolerance), int(max_iter),
        float(step), 5, float(step_offset),
    )
    w = w / w.sum(axis=0, keepdims=True)
    best = int(np.argmax(marg))
    costs = np.empty(K)
    buf = np.zeros((K, D))
    lam_b, lam_c = buf.copy(), buf.copy()
    value = _evaluate(mu, zeta, w, best, costs, buf.copy(), buf.copy(), lam_b, lam_c)
    gap = _tighten_dual(mu, zeta, best, lam_b, lam_c, q, 2000) - value
    violations = [
        a for a in range(K) if a != best and not np.any(mu[best] > mu[a])
    ]
    return AllocationResult(
        best_arm=best,
        allocation=w,
        characteristic_time=math.inf if value <= 0.0 else 1.0 / value,
        costs=costs,
        iterations=int(iters),
        grad_norm=float(gnorm),
        duality_gap=float(gap),
        converged=bool(iters < max_iter),
        dominance_violations=violations,
    )


def allocation_set_distance(w, reference_set_samples) -> float:
    """Distance from ``w`` to a sampled set: min over samples of the max-coordinate gap."""
    samples = list(reference_set_samples)
    if not samples:
        raise ValueError("reference set is empty")
    w = np.asarray(w, dtype=float)
    return float(min(np.max(np.abs(w - np.asarray(s, dtype=float))) for s in samples))


ORACLE_MAX_CONTEXTS = 3
ORACLE_MAX_ARMS = 4
ORACLE_MAX_POINTS = 5_000_000


def _side_table(mu_row, v_row, zeta, grid):
    """Every grid vector of one arm: its constraint level and weighted kl cost."""
    D = mu_row.size
    mesh = np.meshgrid(*([grid] * D), indexing="ij")
    level = np.zeros(mesh[0].shape)
    cost = np.zeros(mesh[0].shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        for x in range(D):
            lam = mesh[x]
            level += zeta[x] * lam
            if v_row[x] > 0.0:
                m = mu_row[x]
                term = np.zeros_like(lam)
                if m > 0.0:
                    term += m * np.log(m / lam)
                if m < 1.0:
                    term += (1.0 - m) * np.log((1.0 - m) / (1.0 - lam))
                term[lam == m] = 0.0
                cost += v_row[x] * term
    return level.ravel(), cost.ravel()


def brute_force_oracle(
    instance: BernoulliInstance, w, challenger: int, lam_grid_step: float = 1e-3,
    kappa: float = KAPPA,
) -> float:
    """Exhaustive grid search for the pairwise transportation cost.

    Every grid vector of each arm is enumerated; vectors are bucketed by
    their constraint level (bucket width ``lam_grid_step / 2``) and the two
    arms are paired within a bucket, so the equality holds to that slack.
    """
    K, D = instance.num_arms, instance.num_contexts
    if D > ORACLE_MAX_CONTEXTS or K > ORACLE_MAX_ARMS:
        raise ValueError(
            f"oracle limited to {ORACLE_MAX_CONTEXTS} contexts and {ORACLE_MAX_ARMS} arms"
        )
    n = int(round(1.0 / lam_grid_step)) + 1
    if n**D > ORACLE_MAX_POINTS:
        raise ValueError(f"grid of {n}^{D} points is too large; use a coarser step")
    w = check_allocation(w, K, D)
    best = instance.best_arm
    if challenger == best:
        raise ValueError("challenger must differ from the best arm")
    mu = _clamped(instance, kappa)
    zeta = instance.context_probs
    grid = np.linspace(0.0, 1.0, n)
    slack = lam_grid_step / 2.0

    def bucket_min(level, cost):
        keys = np.floor(level / slack + 1e-9).astype(np.int64)
        order = np.lexsort((cost, keys))
        keys, cost = keys[order], cost[order]
        first = np.ones(keys.size, dtype=bool)
        first[1:] = keys[1:] != keys[:-1]
        return keys[first], cost[first]

    k1, c1 = bucket_min(*_side_table(mu[best], zeta * w[best], zeta, grid))
    ka, ca = bucket_min(*_side_table(mu[challenger], zeta * w[challenger], zeta, grid))
    common, i1, ia = np.intersect1d(k1, ka, assume_unique=True, return_indices=True)
    if common.size == 0:
        return math.inf
    return float(np.min(c1[i1] + ca[ia]))
