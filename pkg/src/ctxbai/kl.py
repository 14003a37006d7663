"""Bernoulli KL divergence and the exploration thresholds built on it.

All logarithms are natural. Divergences that are infinite (support
mismatch) are returned as ``math.inf``.
"""
from __future__ import annotations

import math

from numba import njit


@njit(cache=True)
def _kl(mu, lam):
    if mu == lam:
        return 0.0
    if lam <= 0.0 or lam >= 1.0:
        return math.inf
    out = 0.0
    if mu > 0.0:
        out += mu * math.log(mu / lam)
    if mu < 1.0:
        out += (1.0 - mu) * math.log((1.0 - mu) / (1.0 - lam))
    # rounding can push tiny values below zero
    return out if out > 0.0 else 0.0


@njit(cache=True)
def _kl_prime(mu, lam):
    return (lam - mu) / (lam * (1.0 - lam))


def _check_probability(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return value


def bernoulli_kl(mu: float, lam: float) -> float:
    """KL divergence between Bernoulli(mu) and Bernoulli(lam), in nats.

    Uses ``kl(0, 0) = kl(1, 1) = 0`` and returns ``inf`` when ``lam`` is
    0 or 1 and ``mu`` differs from it.
    """
    return _kl(_check_probability("mu", mu), _check_probability("lam", lam))


def bernoulli_kl_derivative(mu: float, lam: float) -> float:
    """Partial derivative of :func:`bernoulli_kl` in its second argument."""
    mu = _check_probability("mu", mu)
    lam = float(lam)
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lam must lie strictly inside (0, 1), got {lam!r}")
    return _kl_prime(mu, lam)


def binary_relative_entropy(delta: float, one_minus_delta: float) -> float:
    """``kl(delta, 1 - delta)``, the confidence factor of the lower bound."""
    return bernoulli_kl(delta, one_minus_delta)


def cts_threshold(t: int, delta: float, num_arms: int) -> float:
    """Stopping threshold ``log(2 t (K - 1) / delta)`` for the contextual GLRT."""
    if t < 1:
        raise ValueError("t must be a positive integer")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if num_arms < 2:
        raise ValueError("need at least two arms")
    return _cts_threshold(t, delta, num_arms)


def elimination_threshold(t: int, delta: float) -> float:
    """Exploration rate ``log(t / delta) + 2 log log(6 t)`` of alpha-elimination."""
    if t < 1:
        raise ValueError("t must be a positive integer")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    return _elimination_threshold(t, delta)


@njit(cache=True)
def _cts_threshold(t, delta, num_arms):
    return math.log(2.0 * t * (num_arms - 1) / delta)


@njit(cache=True)
def _elimination_threshold(t, delta):
    return math.log(t / delta) + 2.0 * math.log(math.log(6.0 * t))
