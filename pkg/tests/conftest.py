import numpy as np
import pytest

from ctxbai.harness import FOUR_ARM_INSTANCE
from ctxbai.model import BernoulliInstance


@pytest.fixture
def four_arm():
    return FOUR_ARM_INSTANCE


def random_instance(rng, K, D, min_gap=0.02):
    """Random Bernoulli instance with a clear best marginal."""
    while True:
        mu = rng.uniform(0.05, 0.95, size=(K, D))
        zeta = rng.dirichlet(np.ones(D)) if D > 1 else np.ones(1)
        zeta = np.maximum(zeta, 0.05)
        zeta /= zeta.sum()
        zeta[-1] = 1.0 - zeta[:-1].sum()
        marg = np.sort(mu @ zeta)
        if marg[-1] - marg[-2] > min_gap:
            return BernoulliInstance(mu, zeta)


ACCEPTANCE = {}


def record_criterion(number: int, ok: bool, detail: str):
    """Remember one acceptance outcome and fail the calling test if it missed."""
    ACCEPTANCE[number] = (ok, detail)
    assert ok, f"criterion {number}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
