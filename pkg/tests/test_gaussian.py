import math

import numpy as np
import pytest

from ctxbai.gaussian import (
    ResidualEstimatorState,
    efficiency_gain,
    elimination_alpha,
    gain_grid,
    gaussian_characteristic_time,
    residual_update,
    run_alpha_elimination,
)
from ctxbai.kl import elimination_threshold
from ctxbai.model import GaussianTwoArmInstance, SeededStream


def inst(rho1=0.0, rho2=0.0, s1=1.0, s2=1.0, mu_x=0.0, sigma_x=1.0):
    return GaussianTwoArmInstance(1.0, 0.0, s1, s2, mu_x=mu_x, sigma_x=sigma_x, rho1=rho1, rho2=rho2)


def test_characteristic_time():
    assert gaussian_characteristic_time(inst()) == 8.0
    assert gaussian_characteristic_time(inst(0.9, 0.9)) == pytest.approx(1.52, abs=1e-12)
    g = GaussianTwoArmInstance(2.0, 0.5, 1.5, 0.5)
    assert gaussian_characteristic_time(g) == pytest.approx(2 * 4 / 2.25)


def test_gain_values():
    assert efficiency_gain(0, 0) == 0.0
    assert efficiency_gain(0.9, 0.9) == pytest.approx(0.81, abs=1e-12)
    assert efficiency_gain(0.5, 0.0) == pytest.approx(1 - ((math.sqrt(0.75) + 1) / 2) ** 2, rel=1e-14)
    assert efficiency_gain(0.5, 0.0) == pytest.approx(0.12948729810778068, rel=1e-14)


def test_gain_symmetries():
    rng = np.random.default_rng(0)
    for r1, r2 in rng.uniform(-0.99, 0.99, size=(100, 2)):
        assert efficiency_gain(r1, r2) == efficiency_gain(r2, r1)
        assert efficiency_gain(r1, r2, 2.0, 0.5) == efficiency_gain(-r1, -r2, 2.0, 0.5)


def test_gain_grid_monotone():
    rhos, g = gain_grid(101)
    assert g.shape == (101, 101)
    assert np.all(np.diff(g, axis=0) >= 0) and np.all(np.diff(g, axis=1) >= 0)
    with pytest.raises(ValueError):
        efficiency_gain(1.1, 0.0)


def test_residual_update_trivial():
    st = ResidualEstimatorState()
    residual_update(st, 0, 3.0, 1.7, inst())
    assert st.sums[0] == 1.7
    st = ResidualEstimatorState()
    residual_update(st, 1, 0.5, 1.7, inst(0.9, 0.7, mu_x=0.5))
    assert st.sums[1] == 1.7 and st.counts[1] == 1
    with pytest.raises(ValueError):
        residual_update(st, 2, 0.0, 0.0, inst())


def test_residual_variance():
    g = inst(0.8, 0.0, s1=1.5, sigma_x=2.0, mu_x=1.0)
    n = 10**6
    z = SeededStream(3).normal((n, 2))
    x = g.mu_x + g.sigma_x * z[:, 0]
    r = g.means[0] + g.slopes[0] * (x - g.mu_x) + g.cond_stds[0] * z[:, 1]
    res = r - g.slopes[0] * (x - g.mu_x)
    var = g.sigmas[0] ** 2 * (1 - 0.8**2)
    assert abs(res.var() - var) <= 5 * var * math.sqrt(2 / n)


def test_residual_unbiased():
    g = inst(0.7, -0.4)
    reps, length = 10**5, 20
    z = SeededStream(5).normal((reps, length, 2))
    x = z[..., 0]
    r = g.means[1] + g.slopes[1] * x + g.cond_stds[1] * z[..., 1]
    est = (r - g.slopes[1] * x).mean(axis=1)
    assert abs(est.mean() - g.means[1]) <= 5 * est.std() / math.sqrt(reps)


def test_alpha_and_schedule():
    g = inst(0.5, 0.5)
    assert elimination_alpha(g) == 0.5
    res = run_alpha_elimination(g, 0.05, stream=SeededStream(0))
    n0, n1 = res.arm_counts
    assert n0 == math.ceil(0.5 * res.tau)
    g2 = inst(0.3, 0.9, s1=2.0)
    a = elimination_alpha(g2)
    assert a == pytest.approx(g2.cond_stds[0] / sum(g2.cond_stds))
    for k in range(20):
        r = run_alpha_elimination(g2, 0.05, stream=SeededStream(1, k))
        assert r.arm_counts[0] == math.ceil(a * r.tau)
    assert elimination_alpha(g2, use_context=False) == pytest.approx(2 / 3)


def test_stopping_rule_trace():
    g = inst(0.6, 0.2)
    res = run_alpha_elimination(g, 0.05, stream=SeededStream(2), record_trace=True)
    s1, s2 = g.cond_stds
    a = res.alpha
    for t in range(2, res.tau + 1):
        n0 = math.ceil(a * t)
        width = math.sqrt(2 * (s1**2 / n0 + s2**2 / (t - n0)) * elimination_threshold(t, 0.05))
        stop = abs(res.d[t - 1]) > width
        assert stop == (t == res.tau)
    assert np.isnan(res.d[0])


def test_pac_and_faster_with_context():
    base = inst()
    corr = inst(0.9, 0.5)
    taus_b, taus_c, errs = [], [], 0
    for k in range(1000):
        rb = run_alpha_elimination(base, 0.05, stream=SeededStream(7, k))
        rc = run_alpha_elimination(corr, 0.05, stream=SeededStream(7, k))
        errs += rb.recommended != 0
        taus_b.append(rb.tau)
        taus_c.append(rc.tau)
    assert errs / 1000 <= 0.05
    assert np.mean(taus_c) < np.mean(taus_b)


def test_validation():
    with pytest.raises(ValueError):
        run_alpha_elimination(inst(), 1.0)
    with pytest.raises(ValueError):
        efficiency_gain(0, 0, -1, 1)


def test_truncation():
    res = run_alpha_elimination(inst(), 0.05, max_rounds=3, stream=SeededStream(0))
    assert res.truncated and res.tau == 3
