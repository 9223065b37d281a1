import math

import numpy as np
import pytest
from scipy import special

from ofdm_amp.se import (
    SeParams,
    error_prob,
    gate_vector,
    mse_active,
    mse_active_quadrature,
    phi,
    phi_quadrature,
    predict,
    reg_gamma,
    se_step,
    tau_init,
)

BETA = 3.73e-11
SIGMA2 = 3.82e-12


def desk(L=64, rho=0.1, M=8):
    return SeParams(N=200, P=2, L=L, M=M, rho=rho, beta=BETA, sigma2=SIGMA2)


def scalar_detector(tau, PM, beta, rho, n, rng):
    """Simulate r = a h + sqrt(tau) w and apply the ``theta >= 0`` rule; returns error indicators."""
    a = rng.random(n) < rho
    h = math.sqrt(beta / 2) * (rng.standard_normal((n, PM)) + 1j * rng.standard_normal((n, PM)))
    w = math.sqrt(tau / 2) * (rng.standard_normal((n, PM)) + 1j * rng.standard_normal((n, PM)))
    r = a[:, None] * h + w
    theta = (math.log(rho / (1 - rho)) + PM * math.log(tau / (tau + beta))
             + np.sum(np.abs(r) ** 2, axis=1) * (1 / tau - 1 / (tau + beta)))
    return (theta >= 0) != a


# -- incomplete gamma ----------------------------------------------------------------

def test_reg_gamma_special_values():
    for x in (0.0, 0.3, 1.0, 7.5, 40.0):
        p, q = reg_gamma(1.0, x)
        assert p == pytest.approx(-math.expm1(-x), rel=1e-13, abs=1e-300)
    assert reg_gamma(5.0, 0.0) == (0.0, 1.0)
    assert reg_gamma(5.0, math.inf) == (1.0, 0.0)
    with pytest.raises(ValueError):
        reg_gamma(5.0, -1.0)
    with pytest.raises(ValueError):
        reg_gamma(0.0, 1.0)


def test_reg_gamma_against_scipy_and_complementarity():
    for s in np.geomspace(0.5, 512, 25):
        for x in np.linspace(0, 4 * s, 21):
            p, q = reg_gamma(float(s), float(x))
            assert p + q == pytest.approx(1.0, abs=1e-12)
            assert p == pytest.approx(special.gammainc(s, x), abs=1e-12)
            assert q == pytest.approx(special.gammaincc(s, x), abs=1e-12)
            # relative agreement on whichever tail is small
            small, ref = (p, special.gammainc(s, x)) if p < 0.5 else (q, special.gammaincc(s, x))
            if ref > 1e-290:
                assert small == pytest.approx(ref, rel=1e-10)


# -- detector error probability ----------------------------------------------------

def test_error_prob_hand_value():
    # PM=1, rho=1/2, beta=tau: miss P(1, log 2) = 1/2, false alarm Q(1, 2 log 2) = 1/4
    assert error_prob(1.0, 1, 1.0, 0.5) == pytest.approx(0.375, rel=1e-14)


def test_error_prob_decreases_with_pm():
    vals = [error_prob(1.0, pm, 3.0, 0.1) for pm in (1, 2, 4, 8, 16, 32, 64, 128, 256)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert error_prob(1.0, 512, 10.0, 0.1) < 1e-6


def test_error_prob_degenerate_prior():
    assert error_prob(1.0, 4, 1.0, 0.0) == 0.0


def test_error_prob_clamps_negative_arguments():
    # rho > 1/2 makes the miss threshold negative for small PM
    v = error_prob(1.0, 1, 0.2, 0.9)
    assert 0.0 <= v <= 1.0


@pytest.mark.parametrize("tau, PM, beta, rho", [
    (1.0, 1, 1.0, 0.5), (0.5, 4, 2.0, 0.1), (2e-11, 16, 3.7e-11, 0.1), (1.0, 8, 0.5, 0.3),
])
def test_error_prob_matches_scalar_simulation(tau, PM, beta, rho):
    n = 400_000
    err = scalar_detector(tau, PM, beta, rho, n, np.random.default_rng(PM))
    p = error_prob(tau, PM, beta, rho)
    assert abs(err.mean() - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_error_prob_continuous_in_tau():
    for tau in np.geomspace(1e-12, 1e-10, 30):
        p0 = error_prob(tau, 16, BETA, 0.1)
        p1 = error_prob(tau * (1 + 1e-4), 16, BETA, 0.1)
        assert abs(p1 - p0) <= 1e-3 * max(p0, 1e-300) + 1e-300 or abs(p1 - p0) < 1e-3


# -- phi and the active-device MSE -----------------------------------------------------

def test_phi_zero_rho():
    assert phi(1e-11, desk(rho=0.0)) == 0.0
    assert phi_quadrature(1e-11, desk(rho=0.0)) == 0.0


def test_phi_bounded():
    for rho in (0.1, 0.5, 0.9, 1.0):
        p = desk(rho=rho)
        assert 0 <= phi(2e-11, p, samples=20_000) <= rho * BETA + 1e-30


def test_phi_mc_matches_quadrature():
    p = desk()
    tau = 2.7e-11
    n = 200_000
    rng = np.random.default_rng(0)
    # MC standard error from an independent run of the same estimator
    reps = [phi(tau, p, samples=n // 10, seed=s) for s in range(20)]
    se = np.std(reps, ddof=1) / math.sqrt(10)
    assert abs(phi(tau, p, samples=n, seed=123) - phi_quadrature(tau, p)) < 3 * se
    assert rng is not None


def test_phi_rejects_few_samples():
    with pytest.raises(ValueError):
        phi(1e-11, desk(), samples=10)


def test_mse_active_limits():
    assert mse_active(1e-20, 16, BETA, 0.1, samples=5000) < 1e-18
    for tau in (1e-12, 1e-11, 1e-10):
        assert mse_active(tau, 16, BETA, 0.1, samples=5000) >= BETA * tau / (BETA + tau)


@pytest.mark.parametrize("tau, PM", [(2e-12, 4), (1e-11, 16), (3e-11, 8)])
def test_mse_active_matches_scalar_estimator(tau, PM):
    rng = np.random.default_rng(7)
    n = 200_000
    h = math.sqrt(BETA / 2) * (rng.standard_normal((n, PM)) + 1j * rng.standard_normal((n, PM)))
    r = h + math.sqrt(tau / 2) * (rng.standard_normal((n, PM)) + 1j * rng.standard_normal((n, PM)))
    lo = (math.log(0.1 / 0.9) + PM * math.log(tau / (tau + BETA))
          + np.sum(np.abs(r) ** 2, axis=1) * (1 / tau - 1 / (tau + BETA)))
    g = 1 / (1 + np.exp(-lo))
    err = np.mean(np.abs(g[:, None] * BETA / (BETA + tau) * r - h) ** 2, axis=1)
    value, se_model = mse_active(tau, PM, BETA, 0.1, samples=n, seed=3, return_stderr=True)
    se = math.hypot(err.std() / math.sqrt(n), se_model)
    assert abs(err.mean() - value) < 3 * se
    assert mse_active_quadrature(tau, PM, BETA, 0.1) == pytest.approx(err.mean(), abs=3 * se)


def test_gate_vector_range():
    g = gate_vector(np.array([0.0, 1e-11, 1e-9, 1e-6]), 1e-11, BETA, 0.1, 16)
    assert np.all((g >= 0) & (g <= 1)) and np.all(np.diff(g) >= 0)


# -- recursion -----------------------------------------------------------------------

def test_tau_init_desk_value():
    p = desk()
    assert tau_init(p) == pytest.approx(SIGMA2 + 200 * 2 / 64 * 0.1 * BETA, rel=1e-15)
    assert tau_init(p) == pytest.approx(2.71e-11, rel=2e-3)


def test_se_step_without_signal():
    assert se_step(5e-11, desk(rho=0.0), samples=2000) == pytest.approx(SIGMA2, rel=1e-15)


def test_predict_shapes_and_floor():
    pred = predict(desk(), 0, samples=2000)
    assert pred.tau.shape == pred.p_err.shape == pred.mse.shape == (1,)
    assert pred.tau[0] == tau_init(desk())
    pred = predict(desk(L=192), 10, samples=5000)
    assert np.all(pred.tau >= SIGMA2)
    assert np.all(predict(desk(rho=0.0), 5, method="quad").p_err == 0)


def test_predict_converges_when_pilots_are_long():
    pred = predict(desk(L=192), 50, method="quad")
    assert np.all(np.diff(pred.tau[1:]) <= 0)
    assert abs(pred.tau[-1] - pred.tau[-2]) / pred.tau[-1] < 1e-6
    assert np.all(np.diff(pred.p_err[2:]) <= 1e-15)
    assert np.all(np.diff(pred.mse[2:]) <= 1e-25)


def test_predict_deterministic():
    a = predict(desk(), 5, samples=3000, seed=4)
    b = predict(desk(), 5, samples=3000, seed=4)
    assert np.array_equal(a.tau, b.tau) and np.array_equal(a.mse, b.mse)
