"""Quick self-checks against independent reference computations.

Each suite returns ``(name, passed, detail)``. They are smaller versions of
the checks in the test-suite and are meant to be run on a fresh install.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .denoiser import eta, eta_prime, posterior_moments_quadrature
from .model import (
    SystemConfig,
    build_measurement_matrix,
    effective_channels,
    gen_activities,
    gen_channels,
    gen_distances,
    gen_pilots,
    draw_noise,
    synthesize_received,
    synthesize_received_circulant,
)
from .se import SeParams, error_prob, phi, phi_quadrature, reg_gamma

__all__ = ["check_model", "check_denoiser", "check_se", "run_all"]


def check_model(realizations: int = 20, seed: int = 0):
    """Linear model ``A X + N`` against per-subcarrier circular convolution."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(realizations):
        K = int(rng.choice([4, 8, 16]))
        cfg = SystemConfig(N=int(rng.integers(2, 21)), K=K, L=K * int(rng.integers(1, 4)),
                           M=int(rng.integers(1, 5)), P=int(rng.integers(1, min(4, K) + 1)), rho=0.5)
        pilots = gen_pilots(cfg, rng)
        A = build_measurement_matrix(pilots, cfg.P)
        H, _ = gen_channels(cfg, gen_distances(cfg, rng), rng)
        a = gen_activities(cfg, rng)
        noise = draw_noise((cfg.L, cfg.M), cfg.sigma2_mw, rng)
        y_lin = synthesize_received(A, effective_channels(H, a), noise=noise)
        y_circ = synthesize_received_circulant(pilots, H, a, noise)
        worst = max(worst, np.linalg.norm(y_lin - y_circ) / np.linalg.norm(y_circ))
        worst = max(worst, float(np.max(np.abs(np.linalg.norm(A, axis=0) - 1.0))))
    return "model equivalence", worst < 1e-9, f"max relative error {worst:.2e}"


def check_denoiser(tuples: int = 200, seed: int = 0):
    """Closed-form posterior moments against numerical integration."""
    rng = np.random.default_rng(seed)
    beta = 10.0 ** rng.uniform(-12, -9, tuples)
    y = beta * 10.0 ** rng.uniform(-3, 3, tuples)
    z = rng.uniform(0.01, 0.99, tuples)
    x = np.sqrt((beta + y) / 2) * (rng.standard_normal(tuples) + 1j * rng.standard_normal(tuples))
    m_q, v_q = posterior_moments_quadrature(x, y, z, beta)
    m = eta(x, y, z, beta)
    v = y * eta_prime(x, y, z, beta)
    scale = np.sqrt(beta)
    e_mean = float(np.max(np.abs(m - m_q) / np.maximum(np.abs(m_q), 1e-3 * scale)))
    e_var = float(np.max(np.abs(v - v_q) / v_q))
    ok = e_mean < 1e-7 and e_var < 1e-6
    return "denoiser quadrature", ok, f"mean {e_mean:.1e}, variance {e_var:.1e}"


def check_se(seed: int = 0):
    """Incomplete gamma against scipy and Monte Carlo against quadrature for the SE term."""
    err = 0.0
    for s in (0.5, 3.0, 16.0, 128.0):
        for x in (0.1 * s, s, 2.0 * s):
            p, q = reg_gamma(s, x)
            err = max(err, abs(p - special.gammainc(s, x)), abs(q - special.gammaincc(s, x)))
    params = SeParams(N=200, P=2, L=192, M=8, rho=0.1, beta=3.7e-11, sigma2=3.8e-12)
    tau = 2.7e-11  # phi is dominated by rare events at much smaller tau
    mc, quad = phi(tau, params, samples=200_000, seed=seed), phi_quadrature(tau, params)
    rel = abs(mc - quad) / quad
    pe = error_prob(1.0, 1, 1.0, 0.5)
    ok = err < 1e-12 and rel < 0.03 and math.isclose(pe, 0.375, rel_tol=1e-12)
    return "state evolution", ok, f"gamma {err:.1e}, phi MC/quad {rel:.1e}"


def run_all():
    return [check_model(), check_denoiser(), check_se()]
