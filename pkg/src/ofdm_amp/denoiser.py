"""Bernoulli-Gaussian MMSE denoiser and log-domain density utilities.

A coefficient ``x`` equals zero with probability ``1 - z`` and is ``CN(0, beta)``
otherwise; it is observed as ``r = x + CN(0, y)``. ``eta`` returns the posterior
mean and ``y * eta_prime`` the posterior variance.

All density ratios are formed as differences of log-densities: with mW-scale
variances (~1e-11) the raw densities overflow.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_expit

__all__ = [
    "log_cn0",
    "prior_logodds",
    "log_density_ratio",
    "activity_gate",
    "eta",
    "eta_prime",
    "eta_from_logodds",
    "eta_prime_from_logodds",
    "llr_theta",
    "lambda_local",
    "posterior_moments_quadrature",
]


def log_cn0(r, v):
    """``log f_CN(0; r, v) = -log(pi v) - |r|^2 / v``."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ValueError("variance must be positive")
    return -np.log(np.pi * v) - np.abs(r) ** 2 / v


def prior_logodds(z):
    """``log(z / (1 - z))`` with the limits z=0 -> -inf and z=1 -> +inf."""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(z) - np.log1p(-z)


def log_density_ratio(x, y, beta):
    """``log f_CN(0; x, y+beta) - log f_CN(0; x, y)``, the active-vs-inactive evidence.

    Written as ``-log(1 + beta/y) + |x|^2/y * beta/(y+beta)`` so no two large
    terms are subtracted, whichever of ``y`` and ``beta`` dominates.
    """
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    ratio = beta / (y + beta)
    with np.errstate(over="ignore"):
        return -np.log1p(beta / y) + (np.abs(x) ** 2 / y) * ratio


def _check(y, z, beta):
    if np.any(np.asarray(y) <= 0) or np.any(np.asarray(beta) <= 0):
        raise ValueError("y and beta must be positive")
    z = np.asarray(z)
    if np.any((z < 0) | (z > 1)):
        raise ValueError("z must lie in [0, 1]")


def _gate_logodds(x, y, beta, logodds0):
    lo = logodds0 + log_density_ratio(x, y, beta)
    # -inf prior means certain inactivity regardless of the evidence
    return np.where(np.isneginf(logodds0), -np.inf, np.where(np.isposinf(logodds0), np.inf, lo))


def activity_gate(x, y, z, beta):
    """Posterior probability that the coefficient is nonzero."""
    _check(y, z, beta)
    return expit(_gate_logodds(x, y, beta, prior_logodds(z)))


def eta_from_logodds(x, y, beta, logodds0):
    """Posterior mean with the prior activity given as log-odds."""
    g = expit(_gate_logodds(x, y, beta, logodds0))
    return (beta / (y + beta)) * g * x


def eta_prime_from_logodds(x, y, beta, logodds0):
    """``d eta / d x`` (conjugate held fixed) with the prior given as log-odds."""
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    lo = _gate_logodds(x, y, beta, logodds0)
    g = expit(lo)
    shrink = beta / (y + beta)
    # g(1-g) |x|^2 beta / (y (y+beta)), assembled in logs to avoid inf * 0
    with np.errstate(divide="ignore"):
        log_slope = 2.0 * np.log(np.abs(x)) - np.log(y) + np.log(shrink)
    log_term = log_slope + log_expit(lo) + log_expit(-lo)
    with np.errstate(invalid="ignore"):
        term = np.exp(np.where(np.isnan(log_term), -np.inf, log_term))
    return np.maximum(shrink * (g + term), 0.0)


def eta(x, y, z, beta):
    """Bernoulli-Gaussian posterior mean ``(beta/(y+beta)) * g * x``."""
    _check(y, z, beta)
    return eta_from_logodds(x, y, beta, prior_logodds(z))


def eta_prime(x, y, z, beta):
    """Derivative of ``eta`` in ``x``; ``y * eta_prime`` is the posterior variance."""
    _check(y, z, beta)
    return eta_prime_from_logodds(x, y, beta, prior_logodds(z))


def llr_theta(r, tau, beta, rho):
    """Device activity log-odds from pseudo-observations.

    ``r`` has shape (..., P, M) (any trailing layout works as long as ``tau``
    broadcasts against it); the sum runs over the last two axes.
    """
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("tau must be positive")
    beta = np.asarray(beta, dtype=float)
    lr = log_density_ratio(r, tau, beta)
    lr = np.broadcast_to(lr, np.broadcast_shapes(np.shape(r), np.shape(lr)))
    return prior_logodds(rho) + lr.sum(axis=(-2, -1))


def lambda_local(theta, r_pm, tau, beta):
    """Leave-one-element-out activity belief for one coefficient."""
    return expit(np.asarray(theta) - log_density_ratio(r_pm, tau, beta))


def _axis_integrals(c, y, beta, n_nodes):
    """Integrate ``exp(-u^2/beta - (u-c)^2/y)`` times 1, u, (u-m)^2 over the real line.

    The log-integrand is concave; its peak and curvature are located
    numerically and a trapezoid rule on +-40 widths around the peak is used
    (spectrally accurate for smooth rapidly decaying integrands). Returns the
    log of the zeroth moment, the mean and the central second moment.
    """
    def logf(u):
        return -(u**2) / beta - (u - c) ** 2 / y

    # Newton on the concave log-integrand, derivatives taken term by term
    u0 = np.zeros_like(c)
    d2 = -2.0 / beta - 2.0 / y
    for _ in range(3):
        d1 = -2.0 * u0 / beta - 2.0 * (u0 - c) / y
        u0 = u0 - d1 / d2
    width = 1.0 / np.sqrt(-d2)
    t = np.linspace(-40.0, 40.0, n_nodes)
    du_rel = width[..., None] * t
    u = u0[..., None] + du_rel
    b = beta[..., None]
    yy = y[..., None]
    # logf(u) - logf(u0) factored through (u - u0) to keep full precision far from the origin
    lf = -du_rel * (u + u0[..., None]) / b - du_rel * (u + u0[..., None] - 2.0 * c[..., None]) / yy
    w = np.exp(lf)
    du = width * (t[1] - t[0])
    z0 = np.trapezoid(w, dx=1.0, axis=-1) * du
    mean = np.trapezoid(w * u, dx=1.0, axis=-1) * du / z0
    cvar = np.trapezoid(w * (u - mean[..., None]) ** 2, dx=1.0, axis=-1) * du / z0
    return np.log(z0) + logf(u0), mean, cvar


def posterior_moments_quadrature(x, y, z, beta, n_nodes=801):
    """Posterior mean and variance of the Bernoulli-Gaussian coefficient by numerical integration.

    The continuous part ``z f_CN(u; 0, beta) f_CN(u; x, y)`` factorises over
    real and imaginary parts, so it is integrated as two one-dimensional
    integrals; the point mass at zero contributes ``(1-z) f_CN(0; x, y)``.
    Shares no code with ``eta``/``eta_prime``.
    """
    x = np.asarray(x, dtype=complex)
    y = np.broadcast_to(np.asarray(y, dtype=float), x.shape)
    z = np.broadcast_to(np.asarray(z, dtype=float), x.shape)
    beta = np.broadcast_to(np.asarray(beta, dtype=float), x.shape)

    lz_re, m_re, v_re = _axis_integrals(x.real, y, beta, n_nodes)
    lz_im, m_im, v_im = _axis_integrals(x.imag, y, beta, n_nodes)
    with np.errstate(divide="ignore"):
        # log evidence of the continuous branch: z / (pi beta) / (pi y) * integral
        log_w1 = np.log(z) - np.log(np.pi * beta) - np.log(np.pi * y) + lz_re + lz_im
        log_w0 = np.log1p(-z) - np.log(np.pi * y) - np.abs(x) ** 2 / y
    g = expit(log_w1 - log_w0)
    g = np.where(z == 0, 0.0, np.where(z == 1, 1.0, g))
    m_c = m_re + 1j * m_im
    var_c = v_re + v_im
    mean = g * m_c
    # law of total variance over the two branches; every term is nonnegative
    var = g * var_c + g * (1.0 - g) * np.abs(m_c) ** 2
    return mean, var
