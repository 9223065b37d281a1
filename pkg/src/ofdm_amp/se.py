"""State evolution and closed-form performance predictions for AMP-A-EC.

The state ``tau`` is the per-coordinate variance of the pseudo-observation
noise: in the large-system limit AMP-A-EC sees, for each device,
``r = a h + sqrt(tau) w`` with ``h ~ CN(0, beta I)`` and ``w ~ CN(0, I)`` over
its ``P*M`` coefficients. Only the homogeneous-``beta`` case is covered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats
from scipy.special import expit

from .denoiser import log_density_ratio, prior_logodds

__all__ = [
    "SeParams",
    "SePrediction",
    "reg_gamma",
    "gate_vector",
    "error_prob",
    "phi",
    "phi_quadrature",
    "mse_active",
    "mse_active_quadrature",
    "tau_init",
    "se_step",
    "predict",
]

MIN_SAMPLES = 1000
DEFAULT_SAMPLES = 100_000
_EPS = 1e-16
_TINY = 1e-300


@dataclass(frozen=True)
class SeParams:
    N: int
    P: int
    L: int
    M: int
    rho: float
    beta: float
    sigma2: float

    @property
    def PM(self) -> int:
        return self.P * self.M


@dataclass
class SePrediction:
    tau: np.ndarray
    p_err: np.ndarray
    mse: np.ndarray
    params: SeParams
    mse_stderr: np.ndarray = field(default=None)


# -- regularized incomplete gamma -------------------------------------------

def _gamma_series(s, x):
    """Lower regularized P(s, x) by its power series; converges fast for x < s + 1."""
    term = 1.0 / s
    total = term
    ap = s
    for _ in range(100_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError(f"series for P({s}, {x}) did not converge")
    return total * math.exp(-x + s * math.log(x) - math.lgamma(s))


def _gamma_cfrac(s, x):
    """Upper regularized Q(s, x) by modified Lentz on the continued fraction (x >= s + 1)."""
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 100_000):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError(f"continued fraction for Q({s}, {x}) did not converge")
    return math.exp(-x + s * math.log(x) - math.lgamma(s)) * h


def reg_gamma(s: float, x: float) -> tuple[float, float]:
    """Regularized lower and upper incomplete gamma functions ``(P(s, x), Q(s, x))``.

    ``x = inf`` gives ``(1, 0)``. Negative ``x`` is a domain error; callers
    that may produce one should clamp first.
    """
    if not s > 0:
        raise ValueError(f"s must be positive, got {s}")
    if math.isnan(x) or x < 0:
        raise ValueError(f"x must be non-negative, got {x}")
    if x == 0:
        return 0.0, 1.0
    if math.isinf(x):
        return 1.0, 0.0
    if x < s + 1.0:
        p = _gamma_series(s, x)
        return p, 1.0 - p
    q = _gamma_cfrac(s, x)
    return 1.0 - q, q


# -- detector statistics -----------------------------------------------------

def _log_prior_ratio(rho):
    """log((1 - rho) / rho), +inf at rho = 0."""
    return -float(prior_logodds(rho))


def error_prob(tau, PM, beta, rho):
    """Closed-form activity-detection error probability of the ``theta >= 0`` rule."""
    if not (tau > 0 and beta > 0 and PM >= 1):
        raise ValueError("need tau > 0, beta > 0 and PM >= 1")
    if rho <= 0.0:
        return 0.0
    if rho >= 1.0:
        return 0.0
    lpr = _log_prior_ratio(rho)
    log1p_snr = math.log1p(beta / tau)
    b = (tau / beta) * log1p_snr
    c = ((beta + tau) / beta) * log1p_snr
    miss_arg = max((tau / beta) * lpr + b * PM, 0.0)
    fa_arg = max(((tau + beta) / beta) * lpr + c * PM, 0.0)
    p_miss, _ = reg_gamma(PM, miss_arg)
    _, p_fa = reg_gamma(PM, fa_arg)
    return rho * p_miss + (1.0 - rho) * p_fa


def gate_vector(sq_norm, tau, beta, rho, PM):
    """Vector-level posterior activity given ``||r||^2`` over ``PM`` coordinates."""
    lo = prior_logodds(rho) + PM * math.log(tau / (tau + beta)) + np.asarray(sq_norm) * (
        beta / (tau * (tau + beta))
    )
    return expit(lo)


def _sample_sq_norms(rng, n, PM, var):
    """``||r||^2`` for ``r ~ CN(0, var I_PM)`` drawn coordinate by coordinate."""
    out = np.empty(n)
    chunk = max(1, 2_000_000 // PM)
    for start in range(0, n, chunk):
        k = min(chunk, n - start)
        v = np.asarray(var)[start:start + k] if np.ndim(var) else var
        re = rng.standard_normal((k, PM))
        im = rng.standard_normal((k, PM))
        out[start:start + k] = 0.5 * (re**2 + im**2).sum(axis=1) * v
    return out


def _check_samples(samples):
    if samples < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} Monte Carlo samples, got {samples}")


def phi(tau, params: SeParams, samples: int = DEFAULT_SAMPLES, seed: int = 0) -> float:
    """Monte Carlo estimate of the gate-uncertainty term of the state evolution."""
    _check_samples(samples)
    rho, beta, PM = params.rho, params.beta, params.PM
    if rho <= 0.0:
        return 0.0
    rng = np.random.default_rng(seed)
    active = rng.random(samples) < rho
    sq = _sample_sq_norms(rng, samples, PM, np.where(active, beta + tau, tau))
    g = gate_vector(sq, tau, beta, rho, PM)
    vals = g * (1.0 - g) * sq
    return float(beta**2 / (beta + tau) ** 2 * vals.mean() / PM)


def _gamma_expectation(fn, PM, scale):
    """E[fn(S)] for S ~ Gamma(PM, scale), integrated on the standardized variable."""
    dist = stats.gamma(PM, scale=scale)
    lo, hi = dist.ppf(1e-15), dist.isf(1e-15)
    mode = max(PM - 1.0, 0.0) * scale
    pts = [p for p in (mode,) if lo < p < hi]
    val, _ = integrate.quad(lambda s: fn(s) * dist.pdf(s), lo, hi, points=pts or None,
                            limit=400, epsabs=0.0, epsrel=1e-11)
    return val


def phi_quadrature(tau, params: SeParams) -> float:
    """Same quantity as ``phi`` via 1-D integrals over the Gamma-distributed ``||r||^2``."""
    rho, beta, PM = params.rho, params.beta, params.PM
    if rho <= 0.0:
        return 0.0

    def f(s):
        g = gate_vector(s, tau, beta, rho, PM)
        return g * (1.0 - g) * s

    e_act = _gamma_expectation(f, PM, beta + tau)
    e_inact = _gamma_expectation(f, PM, tau)
    return float(beta**2 / (beta + tau) ** 2 * (rho * e_act + (1 - rho) * e_inact) / PM)


def mse_active(tau, PM, beta, rho, samples: int = DEFAULT_SAMPLES, seed: int = 0,
               return_stderr: bool = False):
    """Per-coefficient channel MSE of an active device, Monte Carlo over ``||r||^2``."""
    _check_samples(samples)
    rng = np.random.default_rng(seed)
    sq = _sample_sq_norms(rng, samples, PM, beta + tau)
    g = gate_vector(sq, tau, beta, rho, PM)
    extra = (1.0 - g) ** 2 * beta**2 / (beta + tau) ** 2 * sq / PM
    value = beta * tau / (beta + tau) + extra.mean()
    if return_stderr:
        return float(value), float(extra.std(ddof=1) / math.sqrt(samples))
    return float(value)


def mse_active_quadrature(tau, PM, beta, rho) -> float:
    def f(s):
        g = gate_vector(s, tau, beta, rho, PM)
        return (1.0 - g) ** 2 * s

    e = _gamma_expectation(f, PM, beta + tau)
    return float(beta * tau / (beta + tau) + beta**2 / (beta + tau) ** 2 * e / PM)


# -- recursion ---------------------------------------------------------------

def tau_init(params: SeParams) -> float:
    return params.sigma2 + params.N * params.P / params.L * params.rho * params.beta


def se_step(tau, params: SeParams, samples: int = DEFAULT_SAMPLES, seed: int = 0,
            method: str = "mc") -> float:
    """One state-evolution update ``tau -> sigma2 + (NP/L)(rho beta tau/(beta+tau) + phi)``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    p = params
    ph = phi_quadrature(tau, p) if method == "quad" else phi(tau, p, samples, seed)
    return p.sigma2 + p.N * p.P / p.L * (p.rho * p.beta * tau / (p.beta + tau) + ph)


def predict(params: SeParams, T: int, samples: int = DEFAULT_SAMPLES, seed: int = 0,
            method: str = "mc") -> SePrediction:
    """Run ``T`` state-evolution steps; entry ``t`` of each sequence belongs to ``tau^(t)``.

    The AMP-A-EC iterate produced by its ``t+1``-th update is formed from
    pseudo-observations with variance ``tau^(t)``.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    taus = [tau_init(params)]
    for t in range(T):
        # distinct sub-seed per step, fixed for a given seed
        taus.append(se_step(taus[-1], params, samples, seed + 7919 * (t + 1), method))
    taus = np.asarray(taus)
    p_err = np.array([error_prob(t, params.PM, params.beta, params.rho) for t in taus])
    if method == "quad":
        mse = np.array([mse_active_quadrature(t, params.PM, params.beta, params.rho) for t in taus])
        err = np.zeros_like(mse)
    else:
        pairs = [mse_active(t, params.PM, params.beta, params.rho, samples, seed + 104729 * (i + 1),
                            return_stderr=True) for i, t in enumerate(taus)]
        mse = np.array([m for m, _ in pairs])
        err = np.array([e for _, e in pairs])
    return SePrediction(taus, p_err, mse, params, err)
