"""AMP-A-EC: activity detection with MMSE estimation of the effective channels.

Each iteration forms pseudo-observations ``R = X_hat + A^H Z``, computes the
device log-odds ``theta`` and the per-coefficient leave-one-out beliefs
``lambda``, applies the Bernoulli-Gaussian denoiser and refreshes the
residual with the Onsager correction. The iterate minimising the group-lasso
objective is kept alongside the raw iterate.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ._common import (
    AmpResult,
    NumericalAbort,
    detect,
    ensure_finite,
    extract_channels,
    make_record,
    mask_rows,
    residual_variance,
    should_stop,
)
from .denoiser import eta_from_logodds, eta_prime_from_logodds, log_density_ratio, prior_logodds
from .metrics import group_lasso_obj

__all__ = [
    "EcState",
    "NumericalAbort",
    "ec_init",
    "ec_iterate",
    "ec_track_best",
    "ec_detect",
    "ec_extract_channels",
    "ec_run",
]


@dataclass
class EcState:
    X_hat: np.ndarray  # (N*P, M)
    Z: np.ndarray  # (L, M)
    tau_hat: np.ndarray  # (M,), residual variance used by the latest update
    theta: np.ndarray  # (N,)
    lam: np.ndarray  # (N, P, M)
    f_best: float
    X_best: np.ndarray
    theta_best: np.ndarray
    t: int = 0
    t_best: int = 0
    f_last: float = math.nan
    # (1/L) * sum_{n,p} eta' per antenna from the latest update
    onsager: np.ndarray = field(default=None)
    obj_scale: float = 1.0


def ec_init(Y, N: int, P: int, rho: float, obj_scale: float = 1.0) -> EcState:
    """Zero estimate, residual ``Y``, prior log-odds, ``f_best = 0.5 ||Y||_F^2``.

    The objective is evaluated on ``Y / obj_scale`` and ``X / obj_scale``.
    """
    Y = np.asarray(Y, dtype=complex)
    L, M = Y.shape
    X0 = np.zeros((N * P, M), dtype=complex)
    theta0 = np.full(N, float(prior_logodds(rho)))
    f0 = 0.5 * float(np.vdot(Y, Y).real) / obj_scale**2
    return EcState(
        X_hat=X0,
        Z=Y.copy(),
        tau_hat=np.zeros(M),
        theta=theta0,
        lam=np.full((N, P, M), float(rho)),
        f_best=f0,
        X_best=X0.copy(),
        theta_best=theta0.copy(),
        obj_scale=obj_scale,
    )


def ec_iterate(state: EcState, A, Y, beta_eff, rho, tau_mode: str = "residual",
               sigma2: float | None = None) -> EcState:
    """One AMP-A-EC update, in place; returns ``state``.

    ``tau_mode="onsager"`` replaces the empirical residual variance by
    ``sigma2 + tau_prev * onsager`` after the first step (cross-check only).
    """
    beta = np.asarray(beta_eff, dtype=float)
    N = beta.size
    L, M = Y.shape
    P = state.X_hat.shape[0] // N
    t_next = state.t + 1

    if tau_mode == "onsager" and state.t > 0:
        if sigma2 is None:
            raise ValueError("tau_mode='onsager' needs sigma2")
        tau = sigma2 + state.tau_hat * state.onsager
    else:
        tau = residual_variance(state.Z)
    if np.any(tau <= 0):
        raise NumericalAbort(t_next, "tau_hat", (int(np.argmin(tau)),))

    R = (state.X_hat + A.conj().T @ state.Z).reshape(N, P, M)
    b = beta[:, None, None]
    lr = log_density_ratio(R, tau, b)
    theta = float(prior_logodds(rho)) + lr.sum(axis=(1, 2))
    ensure_finite(theta, t_next, "theta", allow_neginf=True)
    lam_logit = theta[:, None, None] - lr
    X_new = eta_from_logodds(R, tau, b, lam_logit).reshape(N * P, M)
    onsager = eta_prime_from_logodds(R, tau, b, lam_logit).sum(axis=(0, 1)) / L
    Z_new = Y - A @ X_new + state.Z * onsager
    ensure_finite(X_new, t_next, "X_hat")
    ensure_finite(Z_new, t_next, "Z")

    state.tau_hat = tau
    state.theta = theta
    state.lam = expit(lam_logit)
    state.X_hat = X_new
    state.Z = Z_new
    state.onsager = onsager
    state.t = t_next
    return state


def ec_track_best(state: EcState, A, Y) -> EcState:
    """Keep the iterate with the smallest group-lasso objective (strict improvement only)."""
    s = state.obj_scale
    f = group_lasso_obj(Y / s, A, state.X_hat / s)
    state.f_last = f
    if f < state.f_best:
        state.f_best = f
        state.X_best = state.X_hat.copy()
        state.theta_best = state.theta.copy()
        state.t_best = state.t
    return state


def ec_detect(theta_best) -> np.ndarray:
    return detect(theta_best)


def ec_extract_channels(X_best, a_hat, P: int) -> dict:
    """Estimates of detected devices only, as ``{n: (P, M) array}``."""
    return extract_channels(X_best, a_hat, P)


def _outputs(state: EcState, P, tracking):
    if tracking:
        a_out = ec_detect(state.theta_best)
        return a_out, mask_rows(state.X_best, a_out, P)
    a_out = ec_detect(state.theta)
    return a_out, mask_rows(state.X_hat, a_out, P)


def ec_run(Y, A, beta_eff, rho, cfg, truth=None, trial: int = 0, timing: bool = False,
           obj_scale: float | None = None, tracking: bool | None = None) -> AmpResult:
    """Run AMP-A-EC under ``cfg``'s iteration count and stopping rule.

    ``truth=(a, H)`` fills the error columns of the per-iteration trace.
    ``tracking`` overrides ``cfg.tracking_enabled``; without tracking the raw
    final iterate is reported. The tracking objective is computed in units of
    the noise standard deviation unless ``obj_scale`` is given.
    """
    beta = np.asarray(beta_eff, dtype=float)
    N = beta.size
    P = A.shape[1] // N
    tracking = cfg.tracking_enabled if tracking is None else tracking
    scale = math.sqrt(cfg.sigma2_mw) if obj_scale is None else obj_scale
    state = ec_init(Y, N, P, rho, scale)
    trace = []
    for _ in range(cfg.iterations):
        tau_prev = state.tau_hat
        start = time.perf_counter_ns()
        ec_iterate(state, A, Y, beta, rho)
        ec_track_best(state, A, Y)
        wall = (time.perf_counter_ns() - start) / 1e3 if timing else None
        a_out, X_out = _outputs(state, P, tracking)
        f_obj = state.f_best if tracking else state.f_last
        trace.append(make_record(trial, state.t, a_out, X_out, truth, P, f_obj,
                                 float(np.mean(state.tau_hat)), wall))
        if state.t > 1 and should_stop(tau_prev, state.tau_hat, cfg.stop_tol):
            break
    a_out, X_out = _outputs(state, P, tracking)
    return AmpResult(a_out, ec_extract_channels(X_out, a_out, P), X_out, trace, state, state.t)
