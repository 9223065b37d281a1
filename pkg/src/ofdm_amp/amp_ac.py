"""AMP-A-AC: activity detection with MMSE estimation of the actual channels.

Unlike AMP-A-EC, the channel estimate ``H_hat`` is a plain Wiener shrinkage
of the pseudo-observations and activity enters only through the device
beliefs ``lambda_hat``. Activity decisions threshold ``theta`` at zero and the
surrogate ``a_hat * H_hat`` is min-tracked under the group-lasso objective.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

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
from .denoiser import log_density_ratio, prior_logodds
from .metrics import group_lasso_obj

__all__ = [
    "AcState",
    "NumericalAbort",
    "ac_init",
    "ac_iterate",
    "ac_track_best",
    "ac_run",
]


@dataclass
class AcState:
    H_hat: np.ndarray  # (N*P, M)
    lambda_hat: np.ndarray  # (N,)
    Z_tilde: np.ndarray  # (L, M)
    tau_hat: np.ndarray  # (M,)
    theta: np.ndarray  # (N,)
    a_hat: np.ndarray  # (N,), decisions of the latest iterate
    a_best: np.ndarray
    H_best: np.ndarray
    f_best: float
    t: int = 0
    t_best: int = 0
    f_last: float = math.nan
    onsager: np.ndarray = None
    obj_scale: float = 1.0


def ac_init(Y, N: int, P: int, rho: float, obj_scale: float = 1.0) -> AcState:
    """Zero channel estimate, residual ``Y``, beliefs at the prior ``rho``."""
    Y = np.asarray(Y, dtype=complex)
    L, M = Y.shape
    H0 = np.zeros((N * P, M), dtype=complex)
    theta0 = np.full(N, float(prior_logodds(rho)))
    return AcState(
        H_hat=H0,
        lambda_hat=expit(theta0),
        Z_tilde=Y.copy(),
        tau_hat=np.zeros(M),
        theta=theta0,
        a_hat=np.zeros(N, dtype=np.int64),
        a_best=np.zeros(N, dtype=np.int64),
        H_best=H0.copy(),
        f_best=0.5 * float(np.vdot(Y, Y).real) / obj_scale**2,
        obj_scale=obj_scale,
    )


def ac_iterate(state: AcState, A, Y, beta_eff, rho) -> AcState:
    """One AMP-A-AC update, in place; returns ``state``."""
    beta = np.asarray(beta_eff, dtype=float)
    N = beta.size
    L, M = Y.shape
    P = state.H_hat.shape[0] // N
    t_next = state.t + 1

    tau = residual_variance(state.Z_tilde)
    if np.any(tau <= 0):
        raise NumericalAbort(t_next, "tau_hat", (int(np.argmin(tau)),))

    R = state.lambda_hat[:, None, None] * state.H_hat.reshape(N, P, M)
    R = R + (A.conj().T @ state.Z_tilde).reshape(N, P, M)
    b = beta[:, None, None]
    theta = float(prior_logodds(rho)) + log_density_ratio(R, tau, b).sum(axis=(1, 2))
    ensure_finite(theta, t_next, "theta", allow_neginf=True)
    lam = expit(theta)
    shrink = beta[:, None] / (tau[None, :] + beta[:, None])  # (N, M)
    H_new = (shrink[:, None, :] * R).reshape(N * P, M)
    onsager = P * (lam[:, None] * shrink).sum(axis=0) / L
    Z_new = Y - A @ (np.repeat(lam, P)[:, None] * H_new) + state.Z_tilde * onsager
    ensure_finite(H_new, t_next, "H_hat")
    ensure_finite(Z_new, t_next, "Z_tilde")

    state.tau_hat = tau
    state.theta = theta
    state.lambda_hat = lam
    state.a_hat = detect(theta)
    state.H_hat = H_new
    state.Z_tilde = Z_new
    state.onsager = onsager
    state.t = t_next
    return state


def ac_track_best(state: AcState, A, Y) -> AcState:
    """Min-track ``(a_hat, H_hat)`` under the objective of ``a_hat * H_hat``."""
    N = state.a_hat.size
    P = state.H_hat.shape[0] // N
    s = state.obj_scale
    X = mask_rows(state.H_hat, state.a_hat, P)
    f = group_lasso_obj(Y / s, A, X / s)
    state.f_last = f
    if f < state.f_best:
        state.f_best = f
        state.a_best = state.a_hat.copy()
        state.H_best = state.H_hat.copy()
        state.t_best = state.t
    return state


def _outputs(state: AcState, P, tracking):
    if tracking:
        return state.a_best.copy(), mask_rows(state.H_best, state.a_best, P)
    return state.a_hat.copy(), mask_rows(state.H_hat, state.a_hat, P)


def ac_run(Y, A, beta_eff, rho, cfg, truth=None, trial: int = 0, timing: bool = False,
           obj_scale: float | None = None, tracking: bool | None = None) -> AmpResult:
    """Run AMP-A-AC; same conventions as ``ec_run``."""
    beta = np.asarray(beta_eff, dtype=float)
    N = beta.size
    P = A.shape[1] // N
    tracking = cfg.tracking_enabled if tracking is None else tracking
    scale = math.sqrt(cfg.sigma2_mw) if obj_scale is None else obj_scale
    state = ac_init(Y, N, P, rho, scale)
    trace = []
    for _ in range(cfg.iterations):
        tau_prev = state.tau_hat
        start = time.perf_counter_ns()
        ac_iterate(state, A, Y, beta, rho)
        ac_track_best(state, A, Y)
        wall = (time.perf_counter_ns() - start) / 1e3 if timing else None
        a_out, X_out = _outputs(state, P, tracking)
        f_obj = state.f_best if tracking else state.f_last
        trace.append(make_record(trial, state.t, a_out, X_out, truth, P, f_obj,
                                 float(np.mean(state.tau_hat)), wall))
        if state.t > 1 and should_stop(tau_prev, state.tau_hat, cfg.stop_tol):
            break
    a_out, X_out = _outputs(state, P, tracking)
    return AmpResult(a_out, extract_channels(X_out, a_out, P), X_out, trace, state, state.t)
