"""Pieces shared by the two AMP variants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import MetricRecord, channel_mse, detection_rates


class NumericalAbort(ArithmeticError):
    """An AMP iterate produced a non-finite value or a non-positive variance."""

    def __init__(self, iteration: int, quantity: str, index: tuple):
        self.iteration = iteration
        self.quantity = quantity
        self.index = index
        super().__init__(f"invalid {quantity} at iteration {iteration}, entry {index}")


@dataclass
class AmpResult:
    a_hat: np.ndarray
    channels: dict  # device index -> (P, M) estimate, detected devices only
    X_out: np.ndarray  # (N*P, M) reported estimate, zero rows for undetected devices
    trace: list = field(default_factory=list)
    state: object = None
    iterations_run: int = 0


def ensure_finite(arr, iteration, quantity, allow_neginf=False):
    bad = np.isnan(arr) if allow_neginf else ~np.isfinite(arr)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NumericalAbort(iteration, quantity, idx)


def residual_variance(Z):
    """Per-antenna residual variance ``(1/L) sum_l |Z_lm|^2``."""
    return np.mean(Z.real**2 + Z.imag**2, axis=0)


def detect(theta) -> np.ndarray:
    """Activity decisions; ``theta == 0`` counts as active."""
    return (np.asarray(theta) >= 0).astype(np.int64)


def extract_channels(X, a_hat, P) -> dict:
    rows = np.asarray(X).reshape(len(a_hat), P, -1)
    return {int(n): rows[n].copy() for n in np.flatnonzero(a_hat)}


def mask_rows(X, a_hat, P):
    return np.repeat(np.asarray(a_hat).astype(bool), P)[:, None] * X


def should_stop(tau_prev, tau_next, tol) -> bool:
    if tol is None:
        return False
    prev = float(np.mean(tau_prev))
    return abs(float(np.mean(tau_next)) - prev) / prev < tol


def make_record(trial, t, a_out, X_out, truth, P, f_obj, tau_mean, wall_us) -> MetricRecord:
    if truth is None:
        nan = math.nan
        return MetricRecord(trial, t, nan, nan, nan, None, nan, f_obj, tau_mean, wall_us)
    a_true, H_true = truth
    rates = detection_rates(a_out, a_true)
    mse_act, mse_eff = channel_mse(X_out.reshape(len(a_true), P, -1), H_true, a_true)
    return MetricRecord(trial, t, rates.error_prob, rates.false_alarm, rates.missed_detection,
                        mse_act, mse_eff, f_obj, tau_mean, wall_us)
