"""Detection and estimation metrics, and the group-lasso tracking objective."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "MetricRecord",
    "DetectionRates",
    "group_lasso_obj",
    "detection_rates",
    "channel_mse",
]


@dataclass
class MetricRecord:
    trial: int
    iteration: int
    error_prob: float
    false_alarm: float
    missed_detection: float
    mse_active: float | None
    mse_effective: float
    f_obj: float
    tau_mean: float
    wall_time_us: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


class DetectionRates(NamedTuple):
    error_prob: float
    false_alarm: float
    missed_detection: float
    # False when the denominator (#inactive / #active) was zero and the rate is reported as 0
    false_alarm_defined: bool = True
    missed_detection_defined: bool = True


def group_lasso_obj(Y, A, X) -> float:
    """``0.5 ||Y - A X||_F^2 + sum_i ||X_i,:||_2``."""
    R = Y - A @ X
    return float(0.5 * np.vdot(R, R).real + np.linalg.norm(X, axis=1).sum())


def detection_rates(a_hat, a) -> DetectionRates:
    a_hat = np.asarray(a_hat).astype(bool)
    a = np.asarray(a).astype(bool)
    if a_hat.shape != a.shape:
        raise ValueError("activity vectors differ in length")
    n_act = int(a.sum())
    n_inact = a.size - n_act
    err = float(np.mean(a_hat != a)) if a.size else 0.0
    fa = float(np.sum(a_hat & ~a)) / n_inact if n_inact else 0.0
    md = float(np.sum(~a_hat & a)) / n_act if n_act else 0.0
    return DetectionRates(err, fa, md, n_inact > 0, n_act > 0)


def channel_mse(H_hat, H, a):
    """Per-coefficient MSEs ``(mse_active, mse_effective)``.

    ``H_hat`` is the reported estimate, already zero for devices declared
    inactive; ``H`` the true tap channels. Both are (N, P, M) or (N*P, M).
    ``mse_active`` averages over truly active devices (a missed device counts
    with its full channel energy) and is ``None`` when there are none.
    """
    a = np.asarray(a).astype(bool)
    N = a.size
    H = np.asarray(H).reshape(N, -1)
    H_hat = np.asarray(H_hat).reshape(N, -1)
    coeffs = H.shape[1]
    err_rows = np.sum(np.abs(H - H_hat) ** 2, axis=1)
    mse_act = float(err_rows[a].mean() / coeffs) if a.any() else None
    X = np.where(a[:, None], H, 0)
    mse_eff = float(np.sum(np.abs(X - H_hat) ** 2) / (N * coeffs))
    return mse_act, mse_eff
