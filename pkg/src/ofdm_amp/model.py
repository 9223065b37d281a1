"""Scenario generation and the time-domain OFDM measurement model.

Everything here works in milliwatts. The received-signal model is

    Y = A X + N,

where ``A`` (L x N*P) stacks, for each device, the first ``P`` columns of the
circulant matrices ``F^H diag(s_qn) F`` over the ``Q`` pilot OFDM symbols,
``X`` holds the effective channels ``a_n * h_npm`` and ``N`` is white complex
Gaussian noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import circulant

__all__ = [
    "ConfigError",
    "SystemConfig",
    "ScenarioInstance",
    "dbm_to_mw",
    "pathloss",
    "crandn",
    "gen_pilots",
    "dft_matrix",
    "build_measurement_matrix",
    "build_measurement_matrix_naive",
    "gen_distances",
    "gen_channels",
    "gen_activities",
    "effective_channels",
    "draw_noise",
    "synthesize_received",
    "synthesize_received_circulant",
    "make_scenario",
]

NOISE_MW = 10.0 ** -11.418


class ConfigError(ValueError):
    """Raised when a configuration violates a model constraint."""


def dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


def pathloss(distance_m, eta_pl=2.85, wavelength_m=0.086):
    """Large-scale fading ``(4 pi d / lambda) ** -eta`` (dimensionless)."""
    d = np.asarray(distance_m, dtype=float)
    return 10.0 ** (-eta_pl * np.log10(4.0 * np.pi * d / wavelength_m))


@dataclass(frozen=True)
class SystemConfig:
    """Scenario parameters.

    ``distance_model`` is either ``("constant", d)`` or ``("uniform", lo, hi)``.
    ``stop_tol`` of ``None`` runs exactly ``iterations`` steps; otherwise the
    algorithms also stop once the relative change of the antenna-averaged
    residual variance drops below it.
    """

    N: int = 1000
    K: int = 32
    L: int = 128
    M: int = 64
    P: int = 3
    rho: float = 0.1
    pt_dbm: float = 10.0
    sigma2_mw: float = NOISE_MW
    eta_pl: float = 2.85
    wavelength_m: float = 0.086
    distance_model: tuple = ("constant", 70.0)
    iterations: int = 20
    stop_tol: float | None = None
    tracking_enabled: bool = True
    master_seed: int = 0

    def __post_init__(self):
        for name in ("N", "K", "L", "M", "P"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.L % self.K:
            raise ConfigError(f"L must equal K*Q for an integer Q (L={self.L}, K={self.K})")
        if self.P > self.K:
            raise ConfigError(f"P must not exceed K (P={self.P}, K={self.K})")
        # rho = 0 is accepted so analytical curves can be produced for the empty-support case.
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho!r}")
        if not self.sigma2_mw > 0:
            raise ConfigError(f"sigma2_mw must be positive, got {self.sigma2_mw!r}")
        if not self.wavelength_m > 0:
            raise ConfigError("wavelength_m must be positive")
        if not isinstance(self.iterations, (int, np.integer)) or self.iterations < 0:
            raise ConfigError(f"iterations must be a non-negative integer, got {self.iterations!r}")
        if self.stop_tol is not None and not self.stop_tol > 0:
            raise ConfigError("stop_tol must be positive or None")
        kind = self.distance_model[0] if self.distance_model else None
        if kind == "constant":
            if len(self.distance_model) != 2 or not self.distance_model[1] > 0:
                raise ConfigError("constant distance_model needs one positive distance")
        elif kind == "uniform":
            if len(self.distance_model) != 3:
                raise ConfigError("uniform distance_model needs (lo, hi)")
            lo, hi = self.distance_model[1:]
            if not 0 < lo <= hi:
                raise ConfigError("uniform distance_model needs 0 < lo <= hi")
        else:
            raise ConfigError(f"unknown distance_model {self.distance_model!r}")

    @property
    def Q(self) -> int:
        return self.L // self.K

    @property
    def pt_mw(self) -> float:
        return float(dbm_to_mw(self.pt_dbm))

    def mean_beta_eff(self) -> float:
        """Transmit-power-scaled pathloss averaged over the distance model."""
        if self.distance_model[0] == "constant":
            beta = pathloss(self.distance_model[1], self.eta_pl, self.wavelength_m)
        else:
            lo, hi = self.distance_model[1:]
            if lo == hi:
                beta = pathloss(lo, self.eta_pl, self.wavelength_m)
            else:
                # closed-form mean of c * d**-eta over d ~ U[lo, hi]
                c = (4.0 * np.pi / self.wavelength_m) ** -self.eta_pl
                e = 1.0 - self.eta_pl
                beta = c * (hi**e - lo**e) / (e * (hi - lo))
        return self.pt_mw * float(beta)


@dataclass
class ScenarioInstance:
    pilots: np.ndarray  # (N, Q, K) frequency-domain pilots
    A: np.ndarray  # (L, N*P)
    distances: np.ndarray  # (N,)
    beta_eff: np.ndarray  # (N,) pt_mw * pathloss
    a: np.ndarray  # (N,) int activities
    H: np.ndarray  # (N, P, M) tap-domain channels
    X: np.ndarray  # (N*P, M) effective channels
    noise: np.ndarray  # (L, M)
    Y: np.ndarray  # (L, M)
    meta: dict = field(default_factory=dict)


def crandn(rng, shape):
    """I.i.d. CN(0, 1) samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def gen_pilots(cfg: SystemConfig, rng) -> np.ndarray:
    """Gaussian frequency-domain pilots, shape (N, Q, K), each device scaled to energy K."""
    s = crandn(rng, (cfg.N, cfg.Q, cfg.K))
    energy = np.sum(np.abs(s) ** 2, axis=(1, 2), keepdims=True)
    return s * np.sqrt(cfg.K / energy)


def dft_matrix(K: int) -> np.ndarray:
    k = np.arange(K)
    return np.exp(-2j * np.pi * np.outer(k, k) / K) / math.sqrt(K)


def build_measurement_matrix(pilots: np.ndarray, P: int) -> np.ndarray:
    """Assemble A (L x N*P) from pilots of shape (N, Q, K).

    ``F^H diag(s) F`` is circulant with first column ``ifft(s)``, so column
    ``p`` of each block is that vector cyclically shifted by ``p``.
    """
    N, Q, K = pilots.shape
    if P > K:
        raise ConfigError(f"P={P} exceeds K={K}")
    c = np.fft.ifft(pilots, axis=-1)  # (N, Q, K)
    idx = (np.arange(K)[:, None] - np.arange(P)[None, :]) % K  # (K, P)
    blocks = c[:, :, idx]  # (N, Q, K, P)
    return blocks.transpose(1, 2, 0, 3).reshape(Q * K, N * P)


def build_measurement_matrix_naive(pilots: np.ndarray, P: int) -> np.ndarray:
    """Entry-by-entry assembly straight from the matrix definition (slow, for checks)."""
    N, Q, K = pilots.shape
    F = dft_matrix(K)
    A = np.zeros((Q * K, N * P), dtype=complex)
    for q in range(Q):
        for n in range(N):
            block = F.conj().T @ np.diag(pilots[n, q]) @ F
            for k in range(K):
                for p in range(P):
                    A[q * K + k, n * P + p] = block[k, p]
    return A


def gen_distances(cfg: SystemConfig, rng) -> np.ndarray:
    if cfg.distance_model[0] == "constant":
        return np.full(cfg.N, float(cfg.distance_model[1]))
    lo, hi = cfg.distance_model[1:]
    return rng.uniform(lo, hi, size=cfg.N)


def gen_channels(cfg: SystemConfig, distances, rng):
    """Rayleigh tap channels ``H`` (N, P, M) and per-device variance ``beta_eff``."""
    beta_eff = cfg.pt_mw * pathloss(distances, cfg.eta_pl, cfg.wavelength_m)
    g = crandn(rng, (cfg.N, cfg.P, cfg.M))
    return np.sqrt(beta_eff)[:, None, None] * g, beta_eff


def gen_activities(cfg: SystemConfig, rng) -> np.ndarray:
    return (rng.random(cfg.N) < cfg.rho).astype(np.int64)


def effective_channels(H: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Row ``n*P + p`` of the result is ``a_n * H[n, p, :]``."""
    N, P, M = H.shape
    return (a[:, None, None] * H).reshape(N * P, M)


def draw_noise(shape, sigma2_mw, rng) -> np.ndarray:
    return math.sqrt(sigma2_mw) * crandn(rng, shape)


def synthesize_received(A, X, sigma2_mw=None, rng=None, noise=None):
    """``Y = A X + noise``; pass ``noise`` to reuse a realization."""
    A = np.asarray(A)
    X = np.asarray(X)
    if A.shape[1] != X.shape[0]:
        raise ValueError(f"shape mismatch: A is {A.shape}, X is {X.shape}")
    if noise is None:
        noise = draw_noise((A.shape[0], X.shape[1]), sigma2_mw, rng)
    elif noise.shape != (A.shape[0], X.shape[1]):
        raise ValueError(f"noise has shape {noise.shape}, expected {(A.shape[0], X.shape[1])}")
    return A @ X + noise


def synthesize_received_circulant(pilots, H, a, noise):
    """Time-domain convolution path built from dense circulant channel matrices.

    Independent of ``build_measurement_matrix``; only meant for small K.
    With the unitary DFT a circulant matrix with first column ``h`` equals
    ``F^H diag(sqrt(K) F h) F``, so the unit-column linear model corresponds
    to the convolution output scaled by ``1/sqrt(K)``.
    """
    N, Q, K = pilots.shape
    _, P, M = H.shape
    F = dft_matrix(K)
    s_time = np.einsum("kj,nqj->nqk", F.conj().T, pilots)  # F^H s per (n, q)
    Y = np.array(noise, dtype=complex, copy=True)
    scale = 1.0 / math.sqrt(K)
    for n in np.flatnonzero(a):
        for m in range(M):
            taps = np.zeros(K, dtype=complex)
            taps[:P] = H[n, :, m]
            Hc = circulant(taps)
            for q in range(Q):
                Y[q * K:(q + 1) * K, m] += scale * (Hc @ s_time[n, q])
    return Y


def make_scenario(cfg: SystemConfig, rngs) -> ScenarioInstance:
    """Draw one realization.

    ``rngs`` maps the purposes ``pilots``, ``distances``, ``activities``,
    ``channels`` and ``noise`` to generators; a single generator may be given
    instead and is then shared in that order.
    """
    if isinstance(rngs, np.random.Generator):
        rngs = dict.fromkeys(("pilots", "distances", "activities", "channels", "noise"), rngs)
    pilots = gen_pilots(cfg, rngs["pilots"])
    A = build_measurement_matrix(pilots, cfg.P)
    distances = gen_distances(cfg, rngs["distances"])
    a = gen_activities(cfg, rngs["activities"])
    H, beta_eff = gen_channels(cfg, distances, rngs["channels"])
    X = effective_channels(H, a)
    noise = draw_noise((cfg.L, cfg.M), cfg.sigma2_mw, rngs["noise"])
    Y = synthesize_received(A, X, noise=noise)
    return ScenarioInstance(pilots, A, distances, beta_eff, a, H, X, noise, Y)
