"""System model: frame generation and a-priori messages."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .constellation import Constellation, build_constellation
from .kernels import SpikeGM

# path-loss model constants (dB, km, dBm/Hz, Hz)
PATHLOSS_INTERCEPT_DB = -128.1
PATHLOSS_SLOPE_DB = 36.7
NOISE_PSD_DBM_HZ = -169.0
BANDWIDTH_HZ = 1e6
DIST_RANGE_KM = (0.05, 1.0)


def pathloss_db(d_km):
    return PATHLOSS_INTERCEPT_DB - PATHLOSS_SLOPE_DB * np.log10(d_km)


def noise_power_dbm():
    return NOISE_PSD_DBM_HZ + 10 * np.log10(BANDWIDTH_HZ)


@dataclass(frozen=True)
class SystemConfig:
    """Parameters of one grant-free NOMA link.

    In ``fading="pathloss"`` mode the large-scale gains are drawn per
    frame from the distance model and normalized to the cell edge
    (d = 1 km has gain 1), so ``snr_db`` is the cell-edge SNR.
    """

    K: int
    L: int
    T: int
    lam: float
    snr_db: float
    n_rs: int = 1
    constellation: Constellation = field(default_factory=lambda: build_constellation("qpsk"))
    beta: tuple | None = None
    fading: str = "none"
    freeze_A: bool = False
    a_seed: int = 0

    def __post_init__(self):
        if isinstance(self.constellation, str):
            object.__setattr__(self, "constellation", build_constellation(self.constellation))
        if self.beta is not None:
            object.__setattr__(self, "beta", tuple(float(b) for b in np.ravel(self.beta)))
        self.validate()

    def validate(self):
        if self.K < 1 or self.L < 1:
            raise ValueError("K and L must be >= 1")
        if not (self.T >= self.n_rs >= 1):
            raise ValueError("need T >= n_rs >= 1")
        if not (0 <= self.lam <= 1):
            raise ValueError("lam must lie in [0, 1]")
        if self.fading not in ("none", "pathloss"):
            raise ValueError(f"unknown fading mode {self.fading!r}")
        if self.beta is not None:
            if len(self.beta) != self.K:
                raise ValueError("beta must have K entries")
            if min(self.beta) <= 0:
                raise ValueError("beta must be positive")
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")

    @property
    def N0(self) -> float:
        return 10.0 ** (-self.snr_db / 10.0)

    @property
    def n_data(self) -> int:
        return self.T - self.n_rs

    def beta_array(self) -> np.ndarray:
        if self.beta is None:
            return np.ones(self.K)
        return np.asarray(self.beta, dtype=float)

    def replace(self, **kw) -> "SystemConfig":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return {
            "K": self.K,
            "L": self.L,
            "T": self.T,
            "lambda": self.lam,
            "snr_db": self.snr_db,
            "n_rs": self.n_rs,
            "constellation": self.constellation.describe(),
            "beta": None if self.beta is None else list(self.beta),
            "fading": self.fading,
            "freeze_A": self.freeze_A,
            "a_seed": self.a_seed,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class FrameTruth:
    A: np.ndarray
    h: np.ndarray
    u: np.ndarray
    X: np.ndarray
    W: np.ndarray
    R: np.ndarray
    beta: np.ndarray

    @property
    def g(self) -> np.ndarray:
        return self.h * self.u

    @property
    def Y(self) -> np.ndarray:
        return self.g[:, None] * self.X


def _cn(rng, shape, var=1.0):
    return np.sqrt(np.asarray(var) / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_spreading(rng, L, K):
    return rng.standard_normal((L, K)) / np.sqrt(L)


def draw_pathloss_beta(rng, K):
    d = rng.uniform(*DIST_RANGE_KM, size=K)
    return 10.0 ** ((pathloss_db(d) - pathloss_db(1.0)) / 10.0)


def generate_frame(config: SystemConfig, seed) -> FrameTruth:
    """Draw one frame R = A diag(h) diag(u) X + W.

    ``seed`` is anything accepted by ``numpy.random.default_rng``.
    """
    rng = np.random.default_rng(seed)
    K, L, T = config.K, config.L, config.T
    const = config.constellation
    if config.freeze_A:
        A = draw_spreading(np.random.default_rng(config.a_seed), L, K)
    else:
        A = draw_spreading(rng, L, K)
    if config.fading == "pathloss":
        beta = draw_pathloss_beta(rng, K)
    else:
        beta = config.beta_array()
    h = _cn(rng, K, beta)
    u = (rng.random(K) < config.lam).astype(int)
    X = np.empty((K, T), dtype=complex)
    X[:, : config.n_rs] = const.reference_symbol
    X[:, config.n_rs:] = const.sample(rng, (K, T - config.n_rs))
    W = _cn(rng, (L, T), config.N0)
    R = A @ ((h * u)[:, None] * X) + W
    return FrameTruth(A, h, u, X, W, R, beta)


def g_prior(config: SystemConfig, beta=None) -> SpikeGM:
    """Effective-channel prior (1-lam) delta + lam CN(0, beta_k), one per user."""
    beta = config.beta_array() if beta is None else np.asarray(beta, float)
    lam = config.lam
    with np.errstate(divide="ignore"):
        ls = np.full(beta.shape, np.log1p(-lam) if lam < 1 else -np.inf)
        lw = np.full(beta.shape + (1,), np.log(lam) if lam > 0 else -np.inf)
    return SpikeGM(ls, lw, np.zeros(beta.shape + (1,), complex), beta[:, None].copy())


def y_prior(config: SystemConfig, beta=None) -> SpikeGM:
    """Effective-signal prior (1-lam) delta + lam/|S| sum_j CN(0, beta_k |s_j|^2)."""
    beta = config.beta_array() if beta is None else np.asarray(beta, float)
    lam = config.lam
    s = config.constellation.points
    J = s.size
    with np.errstate(divide="ignore"):
        ls = np.full(beta.shape, np.log1p(-lam) if lam < 1 else -np.inf)
        lw = np.full(beta.shape + (J,), (np.log(lam) if lam > 0 else -np.inf) - np.log(J))
    vars = beta[:, None] * np.abs(s) ** 2
    return SpikeGM(ls, lw, np.zeros(vars.shape, complex), vars)


def prior_messages(config: SystemConfig, beta=None):
    """Return ``(g_prior, y_prior)``; the y prior is shared by all slots."""
    return g_prior(config, beta), y_prior(config, beta)
