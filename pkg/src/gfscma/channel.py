"""Quasi-static flat Rayleigh fading and AWGN.

CN(0, v) throughout means total variance v, split evenly between the real and
imaginary parts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SystemConfig
from .txframe import SignalMatrix


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    H: np.ndarray
    beta: np.ndarray


@dataclass(frozen=True, eq=False)
class ReceivedMatrix:
    Y: np.ndarray
    sigma2: float


def complex_normal(rng: np.random.Generator, shape, var=1.0) -> np.ndarray:
    scale = np.sqrt(np.asarray(var, dtype=float) / 2)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def draw_channel(cfg: SystemConfig, rng: np.random.Generator) -> ChannelRealization:
    """H[:, n] = sqrt(beta_n) * g_n with g_n ~ CN(0, I_J)."""
    beta = np.asarray(cfg.beta, dtype=float)
    g = complex_normal(rng, (cfg.J, cfg.N))
    return ChannelRealization(g * np.sqrt(beta)[None, :], beta)


def snr_to_sigma2(snr_db: float, P: float = 1.0) -> float:
    if not P > 0:
        raise ValueError(f"P must be positive, got {P}")
    return P / 10 ** (snr_db / 10)


def apply_channel(
    channel: ChannelRealization | np.ndarray,
    X: SignalMatrix | np.ndarray,
    sigma2: float,
    rng: np.random.Generator,
) -> ReceivedMatrix:
    H = channel.H if isinstance(channel, ChannelRealization) else np.asarray(channel)
    Xm = X.entries if isinstance(X, SignalMatrix) else np.asarray(X)
    if H.ndim != 2 or Xm.ndim != 2 or H.shape[1] != Xm.shape[0]:
        raise ValueError(f"cannot multiply H{H.shape} by X{Xm.shape}")
    if sigma2 < 0:
        raise ValueError(f"sigma2 must be >= 0, got {sigma2}")
    Y = H @ Xm
    if sigma2 > 0:
        Y = Y + complex_normal(rng, Y.shape, sigma2)
    return ReceivedMatrix(Y, float(sigma2))
