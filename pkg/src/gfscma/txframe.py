"""Per-user transmission frames and the stacked N x L signal matrix."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .codebook import Constellation, bits_to_symbols, draw_support, draw_supports
from .model import FrameLayout, SystemConfig

# Slack on the per-frame power budget; label and signature add a little energy.
POWER_SLACK = 0.25

_MAX_SIGNATURE_SEEDS = 10_000


@dataclass(frozen=True, eq=False)
class UserSignature:
    user_id: int
    symbols: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.symbols)


@dataclass(frozen=True, eq=False)
class SignalMatrix:
    entries: np.ndarray
    layout: FrameLayout

    @property
    def shape(self):
        return self.entries.shape


def build_symbol_label(c: Constellation) -> complex:
    """The angle-0 constellation point, known to both ends."""
    return complex(c.points[0])


def build_user_signature(
    user_id: int, cfg: SystemConfig, c: Constellation, seed: Optional[int] = None
) -> UserSignature:
    if not 0 <= user_id < cfg.N:
        raise ValueError(f"user_id {user_id} outside [0, {cfg.N})")
    seed = cfg.signature_seed if seed is None else seed
    rng = np.random.default_rng([seed, user_id])
    support = draw_support(cfg.K, cfg.d_f, rng)
    symbols = np.zeros(cfg.K, dtype=complex)
    symbols[list(support.indices)] = c.points[rng.integers(0, c.M, cfg.d_f)]
    return UserSignature(user_id, symbols)


def signatures_collide(signatures: Sequence[UserSignature], min_distance: float) -> bool:
    S = np.array([s.symbols for s in signatures])
    d = np.linalg.norm(S[:, None, :] - S[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return bool(np.any(d < min_distance * (1 - 1e-12)))


def build_signatures(cfg: SystemConfig, c: Constellation) -> list[UserSignature]:
    """Signatures of all N users, pairwise at distance >= amplitude.

    Starting from ``cfg.signature_seed``, the seed is bumped until the whole set
    is collision-free, so both ends derive the same set.
    """
    for seed in range(cfg.signature_seed, cfg.signature_seed + _MAX_SIGNATURE_SEEDS):
        sigs = [build_user_signature(n, cfg, c, seed) for n in range(cfg.N)]
        if not signatures_collide(sigs, c.amplitude):
            return sigs
    raise RuntimeError(f"no collision-free signature set for N={cfg.N}, K={cfg.K}, d_f={cfg.d_f}")


def _data_block_supports(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.support_mode == "per_frame":
        return np.repeat(draw_supports(cfg.K, cfg.d_f, 1, rng), cfg.I, axis=0)
    return draw_supports(cfg.K, cfg.d_f, cfg.I, rng)


def build_frame(
    user_id: int,
    payload_bits,
    cfg: SystemConfig,
    c: Constellation,
    rng: np.random.Generator,
    signature: Optional[UserSignature] = None,
) -> np.ndarray:
    """One user's length-L frame: label, signature, then I sparse codewords.

    Each codeword carries d_f payload symbols placed on a fresh random support
    in ascending index order.
    """
    bits = np.asarray(payload_bits).ravel()
    if bits.size != cfg.payload_bits:
        raise ValueError(f"payload must have {cfg.payload_bits} bits, got {bits.size}")
    if signature is None:
        signature = build_user_signature(user_id, cfg, c)
    layout = cfg.layout
    frame = np.zeros(layout.L, dtype=complex)
    frame[layout.label_index] = build_symbol_label(c)
    frame[layout.signature_span] = signature.symbols
    values = bits_to_symbols(bits, c).reshape(cfg.I, cfg.d_f)
    supports = _data_block_supports(cfg, rng)
    data = np.zeros((cfg.I, cfg.K), dtype=complex)
    np.put_along_axis(data, supports, values, axis=1)
    frame[layout.data_span] = data.ravel()
    return frame


def build_signal_matrix(
    payloads: Sequence,
    cfg: SystemConfig,
    c: Constellation,
    rng: np.random.Generator,
    signatures: Optional[Sequence[UserSignature]] = None,
) -> SignalMatrix:
    """Stack the N user frames; every user gets its own child rng stream."""
    if len(payloads) != cfg.N:
        raise ValueError(f"expected {cfg.N} payloads, got {len(payloads)}")
    if signatures is None:
        signatures = build_signatures(cfg, c)
    streams = rng.spawn(cfg.N)
    X = np.empty((cfg.N, cfg.L), dtype=complex)
    for n in range(cfg.N):
        X[n] = build_frame(n, payloads[n], cfg, c, streams[n], signatures[n])
    return SignalMatrix(X, cfg.layout)


def frame_power(frame) -> float:
    """(1/L) x^H x for one frame."""
    frame = np.asarray(frame)
    return float(np.vdot(frame, frame).real / frame.size)
