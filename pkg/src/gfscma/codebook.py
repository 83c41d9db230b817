"""Power-normalised M-PSK constellation, Gray bit mapping and codeword supports."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Constellation:
    """M equal-energy points, ordered by angle from the positive real axis.

    ``labels[m]`` is the Gray code carried by ``points[m]``.
    """

    points: np.ndarray
    labels: np.ndarray
    bits_per_symbol: int
    amplitude: float

    @property
    def M(self) -> int:
        return len(self.points)

    @property
    def label_bits(self) -> np.ndarray:
        """(M, bits_per_symbol) array, MSB first."""
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return (self.labels[:, None] >> shifts) & 1

    def point_for_label(self) -> np.ndarray:
        """Inverse table: ``point_for_label()[label]`` is the point carrying ``label``."""
        table = np.empty(self.M, dtype=complex)
        table[self.labels] = self.points
        return table

    def dump(self) -> list[tuple[float, float, str]]:
        """(re, im, bit-label) triples in point order."""
        return [
            (float(p.real), float(p.imag), format(int(lab), f"0{self.bits_per_symbol}b"))
            for p, lab in zip(self.points, self.labels)
        ]


def build_constellation(M: int, P: float, gamma: float) -> Constellation:
    if M < 2 or M & (M - 1):
        raise ValueError(f"M must be a power of 2 and >= 2, got {M}")
    if not P > 0:
        raise ValueError(f"P must be positive, got {P}")
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    # gamma * amplitude**2 = P keeps the sparse symbol prior on the power budget.
    amplitude = float(np.sqrt(P / gamma))
    m = np.arange(M)
    points = amplitude * np.exp(2j * np.pi * m / M)
    # Snap to exact axis values so that e.g. the 90 degree point is exactly 2j.
    points = np.round(points.real, 15) + 1j * np.round(points.imag, 15)
    labels = m ^ (m >> 1)
    return Constellation(points, labels, int(np.log2(M)), amplitude)


def bits_to_symbol(bits, c: Constellation) -> complex:
    bits = np.asarray(bits, dtype=int).ravel()
    if bits.size != c.bits_per_symbol:
        raise ValueError(f"expected {c.bits_per_symbol} bits, got {bits.size}")
    return complex(bits_to_symbols(bits, c)[0])


def bits_to_symbols(bits, c: Constellation) -> np.ndarray:
    """Map a flat bit array (length a multiple of log2 M) to symbols."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    b = c.bits_per_symbol
    if bits.size % b:
        raise ValueError(f"bit count {bits.size} is not a multiple of {b}")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    groups = bits.reshape(-1, b)
    weights = 1 << np.arange(b - 1, -1, -1)
    return c.point_for_label()[groups @ weights]


def nearest_index(symbols, c: Constellation) -> np.ndarray:
    """Index of the nearest point; ties go to the lowest index."""
    s = np.asarray(symbols, dtype=complex)
    d = np.abs(s[..., None] - c.points) ** 2
    return np.argmin(d, axis=-1)


def symbols_to_bits(symbols, c: Constellation, atol: float = 1e-9) -> np.ndarray:
    """Inverse of :func:`bits_to_symbols`; every symbol must be a constellation point."""
    s = np.asarray(symbols, dtype=complex).ravel()
    idx = nearest_index(s, c)
    off = np.abs(s - c.points[idx])
    if np.any(off > atol * c.amplitude):
        bad = s[np.argmax(off)]
        raise ValueError(f"{bad} is not a constellation point; hard-decide first")
    return c.label_bits[idx].ravel()


def symbol_to_bits(s: complex, c: Constellation) -> np.ndarray:
    return symbols_to_bits([s], c)


@dataclass(frozen=True)
class Support:
    indices: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.indices)


def draw_support(K: int, d_f: int, rng: np.random.Generator) -> Support:
    """Uniformly random d_f-subset of range(K), sorted."""
    if d_f > K:
        raise ValueError(f"d_f={d_f} exceeds K={K}")
    return Support(tuple(int(i) for i in np.sort(rng.choice(K, d_f, replace=False))))


def draw_supports(K: int, d_f: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` independent uniform supports as a sorted (count, d_f) index array."""
    if d_f > K:
        raise ValueError(f"d_f={d_f} exceeds K={K}")
    # The d_f smallest of K i.i.d. uniforms pick a uniformly random subset.
    keys = rng.random((count, K))
    return np.sort(np.argpartition(keys, d_f - 1, axis=1)[:, :d_f], axis=1)
