import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gfscma.codebook import (
    bits_to_symbol,
    bits_to_symbols,
    build_constellation,
    draw_support,
    draw_supports,
    nearest_index,
    symbol_to_bits,
    symbols_to_bits,
)


def test_qpsk_geometry(qpsk):
    # [DERIVED] amplitude sqrt(P/gamma) = 2 at angles 0, 90, 180, 270 degrees
    np.testing.assert_allclose(qpsk.points, [2, 2j, -2, -2j], atol=1e-15)
    assert qpsk.amplitude == 2.0


def test_bpsk_and_scaling():
    np.testing.assert_allclose(build_constellation(2, 1.0, 1.0).points, [1, -1], atol=1e-15)
    assert np.allclose(np.abs(build_constellation(4, 4.0, 0.25).points), 4)


@pytest.mark.parametrize("M", [2, 4, 8, 16])
@pytest.mark.parametrize("gamma", [0.1, 0.25, 1.0])
def test_constellation_invariants(M, gamma):
    c = build_constellation(M, 1.0, gamma)
    assert abs(c.points.sum()) < 1e-12
    np.testing.assert_allclose(np.abs(c.points), c.amplitude, atol=1e-12)
    assert gamma * c.amplitude**2 == pytest.approx(1.0)
    assert not np.any(c.points == 0)
    # Gray: neighbouring points differ in one bit
    lab = c.labels
    assert all(bin(lab[m] ^ lab[(m + 1) % M]).count("1") == 1 for m in range(M))


def test_gray_map_qpsk(qpsk):
    # [DERIVED] labels 00, 01, 11, 10 counterclockwise from 0 degrees
    assert bits_to_symbol([0, 0], qpsk) == 2
    assert bits_to_symbol([0, 1], qpsk) == 2j
    assert bits_to_symbol([1, 1], qpsk) == -2
    assert bits_to_symbol([1, 0], qpsk) == -2j
    assert list(symbol_to_bits(2j, qpsk)) == [0, 1]


def test_bpsk_bits():
    c = build_constellation(2, 1.0, 0.5)
    assert bits_to_symbol([0], c) == pytest.approx(c.amplitude)
    assert bits_to_symbol([1], c) == pytest.approx(-c.amplitude)


@pytest.mark.parametrize("M", [2, 4, 8])
def test_exhaustive_round_trip(M):
    c = build_constellation(M, 1.0, 0.25)
    b = c.bits_per_symbol
    for bits in itertools.product([0, 1], repeat=b):
        assert list(symbol_to_bits(bits_to_symbol(bits, c), c)) == list(bits)


def test_zero_is_not_a_symbol(qpsk):
    with pytest.raises(ValueError):
        symbol_to_bits(0, qpsk)


def test_bad_inputs(qpsk):
    with pytest.raises(ValueError):
        build_constellation(3, 1.0, 0.25)
    with pytest.raises(ValueError):
        bits_to_symbols([0, 1, 1], qpsk)
    with pytest.raises(ValueError):
        bits_to_symbols([0, 2], qpsk)


def test_nearest_index_ties(qpsk):
    # 1+1j is equidistant from 2 and 2j; lowest index wins
    assert nearest_index(1 + 1j, qpsk) == 0


@given(st.lists(st.integers(0, 1), min_size=0, max_size=64).filter(lambda b: len(b) % 2 == 0))
def test_bits_round_trip_property(bits):
    c = build_constellation(4, 1.0, 0.25)
    assert list(symbols_to_bits(bits_to_symbols(bits, c), c)) == bits


def test_draw_support_edge_cases(rng):
    assert draw_support(8, 8, rng).indices == tuple(range(8))
    assert draw_support(1, 1, rng).indices == (0,)
    with pytest.raises(ValueError):
        draw_support(2, 3, rng)


def test_support_uniformity(rng):
    # [DERIVED] counting oracle: each index included with probability d_f/K = 0.25
    S = draw_supports(8, 2, 100_000, rng)
    freq = np.bincount(S.ravel(), minlength=8) / 100_000
    np.testing.assert_allclose(freq, 0.25, atol=0.01)
    # every unordered pair equally likely: 28 pairs
    pairs = np.bincount(S[:, 0] * 8 + S[:, 1], minlength=64)
    pairs = pairs[pairs > 0]
    assert len(pairs) == 28
    np.testing.assert_allclose(pairs / 100_000, 1 / 28, atol=0.003)


def test_single_draw_uniformity(rng):
    counts = np.zeros(8)
    for _ in range(20_000):
        counts[list(draw_support(8, 2, rng).indices)] += 1
    np.testing.assert_allclose(counts / 20_000, 0.25, atol=0.015)


@given(K=st.integers(1, 30), data=st.data())
def test_supports_valid(K, data):
    d_f = data.draw(st.integers(1, K))
    S = draw_supports(K, d_f, 20, np.random.default_rng(data.draw(st.integers(0, 2**32))))
    assert S.shape == (20, d_f)
    assert np.all(np.diff(S, axis=1) > 0)
    assert S.min() >= 0 and S.max() < K


def test_dump(qpsk):
    assert qpsk.dump()[1] == (0.0, 2.0, "01")
