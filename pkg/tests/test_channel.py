import numpy as np
import pytest

from gfscma.channel import apply_channel, complex_normal, draw_channel, snr_to_sigma2
from gfscma.model import SystemConfig


def test_snr_conversion():
    assert snr_to_sigma2(0) == 1.0
    assert snr_to_sigma2(20) == pytest.approx(0.01)
    # [DERIVED] 10**(-1.75)
    assert snr_to_sigma2(17.5) == pytest.approx(0.0177827941, rel=1e-9)
    with pytest.raises(ValueError):
        snr_to_sigma2(10, 0)


@pytest.mark.parametrize("beta", [1.0, 4.0])
def test_channel_moments(rng, beta):
    # [DERIVED] sample-moment oracle over 10**5 draws
    cfg = SystemConfig(K=2, N=2, J=50_000, I=1, d_f=1, beta=(beta, 1.0))
    H = draw_channel(cfg, rng).H
    assert np.mean(np.abs(H[:, 0]) ** 2) == pytest.approx(beta, rel=0.02)
    assert np.var(H[:, 0].real) == pytest.approx(beta / 2, rel=0.03)
    # independent columns
    assert abs(np.mean(H[:, 0] * H[:, 1].conj())) <= 0.02 * np.sqrt(beta)


def test_zero_beta_gives_zero_channel(rng):
    cfg = SystemConfig(K=2, N=2, J=3, I=1, d_f=1, beta=(0.0, 0.0))
    assert np.all(draw_channel(cfg, rng).H == 0)


def test_noiseless_product(rng):
    H = complex_normal(rng, (4, 3))
    X = complex_normal(rng, (3, 7))
    np.testing.assert_allclose(apply_channel(H, X, 0.0, rng).Y, H @ X, atol=1e-12)
    assert apply_channel(np.ones((1, 1)), 3 * np.ones((1, 1)), 0.0, rng).Y[0, 0] == 3


def test_noise_variance(rng):
    Y = apply_channel(np.ones((1, 1)), np.zeros((1, 100_000)), 0.3, rng).Y
    assert np.mean(np.abs(Y) ** 2) == pytest.approx(0.3, rel=0.02)
    assert np.var(Y.imag) == pytest.approx(0.15, rel=0.03)


def test_dimension_errors(rng):
    with pytest.raises(ValueError):
        apply_channel(np.ones((2, 3)), np.ones((2, 3)), 0.0, rng)
    with pytest.raises(ValueError):
        apply_channel(np.ones((2, 3)), np.ones((3, 3)), -1.0, rng)
