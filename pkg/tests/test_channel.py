import math

import numpy as np
import pytest
import torch

from issc.channel import awgn_transmit, fading_transmit, gaussian_noise, sigma_from_snr


@pytest.mark.parametrize(
    "snr_db,power,expected_var",
    [(0.0, 1.0, 1.0), (20.0, 1.0, 0.01), (10.0, 2.0, 0.2)],
)
def test_sigma_from_snr(snr_db, power, expected_var):
    sigma = sigma_from_snr(snr_db, power)
    assert abs(sigma ** 2 - expected_var) < 1e-12


def test_sigma_rejects_nonpositive_power():
    with pytest.raises(ValueError):
        sigma_from_snr(10.0, 0.0)


def test_infinite_snr_is_noiseless():
    x = torch.randn(16)
    assert torch.equal(awgn_transmit(x, math.inf, seed=0), x)


def test_noise_mean_within_monte_carlo_bound():
    sigma = 0.5
    noise = gaussian_noise((1_000_000,), sigma, seed=1)
    # mean of n draws ~ N(0, sigma^2/n); 4-sigma bound
    assert abs(noise.mean()) < 4 * sigma / 1000


def test_noise_variance_within_one_percent():
    sigma = 0.5
    noise = gaussian_noise((1_000_000,), sigma, seed=2)
    assert abs(noise.var() - sigma ** 2) / sigma ** 2 < 0.01


def test_same_seed_bit_identical():
    a = awgn_transmit(np.zeros(1000), 10.0, seed=42)
    b = awgn_transmit(np.zeros(1000), 10.0, seed=42)
    assert (a == b).all()
    c = awgn_transmit(np.zeros(1000), 10.0, seed=43)
    assert not (a == c).all()


@pytest.mark.parametrize("snr_db", [1.0, 10.0, 20.0])
def test_measured_snr_calibrated(snr_db):
    rng = np.random.default_rng(3)
    x = rng.standard_normal(1_000_000)
    x /= np.sqrt((x ** 2).mean())
    y = awgn_transmit(x, snr_db, seed=4)
    noise = y - x
    measured = 10 * np.log10((x ** 2).mean() / (noise ** 2).mean())
    assert abs(measured - snr_db) < 0.1


def test_complex_noise_splits_variance():
    x = np.zeros(500_000, dtype=np.complex128)
    y = awgn_transmit(x, 0.0, seed=5)   # sigma^2 = 1
    assert abs(np.var(y.real) - 0.5) < 0.01
    assert abs(np.var(y.imag) - 0.5) < 0.01
    assert abs(np.mean(np.abs(y) ** 2) - 1.0) < 0.01


def test_fading_reduces_to_awgn_at_unit_h():
    x = np.ones(256)
    assert (fading_transmit(x, 1.0, 12.0, seed=6) == awgn_transmit(x, 12.0, seed=6)).all()


def test_fading_noiseless_scales():
    x = torch.randn(64)
    y = fading_transmit(x, 2.0, math.inf, seed=7)
    assert torch.allclose(y, 2.0 * x)


def test_fading_rejects_nonpositive_h():
    with pytest.raises(ValueError):
        fading_transmit(np.ones(4), 0.0, 10.0, seed=8)


def test_receiver_equalization_recovers_awgn_statistics():
    # dividing by h turns h*x + rho into x + rho/h: SNR scales by h^2
    h = 0.5
    rng = np.random.default_rng(9)
    x = rng.standard_normal(1_000_000)
    x /= np.sqrt((x ** 2).mean())
    y = fading_transmit(x, h, 10.0, seed=10) / h
    noise = y - x
    measured = 10 * np.log10((x ** 2).mean() / (noise ** 2).mean())
    expected = 10.0 + 20 * np.log10(h)
    assert abs(measured - expected) < 0.1


def test_gradient_passes_unchanged():
    x = torch.randn(32, dtype=torch.float64, requires_grad=True)
    y = fading_transmit(x, 1.5, 10.0, seed=11)
    y.sum().backward()
    assert torch.allclose(x.grad, torch.full_like(x, 1.5))
