"""Wireless channel: y = h*x + noise, calibrated to a target SNR.

Serves both the semantic path (real-valued torch features, gradients pass
through unchanged) and the digital path (complex numpy symbol arrays). The
noise realization is drawn from numpy so the same seed gives bit-identical
draws on either path.
"""

from __future__ import annotations

import math

import numpy as np
import torch


def sigma_from_snr(snr_db: float, signal_power: float = 1.0) -> float:
    """Noise standard deviation for a target SNR over a given signal power."""
    if signal_power <= 0:
        raise ValueError(f"signal_power={signal_power} must be > 0")
    if snr_db == math.inf:
        return 0.0
    return math.sqrt(signal_power / 10.0 ** (snr_db / 10.0))


def gaussian_noise(shape, sigma: float, seed: int, complex_valued: bool = False):
    """Seeded N(0, sigma^2) draw; complex draws split the variance per component."""
    rng = np.random.default_rng(seed)
    if complex_valued:
        scale = sigma / math.sqrt(2.0)
        return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return sigma * rng.standard_normal(shape)


def fading_transmit(x, h: float, snr_db: float, seed: int):
    """y = h*x + noise with noise sized for the requested SNR at unit signal power.

    x must be power-normalized (semantic features) or drawn from a
    unit-average-energy constellation (modulation symbols). Accepts a torch
    tensor (noise enters as a constant, so dy/dx = h * I) or a numpy array,
    real or complex.
    """
    if h <= 0:
        raise ValueError(f"fading coefficient h={h} must be > 0")
    sigma = sigma_from_snr(snr_db, 1.0)
    if isinstance(x, torch.Tensor):
        if x.is_complex():
            raise TypeError("complex tensors travel on the numpy path")
        if sigma == 0.0:
            return h * x
        noise = gaussian_noise(tuple(x.shape), sigma, seed)
        return h * x + torch.from_numpy(noise).to(x.dtype)
    x = np.asarray(x)
    if sigma == 0.0:
        return h * x
    noise = gaussian_noise(x.shape, sigma, seed, complex_valued=np.iscomplexobj(x))
    return h * x + noise


def awgn_transmit(x, snr_db: float, seed: int):
    """AWGN special case of the channel (h = 1)."""
    return fading_transmit(x, 1.0, snr_db, seed)
