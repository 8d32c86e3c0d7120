"""Gray-mapped square QAM with unit average symbol energy: modulation, hard
demodulation, and full-sum soft bit LLRs for the channel decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LLR_SATURATION = 50.0

_ORDERS = (4, 16, 64)


def _gray(value: int) -> int:
    return value ^ (value >> 1)


@dataclass(frozen=True)
class QamConstellation:
    order: int
    points: np.ndarray = field(repr=False)        # (order,) complex, unit mean energy
    bit_patterns: np.ndarray = field(repr=False)  # (order, bits_per_symbol) uint8
    scale: float = 1.0

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.order))


def make_constellation(order: int) -> QamConstellation:
    """Square constellation; each axis carries half the bits, Gray-coded so
    axis-adjacent points differ in exactly one bit."""
    if order not in _ORDERS:
        raise ValueError(f"order must be one of {_ORDERS}, got {order}")
    bps = int(math.log2(order))
    half = bps // 2
    levels_per_axis = 1 << half
    # level index l (ascending amplitude) carries the Gray pattern of l
    amplitudes = 2 * np.arange(levels_per_axis) - (levels_per_axis - 1)
    gray_of_level = np.array([_gray(l) for l in range(levels_per_axis)])

    points = np.zeros(order, dtype=np.complex128)
    patterns = np.zeros((order, bps), dtype=np.uint8)
    for idx in range(order):
        bits = [(idx >> (bps - 1 - b)) & 1 for b in range(bps)]
        i_code = 0
        q_code = 0
        for b in range(half):
            i_code = (i_code << 1) | bits[b]
            q_code = (q_code << 1) | bits[half + b]
        i_level = int(np.where(gray_of_level == i_code)[0][0])
        q_level = int(np.where(gray_of_level == q_code)[0][0])
        points[idx] = amplitudes[i_level] + 1j * amplitudes[q_level]
        patterns[idx] = bits
    scale = math.sqrt(float(np.mean(np.abs(points) ** 2)))
    return QamConstellation(order=order, points=points / scale, bit_patterns=patterns, scale=scale)


def qam_modulate(bits: np.ndarray, constellation: QamConstellation):
    """Map a 0/1 bit array to symbols; zero-pads to a whole symbol count.

    Returns (symbols, pad_bits).
    """
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    bps = constellation.bits_per_symbol
    pad = (-len(bits)) % bps
    if pad:
        bits = np.concatenate([bits, np.zeros(pad, dtype=np.uint8)])
    groups = bits.reshape(-1, bps)
    weights = 1 << np.arange(bps - 1, -1, -1)
    indices = groups @ weights
    return constellation.points[indices], int(pad)


def qam_demodulate_hard(symbols: np.ndarray, constellation: QamConstellation) -> np.ndarray:
    """Nearest-point decision, returned as a flat bit array."""
    symbols = np.asarray(symbols, dtype=np.complex128).reshape(-1)
    dist = np.abs(symbols[:, None] - constellation.points[None, :]) ** 2
    indices = np.argmin(dist, axis=1)
    return constellation.bit_patterns[indices].reshape(-1)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def qam_demodulate_llr(
    symbols: np.ndarray, sigma: float, constellation: QamConstellation
) -> np.ndarray:
    """Full-sum per-bit log-likelihood ratios, log P(bit=0|y) / P(bit=1|y).

    ``sigma`` is the total complex noise standard deviation (variance sigma^2
    split evenly across the two components). sigma = 0 falls back to
    saturated hard decisions.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    symbols = np.asarray(symbols, dtype=np.complex128).reshape(-1)
    bps = constellation.bits_per_symbol
    if sigma == 0.0:
        bits = qam_demodulate_hard(symbols, constellation)
        return np.where(bits == 0, LLR_SATURATION, -LLR_SATURATION).astype(np.float64)
    metric = -(np.abs(symbols[:, None] - constellation.points[None, :]) ** 2) / sigma**2
    llrs = np.zeros((len(symbols), bps), dtype=np.float64)
    for b in range(bps):
        zero_set = constellation.bit_patterns[:, b] == 0
        llrs[:, b] = _logsumexp(metric[:, zero_set], axis=1) - _logsumexp(
            metric[:, ~zero_set], axis=1
        )
    return np.clip(llrs.reshape(-1), -LLR_SATURATION, LLR_SATURATION)
