"""Classical source/channel-coded transmission baseline."""

from .chain import (
    DecodeFailure,
    TransmitRecord,
    baseline_segment,
    baseline_transmit,
    expected_symbol_count,
    simulate_ber,
)
from .ldpc import LdpcCode, build_parity_check, load_default_code
from .qam import make_constellation, qam_demodulate_llr, qam_modulate
from .source_coding import source_decode, source_encode

__all__ = [
    "DecodeFailure",
    "TransmitRecord",
    "baseline_segment",
    "baseline_transmit",
    "expected_symbol_count",
    "simulate_ber",
    "LdpcCode",
    "build_parity_check",
    "load_default_code",
    "make_constellation",
    "qam_demodulate_llr",
    "qam_modulate",
    "source_decode",
    "source_encode",
]
