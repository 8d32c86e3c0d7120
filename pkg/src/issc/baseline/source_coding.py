"""JPEG/PNG source coding with a target compression ratio, plus lenient
(JPEG) and strict (PNG, chunk CRCs verified) decoding of possibly corrupted
bitstreams."""

from __future__ import annotations

import io
import zlib
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageFile

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True)
class Bitstream:
    bits: np.ndarray          # flat uint8 array of 0/1
    origin: str               # jpeg | png
    length: int               # bit count, 8 * byte count

    def to_bytes(self) -> bytes:
        return np.packbits(self.bits).tobytes()


def bytes_to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def jpeg_encode(image: np.ndarray, target_ratio: float):
    """Highest JPEG quality whose output fits raw_bytes / target_ratio.

    Returns (data, quality, achieved_ratio). Binary-searches quality 1..95;
    raises if even quality 1 misses the budget.
    """
    if target_ratio < 1:
        raise ValueError(f"target_ratio={target_ratio} must be >= 1")
    raw_bytes = int(np.prod(image.shape))
    budget = raw_bytes / target_ratio

    def encode(quality: int) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(image).save(buf, format="JPEG", quality=quality)
        return buf.getvalue()

    lo, hi = 1, 95
    best = None
    best_q = None
    while lo <= hi:
        mid = (lo + hi) // 2
        data = encode(mid)
        if len(data) <= budget:
            best, best_q = data, mid
            lo = mid + 1
        else:
            hi = mid - 1
    if best is None:
        floor = encode(1)
        raise ValueError(
            f"JPEG cannot reach ratio {target_ratio:g}; best achievable is "
            f"{raw_bytes / len(floor):.2f} at quality 1"
        )
    return best, best_q, raw_bytes / len(best)


def png_encode(image: np.ndarray):
    """Lossless PNG; the ratio is measured, not targeted. Returns (data, ratio)."""
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG", optimize=True)
    data = buf.getvalue()
    raw_bytes = int(np.prod(image.shape))
    return data, raw_bytes / len(data)


def source_encode(image: np.ndarray, codec: str, target_ratio: float) -> tuple[Bitstream, dict]:
    """Encode to a Bitstream; info carries quality and the achieved ratio."""
    if image.dtype != np.uint8:
        raise ValueError("source coding expects uint8 RGB images")
    if codec == "jpeg":
        data, quality, ratio = jpeg_encode(image, target_ratio)
        info = {"quality": quality, "ratio": ratio}
    elif codec == "png":
        data, ratio = png_encode(image)
        info = {"quality": None, "ratio": ratio}
    else:
        raise ValueError(f"unknown codec {codec!r}")
    bits = bytes_to_bits(data)
    return Bitstream(bits=bits, origin=codec, length=len(bits)), info


def validate_png_chunks(data: bytes) -> bool:
    """Structural check: signature, chunk framing and critical-chunk CRCs."""
    if len(data) < len(PNG_SIGNATURE) or data[: len(PNG_SIGNATURE)] != PNG_SIGNATURE:
        return False
    pos = len(PNG_SIGNATURE)
    saw_end = False
    while pos + 8 <= len(data):
        length = int.from_bytes(data[pos : pos + 4], "big")
        ctype = data[pos + 4 : pos + 8]
        if pos + 12 + length > len(data):
            return False
        body = data[pos + 8 : pos + 8 + length]
        crc = int.from_bytes(data[pos + 8 + length : pos + 12 + length], "big")
        critical = len(ctype) == 4 and 65 <= ctype[0] <= 90
        if critical and zlib.crc32(ctype + body) != crc:
            return False
        pos += 12 + length
        if ctype == b"IEND":
            saw_end = True
            break
    return saw_end


def jpeg_decode_lenient(data: bytes, expected_shape) -> np.ndarray | None:
    """Best-effort decode of possibly corrupted JPEG bytes; None on failure."""
    old = ImageFile.LOAD_TRUNCATED_IMAGES
    ImageFile.LOAD_TRUNCATED_IMAGES = True
    try:
        img = Image.open(io.BytesIO(data))
        arr = np.asarray(img.convert("RGB"))
    except Exception:
        return None
    finally:
        ImageFile.LOAD_TRUNCATED_IMAGES = old
    if arr.shape != tuple(expected_shape):
        return None
    return arr


def png_decode_strict(data: bytes, expected_shape) -> np.ndarray | None:
    """Decode a PNG only if the chunk structure and CRCs survive; None otherwise."""
    if not validate_png_chunks(data):
        return None
    try:
        img = Image.open(io.BytesIO(data))
        arr = np.asarray(img.convert("RGB"))
    except Exception:
        return None
    if arr.shape != tuple(expected_shape):
        return None
    return arr


def source_decode(data: bytes, codec: str, expected_shape) -> np.ndarray | None:
    if codec == "jpeg":
        return jpeg_decode_lenient(data, expected_shape)
    if codec == "png":
        return png_decode_strict(data, expected_shape)
    raise ValueError(f"unknown codec {codec!r}")
