# src/ppisp/core/image_io.py
"""PFM (linear HDR) and 8-bit PNG file I/O."""

import logging
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image

from ppisp.core.image import ImageBuffer, ImageLike, as_array
from ppisp.errors import DatasetError, PfmFormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_WHITESPACE = b' \t\r\n'


def _read_token(raw: bytes, pos: int) -> Tuple[str, int, int]:
    """Read one whitespace-delimited header token.

    Returns:
        Tuple of (token, token_start_offset, offset_after_token)
    """
    while pos < len(raw) and raw[pos] in _WHITESPACE:
        pos += 1
    start = pos
    while pos < len(raw) and raw[pos] not in _WHITESPACE:
        pos += 1
    if start == pos:
        raise PfmFormatError("unexpected end of header", start)
    try:
        token = raw[start:pos].decode('ascii')
    except UnicodeDecodeError:
        raise PfmFormatError("non-ASCII bytes in header", start)
    return token, start, pos


def parse_pfm(raw: bytes) -> ImageBuffer:
    """
    Parse the bytes of a color PFM file.

    The sign of the scale field selects endianness (negative = little).
    Rows are stored bottom-to-top.

    Raises:
        PfmFormatError: malformed header, grayscale variant, short payload,
            or non-finite samples
    """
    magic, start, pos = _read_token(raw, 0)
    if magic == 'Pf':
        raise PfmFormatError("grayscale PFM is not supported", start)
    if magic != 'PF':
        raise PfmFormatError(f"bad magic {magic!r}", start)

    width_tok, start, pos = _read_token(raw, pos)
    try:
        width = int(width_tok)
    except ValueError:
        raise PfmFormatError(f"bad width {width_tok!r}", start)
    height_tok, start, pos = _read_token(raw, pos)
    try:
        height = int(height_tok)
    except ValueError:
        raise PfmFormatError(f"bad height {height_tok!r}", start)
    if width < 1 or height < 1:
        raise PfmFormatError(f"bad dimensions {width}x{height}", start)

    scale_tok, start, pos = _read_token(raw, pos)
    try:
        scale = float(scale_tok)
    except ValueError:
        raise PfmFormatError(f"bad scale {scale_tok!r}", start)
    if scale == 0.0 or not np.isfinite(scale):
        raise PfmFormatError("scale must be finite and non-zero", start)

    # Exactly one whitespace byte separates the header from the payload.
    if pos >= len(raw) or raw[pos] not in _WHITESPACE:
        raise PfmFormatError("missing whitespace after scale", pos)
    pos += 1

    dtype = '<f4' if scale < 0 else '>f4'
    expected = width * height * 3 * 4
    payload = raw[pos:pos + expected]
    if len(payload) != expected:
        raise PfmFormatError(
            f"payload has {len(payload)} bytes, expected {expected}", pos + len(payload)
        )

    samples = np.frombuffer(payload, dtype=dtype)
    bad = np.flatnonzero(~np.isfinite(samples))
    if bad.size:
        raise PfmFormatError("non-finite sample in payload", pos + int(bad[0]) * 4)

    data = samples.reshape(height, width, 3)[::-1].astype(np.float64)
    return ImageBuffer(data)


def load_pfm(path: PathLike) -> ImageBuffer:
    """Load a 3-channel PFM file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}")
    return parse_pfm(raw)


def encode_pfm(image: ImageLike, little_endian: bool = True) -> bytes:
    """Encode an image as PFM bytes (float32 samples)."""
    data = as_array(image)
    height, width = data.shape[:2]
    dtype = '<f4' if little_endian else '>f4'
    scale = '-1.0' if little_endian else '1.0'
    header = f"PF\n{width} {height}\n{scale}\n".encode('ascii')
    payload = np.ascontiguousarray(data[::-1], dtype=dtype).tobytes()
    return header + payload


def save_pfm(image: ImageLike, path: PathLike, little_endian: bool = True) -> Path:
    """Write an image to a PFM file, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_pfm(image, little_endian=little_endian))
    logger.debug(f"Wrote {path}")
    return path


def quantize8(image: ImageLike) -> np.ndarray:
    """Clamp to [0, 1] and quantize with round-half-up to uint8."""
    data = np.clip(as_array(image), 0.0, 1.0)
    return np.floor(data * 255.0 + 0.5).astype(np.uint8)


def save_png8(image: ImageLike, path: PathLike) -> Path:
    """Write an 8-bit RGB PNG preview."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(quantize8(image)).save(path, format='PNG')
    return path
