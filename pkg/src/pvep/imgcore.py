"""Image container, lossless PPM file I/O, and deterministic random streams.

Images are numpy arrays of shape (H, W, 3) holding float64 values in
[0, 1], row-major.  Everything downstream (corruption operators, the
policy network, the tabletop renderer) shares this one representation.

The only image format is binary P6 PPM with maxval 255: dependency-free
and bit-exact, which is what the regression fixtures need.
"""

from __future__ import annotations

import hashlib
import os
import tempfile

import numpy as np

MASK64 = (1 << 64) - 1


class PpmError(ValueError):
    """Malformed PPM input. `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def new_image(height: int, width: int, fill: float = 0.0) -> np.ndarray:
    """Allocate an (H, W, 3) image filled with a constant value in [0, 1]."""
    if height <= 0 or width <= 0:
        raise ValueError(f"image dimensions must be positive, got {height}x{width}")
    if not 0.0 <= fill <= 1.0:
        raise ValueError(f"fill value {fill} outside [0, 1]")
    return np.full((height, width, 3), fill, dtype=np.float64)


def check_image(img: np.ndarray) -> np.ndarray:
    """Validate the image contract: (H, W, 3) float array, finite, in [0, 1]."""
    if not isinstance(img, np.ndarray) or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) array, got {getattr(img, 'shape', type(img))}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"empty image {img.shape}")
    if not np.issubdtype(img.dtype, np.floating):
        raise ValueError(f"expected float pixels, got dtype {img.dtype}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite pixels")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError(f"pixel values outside [0, 1]: min={img.min()}, max={img.max()}")
    return img


def write_bytes_atomic(path, data: bytes) -> None:
    """Write bytes via a temp file + rename so interrupted runs never leave partial output."""
    path = os.fspath(path)
    parent = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=parent, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# PPM (binary P6, maxval 255)
# ---------------------------------------------------------------------------

_WHITESPACE = b" \t\r\n\x0b\x0c"


def _skip_space_and_comments(data: bytes, pos: int) -> int:
    while pos < len(data):
        b = data[pos : pos + 1]
        if b in (b"#",):
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        elif b and b in _WHITESPACE:
            pos += 1
        else:
            break
    return pos


def _read_int_token(data: bytes, pos: int, what: str) -> tuple[int, int]:
    pos = _skip_space_and_comments(data, pos)
    start = pos
    while pos < len(data) and data[pos : pos + 1].isdigit():
        pos += 1
    if pos == start:
        raise PpmError(f"malformed header: expected integer for {what}", start)
    return int(data[start:pos]), pos


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 PPM (8-bit, maxval 255) into an image in [0, 1].

    Channel value v maps to v / 255.  Header comments are tolerated.
    Raises PpmError with a byte offset on malformed header, unsupported
    maxval, or truncated payload.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise PpmError("malformed header: not a binary P6 PPM", 0)
    pos = 2
    if pos >= len(data) or data[pos : pos + 1] not in _WHITESPACE and data[pos : pos + 1] != b"#":
        raise PpmError("malformed header: magic not followed by whitespace", pos)
    width, pos = _read_int_token(data, pos, "width")
    height, pos = _read_int_token(data, pos, "height")
    maxval_at = _skip_space_and_comments(data, pos)
    maxval, pos = _read_int_token(data, pos, "maxval")
    if maxval != 255:
        raise PpmError(f"unsupported maxval {maxval} (only 255)", maxval_at)
    if width < 1 or height < 1:
        raise PpmError(f"malformed header: bad dimensions {width}x{height}", 2)
    if pos >= len(data) or data[pos : pos + 1] not in _WHITESPACE:
        raise PpmError("malformed header: maxval not followed by whitespace", pos)
    pos += 1  # exactly one whitespace byte before the payload
    expected = width * height * 3
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise PpmError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}", len(data)
        )
    if pos + expected != len(data):
        raise PpmError("trailing data after pixel payload", pos + expected)
    raw = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    return (raw / 255.0).reshape(height, width, 3)


def write_ppm(img: np.ndarray, path) -> None:
    """Write an image as binary P6 PPM, maxval 255, no comments.

    Channel bytes are round(pixel * 255) with round-half-up, clamped to
    [0, 255]; the fixed rounding rule keeps golden files stable.
    """
    check_image(img)
    h, w = img.shape[:2]
    scaled = np.floor(img * 255.0 + 0.5)  # round half up
    payload = np.clip(scaled, 0, 255).astype(np.uint8).tobytes()
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    write_bytes_atomic(path, header + payload)


# ---------------------------------------------------------------------------
# Deterministic randomness
# ---------------------------------------------------------------------------


def derive_seed(root: int, *parts) -> int:
    """Derive a stable 64-bit seed from a root seed and arbitrary labels.

    SHA-256 based, so derivations are reproducible across runs and
    platforms and independent of Python's salted hash().
    """
    blob = "\x1f".join([str(root & MASK64)] + [str(p) for p in parts]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


class SeededRng:
    """Deterministic pseudo-random stream (PCG64 behind numpy's Generator).

    Identical seeds yield identical draw sequences.  Normal draws use
    numpy's ziggurat; the generator choice is fixed so seeds reproduce
    bit-exactly within one build.  A stream is single-owner: parallel
    work derives one child seed per unit of work instead of sharing.
    """

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, *parts) -> "SeededRng":
        """Child stream keyed by (this seed, *parts); never shares state."""
        return SeededRng(derive_seed(self.seed, *parts))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, mean: float = 0.0, stddev: float = 1.0, size=None):
        """Normal draw(s); stddev = 0 returns the mean exactly."""
        if stddev < 0:
            raise ValueError(f"stddev must be >= 0, got {stddev}")
        return self._gen.normal(mean, stddev, size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
