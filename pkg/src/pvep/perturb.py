"""Pixel-level attack operators: blur, noise, brightness, typography, patches.

All operators are pure functions from valid images to valid images (every
output stays in [0, 1]).  The typography and patch operators touch only
pixels inside their declared footprint.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .font5x7 import GLYPH_ADVANCE, GLYPH_HEIGHT, GLYPH_WIDTH, glyph_rows
from .imgcore import SeededRng, check_image, write_bytes_atomic

PATCH_MAGIC = b"PVEPPAT1"


@dataclass(frozen=True)
class BlurParams:
    """Gaussian blur strength. sigma equals the radius in pixels (PIL-style
    radius semantics); the kernel is truncated at +-ceil(3*sigma)."""

    radius_px: int

    def __post_init__(self):
        if self.radius_px < 1:
            raise ValueError(f"blur radius must be a positive integer, got {self.radius_px}")

    @property
    def sigma(self) -> float:
        return float(self.radius_px)

    @property
    def kernel_halfwidth(self) -> int:
        return math.ceil(3 * self.sigma)


@dataclass(frozen=True)
class NoiseParams:
    """Additive Gaussian pixel noise with the given mean and variance."""

    variance: float
    mean: float = 0.0

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError(f"noise variance must be >= 0, got {self.variance}")


@dataclass(frozen=True)
class BrightnessParams:
    """Multiplicative brightness factor; >1 brightens, <1 darkens."""

    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 2.0:
            raise ValueError(f"brightness factor must be in [0, 2], got {self.alpha}")


@dataclass(frozen=True)
class TypoSpec:
    """Text drawn into the image with the embedded 5x7 font.

    anchor is the (row, col) of the first glyph's top-left corner; glyphs
    outside the image are clipped, never wrapped.
    """

    text: str
    anchor: tuple[int, int] = (1, 1)
    scale: int = 1
    color: tuple[float, float, float] = (0.0, 0.0, 0.0)
    category: str = ""

    def __post_init__(self):
        if not self.text:
            raise ValueError("typography text must be non-empty")
        if self.scale < 1:
            raise ValueError(f"glyph scale must be a positive integer, got {self.scale}")
        for ch in self.text:
            glyph_rows(ch)  # raises naming any unsupported character
        if any(not 0.0 <= c <= 1.0 for c in self.color):
            raise ValueError(f"text color {self.color} outside [0, 1]")


@dataclass
class PatchSpec:
    """A square overlay patch: P x P x 3 values in [0, 1] plus placement.

    placement (row, col) pins the patch; None means a fresh uniform
    placement is drawn per application.  delta is stored float32 so file
    round-trips are bit-exact.
    """

    delta: np.ndarray
    placement: tuple[int, int] | None = None
    side_px: int = field(init=False)

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=np.float32)
        if d.ndim != 3 or d.shape[0] != d.shape[1] or d.shape[2] != 3:
            raise ValueError(f"patch must be (P, P, 3), got {d.shape}")
        if d.shape[0] < 1:
            raise ValueError("patch side must be >= 1")
        if not np.all(np.isfinite(d)) or d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("patch values must be finite and within [0, 1]")
        self.delta = d
        self.side_px = int(d.shape[0])


# ---------------------------------------------------------------------------
# Blur
# ---------------------------------------------------------------------------


def _kernel_1d(params: BlurParams) -> np.ndarray:
    hw = params.kernel_halfwidth
    offsets = np.arange(-hw, hw + 1, dtype=np.float64)
    k = np.exp(-(offsets**2) / (2.0 * params.sigma**2))
    return k / k.sum()


def gaussian_kernel(params: BlurParams) -> np.ndarray:
    """2D Gaussian weight grid over a (2*halfwidth+1)^2 window.

    Evaluated from the isotropic Gaussian density and renormalized to sum
    exactly 1 (the continuous normalizer does not survive truncation to a
    discrete window).
    """
    k1 = _kernel_1d(params)
    return np.outer(k1, k1)


def blur(img: np.ndarray, params: BlurParams) -> np.ndarray:
    """Convolve with the Gaussian kernel, clamp-to-edge boundary handling.

    Separable implementation; identical (up to float round-off) to dense
    2D convolution with gaussian_kernel.  Each pass accumulates in deviation
    form, out = x + sum_i w_i * (shift_i(x) - x), which is algebraically the
    same for a unit-sum kernel but preserves constant images bit for bit:
    every deviation term is exactly zero, so no round-off can creep in.
    """
    check_image(img)
    k1 = _kernel_1d(params)
    hw = params.kernel_halfwidth
    padded = np.pad(img, ((hw, hw), (0, 0), (0, 0)), mode="edge")
    h = img.shape[0]
    rows = img.copy()
    for i, w in enumerate(k1):
        if i != hw:
            rows += w * (padded[i : i + h] - img)
    padded = np.pad(rows, ((0, 0), (hw, hw), (0, 0)), mode="edge")
    w_px = img.shape[1]
    out = rows.copy()
    for j, w in enumerate(k1):
        if j != hw:
            out += w * (padded[:, j : j + w_px] - rows)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Noise / brightness
# ---------------------------------------------------------------------------


def add_gaussian_noise(img: np.ndarray, params: NoiseParams, rng: SeededRng) -> np.ndarray:
    """Add per-pixel independent Gaussian noise, then clamp to [0, 1]."""
    check_image(img)
    noise = rng.normal(params.mean, math.sqrt(params.variance), size=img.shape)
    return np.clip(img + noise, 0.0, 1.0)


def adjust_brightness(img: np.ndarray, params: BrightnessParams) -> np.ndarray:
    """Multiply every pixel by the brightness factor, clamp to [0, 1]."""
    check_image(img)
    return np.clip(img * params.alpha, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Typography
# ---------------------------------------------------------------------------


def render_typography(img: np.ndarray, spec: TypoSpec) -> np.ndarray:
    """Draw the text over the image: glyph-on pixels are overwritten with
    spec.color (opaque overlay, not additive blending); everything else is
    untouched."""
    check_image(img)
    out = img.copy()
    h, w = img.shape[:2]
    color = np.asarray(spec.color, dtype=np.float64)
    row0, col0 = spec.anchor
    s = spec.scale
    for idx, ch in enumerate(spec.text):
        rows = glyph_rows(ch)
        gcol0 = col0 + idx * GLYPH_ADVANCE * s
        if gcol0 >= w or row0 >= h:
            continue
        for gr in range(GLYPH_HEIGHT):
            for gc in range(GLYPH_WIDTH):
                if rows[gr][gc] != "#":
                    continue
                r_lo = row0 + gr * s
                c_lo = gcol0 + gc * s
                r_hi = min(r_lo + s, h)
                c_hi = min(c_lo + s, w)
                r_lo = max(r_lo, 0)
                c_lo = max(c_lo, 0)
                if r_lo < r_hi and c_lo < c_hi:
                    out[r_lo:r_hi, c_lo:c_hi] = color
    return out


# ---------------------------------------------------------------------------
# Patch compositing and serialization
# ---------------------------------------------------------------------------


def resolve_placement(
    patch: PatchSpec, height: int, width: int, rng: SeededRng | None
) -> tuple[int, int]:
    """Pin down where the patch goes; randomized placements draw from rng."""
    p = patch.side_px
    if p > height or p > width:
        raise ValueError(f"patch side {p} exceeds image {height}x{width}")
    if patch.placement is not None:
        r, c = patch.placement
        if r < 0 or c < 0 or r + p > height or c + p > width:
            raise ValueError(f"placement ({r}, {c}) puts a {p}px patch outside {height}x{width}")
        return int(r), int(c)
    if rng is None:
        raise ValueError("randomized placement needs an rng")
    return int(rng.integers(0, height - p + 1)), int(rng.integers(0, width - p + 1))


def apply_patch(
    img: np.ndarray, patch: PatchSpec, rng: SeededRng | None = None
) -> tuple[np.ndarray, tuple[int, int]]:
    """Overwrite the pixels under the patch mask with its values.

    Returns the composited image and the resolved (row, col) placement so
    gradients can be routed back through the footprint during
    optimization.  Applying the same patch twice at one placement is
    idempotent (overwrite semantics).
    """
    check_image(img)
    r, c = resolve_placement(patch, img.shape[0], img.shape[1], rng)
    p = patch.side_px
    out = img.copy()
    out[r : r + p, c : c + p] = patch.delta.astype(np.float64)
    return out, (r, c)


def write_patch(patch: PatchSpec, path) -> None:
    """Serialize: 8-byte magic, u32 side, then P*P*3 little-endian float32."""
    header = PATCH_MAGIC + struct.pack("<I", patch.side_px)
    body = patch.delta.astype("<f4").tobytes()
    write_bytes_atomic(path, header + body)


def read_patch(path) -> PatchSpec:
    """Read a serialized patch; round-trips write_patch bit-exactly."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:8] != PATCH_MAGIC:
        raise ValueError(f"not a patch file (expected magic {PATCH_MAGIC.decode()}): {path}")
    (side,) = struct.unpack("<I", data[8:12])
    expected = side * side * 3 * 4
    body = data[12:]
    if len(body) != expected:
        raise ValueError(f"patch payload length {len(body)} != expected {expected}: {path}")
    delta = np.frombuffer(body, dtype="<f4").reshape(side, side, 3).copy()
    return PatchSpec(delta=delta)
