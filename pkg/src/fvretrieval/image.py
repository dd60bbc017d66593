"""Grayscale image loading, resizing and the query perturbation protocols.

All transforms are pure functions of (input, parameters) on immutable
images, so they parallelize trivially across images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .store import FormatError

# Luminance of the conventional ImageNet RGB mean, used to fill pixels
# exposed by rotation and circular cropping.
DEFAULT_FILL = 0.456

REC601_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable grayscale image; pixels are row-major floats in [0, 1]."""

    pixels: np.ndarray

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "GrayImage":
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-d array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("image contains non-finite values")
        arr = np.clip(arr, 0.0, 1.0)
        arr.flags.writeable = False
        return cls(arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def _read_pnm_header(data: bytes, path):
    # Header tokens may be separated by whitespace and '#' comments.
    magic = data[:2]
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] not in (10, 13):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise FormatError(f"{path}: corrupt PNM header near byte {start}")
        fields.append(int(token))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError(f"{path}: missing payload separator in PNM header")
    width, height, maxval = fields
    if width < 1 or height < 1 or not (1 <= maxval <= 255):
        raise FormatError(f"{path}: unsupported PNM geometry {width}x{height} maxval {maxval}")
    return magic, width, height, maxval, pos + 1


def load_grayscale(path) -> GrayImage:
    """Load a raster file as luminance in [0, 1].

    Binary PGM (P5) and PPM (P6) are decoded natively; color is reduced
    with Rec.601 weights. Other formats go through Pillow when available.
    """
    path = Path(path)
    data = path.read_bytes()
    if data[:2] in (b"P5", b"P6"):
        magic, width, height, maxval, off = _read_pnm_header(data, path)
        channels = 1 if magic == b"P5" else 3
        need = width * height * channels
        payload = np.frombuffer(data, dtype=np.uint8, count=-1, offset=off)
        if payload.size < need:
            raise FormatError(f"{path}: truncated PNM payload")
        payload = payload[:need].astype(np.float64) / float(maxval)
        if channels == 1:
            pixels = payload.reshape(height, width)
        else:
            rgb = payload.reshape(height, width, 3)
            wr, wg, wb = REC601_WEIGHTS
            pixels = wr * rgb[:, :, 0] + wg * rgb[:, :, 1] + wb * rgb[:, :, 2]
        return GrayImage.from_array(pixels)

    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise FormatError(f"{path}: not a PGM/PPM file and Pillow is unavailable") from exc
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except Exception as exc:
        raise FormatError(f"{path}: decode failure ({exc})") from exc
    wr, wg, wb = REC601_WEIGHTS
    return GrayImage.from_array(wr * rgb[:, :, 0] + wg * rgb[:, :, 1] + wb * rgb[:, :, 2])


def _catmull_rom_weights(t: np.ndarray) -> np.ndarray:
    """Weights for taps at offsets -1, 0, 1, 2 (a = -0.5 kernel)."""
    t2 = t * t
    t3 = t2 * t
    return np.stack(
        [
            -0.5 * t3 + t2 - 0.5 * t,
            1.5 * t3 - 2.5 * t2 + 1.0,
            -1.5 * t3 + 2.0 * t2 + 0.5 * t,
            0.5 * t3 - 0.5 * t2,
        ],
        axis=1,
    )


def _resample_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Dense (n_out, n_in) Catmull-Rom interpolation matrix, edge-clamped."""
    out_idx = np.arange(n_out, dtype=np.float64)
    src = (out_idx + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    weights = _catmull_rom_weights(src - base)
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.repeat(np.arange(n_out), 4)
    cols = np.clip(base[:, None] + np.arange(-1, 3)[None, :], 0, n_in - 1).ravel()
    np.add.at(mat, (rows, cols), weights.ravel())
    return mat


def _resample_bicubic(pixels: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    h, w = pixels.shape
    out = pixels
    if new_h != h:
        out = _resample_matrix(new_h, h) @ out
    if new_w != w:
        out = out @ _resample_matrix(new_w, w).T
    return np.clip(out, 0.0, 1.0)


def resize_max_side(img: GrayImage, target: int) -> GrayImage:
    """Resize preserving aspect ratio so that max(width, height) == target."""
    if target < 1:
        raise ValueError(f"target side must be >= 1, got {target}")
    w, h = img.width, img.height
    if w >= h:
        new_w = target
        new_h = max(1, int(h * target / w + 0.5))
    else:
        new_h = target
        new_w = max(1, int(w * target / h + 0.5))
    if (new_w, new_h) == (w, h):
        return img
    return GrayImage.from_array(_resample_bicubic(img.pixels, new_h, new_w))


def circular_center_crop(img: GrayImage, fill: float = DEFAULT_FILL) -> GrayImage:
    """Set pixels outside the inscribed centered circle to ``fill``."""
    h, w = img.height, img.width
    radius = min(w, h) / 2.0
    ys = np.arange(h, dtype=np.float64) + 0.5 - h / 2.0
    xs = np.arange(w, dtype=np.float64) + 0.5 - w / 2.0
    mask = ys[:, None] ** 2 + xs[None, :] ** 2 <= radius**2
    out = np.where(mask, img.pixels, fill)
    return GrayImage.from_array(out)


def rotate(img: GrayImage, angle: float, fill: float = DEFAULT_FILL) -> GrayImage:
    """Rotate about the image center with bilinear sampling.

    Output has the same dimensions; samples falling outside the source
    take ``fill``. Positive angles rotate the sampling grid clockwise in
    y-down coordinates.
    """
    h, w = img.height, img.width
    rad = math.radians(angle)
    cos_a, sin_a = math.cos(rad), math.sin(rad)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    xs = np.arange(w, dtype=np.float64) - cx
    ys = np.arange(h, dtype=np.float64) - cy
    dx = np.broadcast_to(xs[None, :], (h, w))
    dy = np.broadcast_to(ys[:, None], (h, w))
    sx = cx + cos_a * dx - sin_a * dy
    sy = cy + sin_a * dx + cos_a * dy
    # Tolerate sin/cos roundoff so full turns stay identities.
    eps = 1e-9
    inside = (sx >= -eps) & (sx <= w - 1 + eps) & (sy >= -eps) & (sy <= h - 1 + eps)

    x0 = np.clip(np.floor(sx).astype(np.int64), 0, w - 1)
    y0 = np.clip(np.floor(sy).astype(np.int64), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(sx - x0, 0.0, 1.0)
    fy = np.clip(sy - y0, 0.0, 1.0)
    p = img.pixels
    top = p[y0, x0] * (1 - fx) + p[y0, x1] * fx
    bottom = p[y1, x0] * (1 - fx) + p[y1, x1] * fx
    sampled = top * (1 - fy) + bottom * fy
    return GrayImage.from_array(np.where(inside, sampled, fill))


def downscale(img: GrayImage, ratio: float) -> GrayImage:
    """Shrink by ``ratio`` with a matched anti-alias Gaussian pre-blur.

    Blur sigma is 0.6 * sqrt((1/ratio)^2 - 1), the scale-space matching
    rule, which degenerates to no blur at ratio 1. Resampling is bicubic.
    """
    if not (0.0 < ratio <= 1.0):
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if ratio == 1.0:
        return img
    sigma = 0.6 * math.sqrt((1.0 / ratio) ** 2 - 1.0)
    blurred = gaussian_filter(img.pixels, sigma=sigma, mode="reflect")
    new_w = max(1, int(img.width * ratio + 0.5))
    new_h = max(1, int(img.height * ratio + 0.5))
    return GrayImage.from_array(_resample_bicubic(blurred, new_h, new_w))


def rotation_query_protocol(
    img: GrayImage, angle: float, fill: float = DEFAULT_FILL
) -> GrayImage:
    """Circularly crop, then rotate; the perturbation applied to queries
    (and, per grid angle, to database images) in rotation experiments."""
    cropped = circular_center_crop(img, fill)
    if angle == 0:
        return cropped
    return rotate(cropped, angle, fill)
