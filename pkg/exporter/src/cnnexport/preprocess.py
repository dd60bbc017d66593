"""Single-crop preprocessing strategies for fixed-resolution CNN inputs.

Three ways to fit an arbitrary image into a square network input:

    center  - rescale so the smaller side matches, take the largest
              centered square crop (preserves aspect, discards borders)
    padding - rescale so the larger side matches, fill the rest with the
              training-set mean (preserves everything, adds dead pixels)
    squish  - rescale both sides, ignoring aspect ratio

Odd padding/crop splits put the extra pixel at the right/bottom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

IMAGENET_MEAN = (0.485, 0.456, 0.406)

CROPS = ("center", "padding", "squish")


@dataclass(frozen=True)
class CropGeometry:
    """Resolved geometry for one image: the resize target and either the
    crop window (center) or the padding offsets (padding)."""

    resized: tuple[int, int]  # (width, height) after aspect-preserving resize
    crop_box: tuple[int, int, int, int] | None = None  # left, top, right, bottom
    pad_offset: tuple[int, int] | None = None  # (left, top)


def crop_geometry(width: int, height: int, side: int, crop: str) -> CropGeometry:
    if width < 1 or height < 1:
        raise ValueError(f"degenerate image geometry {width}x{height}")
    if crop == "squish":
        return CropGeometry(resized=(side, side))
    if crop == "center":
        if width <= height:
            new_w = side
            new_h = max(side, int(height * side / width + 0.5))
        else:
            new_h = side
            new_w = max(side, int(width * side / height + 0.5))
        left = (new_w - side) // 2
        top = (new_h - side) // 2
        return CropGeometry(
            resized=(new_w, new_h), crop_box=(left, top, left + side, top + side)
        )
    if crop == "padding":
        if width >= height:
            new_w = side
            new_h = min(side, max(1, int(height * side / width + 0.5)))
        else:
            new_h = side
            new_w = min(side, max(1, int(width * side / height + 0.5)))
        left = (side - new_w) // 2
        top = (side - new_h) // 2
        return CropGeometry(resized=(new_w, new_h), pad_offset=(left, top))
    raise ValueError(f"unknown crop strategy {crop!r}, expected one of {CROPS}")


def crop_image(
    image: Image.Image,
    side: int,
    crop: str,
    mean: tuple[float, float, float] = IMAGENET_MEAN,
) -> np.ndarray:
    """Apply a crop strategy and return a (3, side, side) float32 array in
    mean-subtracted [0, 1] scale."""
    rgb = image.convert("RGB")
    geometry = crop_geometry(rgb.width, rgb.height, side, crop)
    resized = rgb.resize(geometry.resized, Image.BILINEAR)
    if geometry.crop_box is not None:
        resized = resized.crop(geometry.crop_box)
    arr = np.asarray(resized, dtype=np.float32) / 255.0
    if geometry.pad_offset is not None:
        canvas = np.empty((side, side, 3), dtype=np.float32)
        canvas[:] = np.asarray(mean, dtype=np.float32)
        left, top = geometry.pad_offset
        canvas[top : top + arr.shape[0], left : left + arr.shape[1]] = arr
        arr = canvas
    arr = arr - np.asarray(mean, dtype=np.float32)
    return np.transpose(arr, (2, 0, 1)).copy()
