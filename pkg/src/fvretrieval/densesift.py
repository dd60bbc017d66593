"""Dense upright SIFT extraction on a fixed grid, single- or multi-scale.

Descriptors are 4x4 spatial bins x 8 orientation bins of Gaussian-weighted
gradient magnitudes with trilinear soft assignment, L2-normalized, clamped
and renormalized. There is no interest-point detection and no orientation
assignment: patches are axis-aligned squares of side ``magnification *
scale`` placed every ``stride`` pixels.

The per-patch histogram is a separable cross-correlation, so the whole
grid is computed with a handful of matrix products per scale: orientation
soft-assignment first spreads gradient magnitude over 8 maps, then
per-axis kernels (spatial-bin triangle weight times the Gaussian window)
gather each map into the 4x4 spatial bins at every grid point at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .image import GrayImage
from .store import DescriptorSet, LocalDescriptorSet, ValidationError

N_SPATIAL_BINS = 4
N_ORIENTATION_BINS = 8
DESCRIPTOR_DIM = N_SPATIAL_BINS * N_SPATIAL_BINS * N_ORIENTATION_BINS

MULTISCALE_SCALES = (4.0, 8.0, 12.0, 16.0)


@dataclass(frozen=True)
class DenseSiftParams:
    stride: int = 4
    magnification: float = 6.0
    scales: tuple[float, ...] = (4.0,)
    clamp: float = 0.2
    low_contrast_norm_floor: float = 1e-6

    def __post_init__(self):
        if self.stride < 1:
            raise ValidationError(f"stride must be >= 1, got {self.stride}")
        if any(s <= 0 for s in self.scales):
            raise ValidationError("all scales must be positive")
        if not (0.0 < self.clamp <= 1.0):
            raise ValidationError(f"clamp must be in (0, 1], got {self.clamp}")

    def patch_side(self, scale: float) -> int:
        return int(round(self.magnification * scale))


def _gradient_orientation_maps(pixels: np.ndarray) -> np.ndarray:
    """Spread gradient magnitude over 8 orientation maps (soft-assigned)."""
    gy, gx = np.gradient(pixels)
    magnitude = np.hypot(gx, gy)
    theta = np.arctan2(gy, gx) % (2.0 * np.pi)
    coord = theta * (N_ORIENTATION_BINS / (2.0 * np.pi))
    low = np.floor(coord)
    frac = coord - low
    bin_low = low.astype(np.int64) % N_ORIENTATION_BINS
    bin_high = (bin_low + 1) % N_ORIENTATION_BINS
    maps = np.zeros((N_ORIENTATION_BINS,) + pixels.shape, dtype=np.float64)
    for k in range(N_ORIENTATION_BINS):
        maps[k] = magnitude * ((bin_low == k) * (1.0 - frac) + (bin_high == k) * frac)
    return maps


def _axis_kernels(side: int) -> np.ndarray:
    """(4, side) kernels: spatial-bin triangle weights times the Gaussian
    window factor along one axis (sigma = half patch side)."""
    offsets = np.arange(side, dtype=np.float64)
    u = (offsets + 0.5) * (N_SPATIAL_BINS / side) - 0.5
    base = np.floor(u)
    frac = u - base
    kernels = np.zeros((N_SPATIAL_BINS, side), dtype=np.float64)
    for b, w in ((base, 1.0 - frac), (base + 1, frac)):
        valid = (b >= 0) & (b < N_SPATIAL_BINS)
        np.add.at(kernels, (b[valid].astype(np.int64), offsets[valid].astype(np.int64)), w[valid])
    sigma = side / 2.0
    centered = offsets - (side - 1) / 2.0
    gauss = np.exp(-(centered**2) / (2.0 * sigma**2))
    return kernels * gauss[None, :]


def _gather_matrix(kernels: np.ndarray, n_points: int, stride: int, length: int) -> np.ndarray:
    """(4, n_points, length) matrices placing each axis kernel at every
    grid offset along one image axis."""
    side = kernels.shape[1]
    mats = np.zeros((N_SPATIAL_BINS, n_points, length), dtype=np.float64)
    rows = np.arange(n_points)[:, None]
    cols = rows * stride + np.arange(side)[None, :]
    for b in range(N_SPATIAL_BINS):
        mats[b][rows, cols] = kernels[b][None, :]
    return mats


def _extract_at_scale(
    orientation_maps: np.ndarray, params: DenseSiftParams, scale: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (xs, ys, descriptors) for one scale; empty when the patch
    does not fit."""
    height, width = orientation_maps.shape[1:]
    side = params.patch_side(scale)
    if side > width or side > height or side < 1:
        empty = np.empty(0)
        return empty, empty, np.empty((0, DESCRIPTOR_DIM))
    nx = (width - side) // params.stride + 1
    ny = (height - side) // params.stride + 1

    kernels = _axis_kernels(side)
    gather_x = _gather_matrix(kernels, nx, params.stride, width)
    gather_y = _gather_matrix(kernels, ny, params.stride, height)

    # hist[gy, gx, row_bin, col_bin, orientation]
    hist = np.empty((ny, nx, N_SPATIAL_BINS, N_SPATIAL_BINS, N_ORIENTATION_BINS))
    for o in range(N_ORIENTATION_BINS):
        for by in range(N_SPATIAL_BINS):
            partial = gather_y[by] @ orientation_maps[o]
            for bx in range(N_SPATIAL_BINS):
                hist[:, :, by, bx, o] = partial @ gather_x[bx].T

    descriptors = hist.reshape(ny * nx, DESCRIPTOR_DIM)
    centers = (side - 1) / 2.0
    xs = (np.tile(np.arange(nx), ny) * params.stride + centers).astype(np.float64)
    ys = (np.repeat(np.arange(ny), nx) * params.stride + centers).astype(np.float64)
    return xs, ys, descriptors


def _normalize_descriptors(
    descriptors: np.ndarray, params: DenseSiftParams
) -> tuple[np.ndarray, np.ndarray]:
    """L2-normalize, clamp, renormalize; returns (kept mask, normalized).

    Clamp and renormalize are iterated to their fixed point so the output
    satisfies both halves of the contract (unit norm and components at or
    below the clamp); a single pass would push clamped components back
    above the cap when renormalizing.
    """
    norms = np.linalg.norm(descriptors, axis=1)
    keep = norms >= params.low_contrast_norm_floor
    kept = descriptors[keep] / norms[keep, None]
    for _ in range(50):
        kept = np.minimum(kept, params.clamp)
        kept /= np.linalg.norm(kept, axis=1)[:, None]
        if kept.size == 0 or kept.max() <= params.clamp * (1.0 + 1e-9):
            break
    return keep, kept


def extract_dense_sift(
    img: GrayImage, params: DenseSiftParams = DenseSiftParams(), image_id: str = ""
) -> LocalDescriptorSet:
    """Extract dense upright SIFT descriptors at every scale in ``params``.

    Grids are anchored per scale at the top-left position where the patch
    fits; low-contrast patches (pre-normalization gradient energy below
    the floor) are dropped. Degenerate geometry yields an empty set.
    """
    if img.width < 2 or img.height < 2:
        return LocalDescriptorSet(
            image_id, img.width, img.height,
            np.empty(0), np.empty(0), np.empty(0), np.empty((0, DESCRIPTOR_DIM)),
        )
    orientation_maps = _gradient_orientation_maps(img.pixels)
    all_xs, all_ys, all_scales, all_vecs = [], [], [], []
    for scale in params.scales:
        xs, ys, raw = _extract_at_scale(orientation_maps, params, scale)
        if raw.shape[0] == 0:
            continue
        keep, normalized = _normalize_descriptors(raw, params)
        all_xs.append(xs[keep])
        all_ys.append(ys[keep])
        all_scales.append(np.full(int(keep.sum()), float(scale)))
        all_vecs.append(normalized)
    if not all_vecs:
        return LocalDescriptorSet(
            image_id, img.width, img.height,
            np.empty(0), np.empty(0), np.empty(0), np.empty((0, DESCRIPTOR_DIM)),
        )
    return LocalDescriptorSet(
        image_id,
        img.width,
        img.height,
        np.concatenate(all_xs),
        np.concatenate(all_ys),
        np.concatenate(all_scales),
        np.concatenate(all_vecs),
    )


def extract_multiscale(
    img: GrayImage, params: DenseSiftParams = DenseSiftParams(scales=MULTISCALE_SCALES),
    image_id: str = "",
) -> LocalDescriptorSet:
    """Union of per-scale dense extractions; each record carries its scale."""
    return extract_dense_sift(img, params, image_id)


def grid_count(width: int, height: int, params: DenseSiftParams, scale: float) -> int:
    """Number of grid points for one scale before contrast filtering."""
    side = params.patch_side(scale)
    if side > width or side > height:
        return 0
    return ((width - side) // params.stride + 1) * ((height - side) // params.stride + 1)


def _pack_record_id(image_id: str, x: float, y: float, scale: float) -> str:
    return f"{image_id}#{x:g}:{y:g}:{scale:g}"


def _unpack_record_id(record_id: str) -> tuple[str, float, float, float]:
    image_id, _, packed = record_id.rpartition("#")
    try:
        x, y, scale = (float(v) for v in packed.split(":"))
    except ValueError as exc:
        raise ValidationError(f"record id {record_id!r} does not pack x:y:scale") from exc
    return image_id, x, y, scale


def local_to_descriptor_set(local: LocalDescriptorSet) -> DescriptorSet:
    """Serialize local descriptors as a GDSC-compatible set; grid geometry
    is packed into each record id suffix."""
    ids = tuple(
        _pack_record_id(local.image_id, x, y, s)
        for x, y, s in zip(local.xs, local.ys, local.scales)
    )
    metadata = {
        "kind": "localdesc",
        "image_id": local.image_id,
        "width": str(local.width),
        "height": str(local.height),
    }
    return DescriptorSet(DESCRIPTOR_DIM, ids, local.vectors, metadata)


def local_from_descriptor_set(dset: DescriptorSet) -> LocalDescriptorSet:
    """Inverse of :func:`local_to_descriptor_set`."""
    if dset.metadata.get("kind") != "localdesc":
        raise ValidationError("descriptor set does not carry local descriptors")
    image_id = dset.metadata.get("image_id", "")
    width = int(dset.metadata["width"])
    height = int(dset.metadata["height"])
    n = len(dset.ids)
    xs = np.empty(n)
    ys = np.empty(n)
    scales = np.empty(n)
    for i, record_id in enumerate(dset.ids):
        _, xs[i], ys[i], scales[i] = _unpack_record_id(record_id)
    return LocalDescriptorSet(image_id, width, height, xs, ys, scales, dset.vectors)
