"""Core 3D volume type and the spatial operations everything else builds on.

A :class:`Volume` is a channel-major float32 array of shape ``(C, H, W, D)``.
Operations are pure (they return new volumes) except :func:`accumulate`,
which mutates its destination buffer; callers stitching tiles concurrently
must serialize those calls or reduce private buffers afterward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from arvox.errors import InvalidArgumentError
from arvox import kernels


class Shape3(NamedTuple):
    """Spatial extents (h, w, d), all strictly positive."""

    h: int
    w: int
    d: int


class Region3(NamedTuple):
    """Axis-aligned box: non-negative origin plus extent.

    The box may poke past its parent volume only when the consuming
    operation takes an explicit pad value.
    """

    origin: tuple[int, int, int]
    extent: Shape3


@dataclass
class Volume:
    """Channel-major float32 voxel grid.

    ``data`` has shape (C, H, W, D) and is C-contiguous.  Construction checks
    are cheap (dtype/layout only); use :func:`from_array` with
    ``validate=True`` to also scan for non-finite values.
    """

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim == 3:
            self.data = self.data[None]
        if self.data.ndim != 4:
            raise InvalidArgumentError(
                f"volume data must be (C,H,W,D) or (H,W,D), got ndim={self.data.ndim}"
            )
        if self.data.dtype != np.float32:
            self.data = self.data.astype(np.float32)
        if not self.data.flags.c_contiguous:
            self.data = np.ascontiguousarray(self.data)
        if min(self.data.shape) < 1:
            raise InvalidArgumentError(f"empty volume shape {self.data.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> Shape3:
        return Shape3(*self.data.shape[1:])

    def copy(self) -> "Volume":
        return Volume(self.data.copy())


def from_array(arr, validate=False) -> Volume:
    """Wrap an array-like as a Volume; optionally scan for NaN/Inf."""
    v = Volume(np.asarray(arr))
    if validate and not np.isfinite(v.data).all():
        raise InvalidArgumentError("volume contains non-finite values")
    return v


def percentile(v: Volume, q: float) -> float:
    """Linear-interpolation (type-7) quantile over all voxels, all channels."""
    if not 0.0 <= q <= 1.0:
        raise InvalidArgumentError(f"quantile fraction must be in [0,1], got {q}")
    return float(np.quantile(v.data, q, method="linear"))


def normalize_percentile(v: Volume) -> Volume:
    """Affinely map [p02, p98] to [0, 1] and clamp; constant inputs → zeros.

    The bounds are cast to float32 before the subtraction so a voxel exactly
    at p98 lands on 1.0 exactly.
    """
    lo = np.float32(percentile(v, 0.02))
    hi = np.float32(percentile(v, 0.98))
    if hi == lo:
        return Volume(np.zeros_like(v.data))
    out = (v.data - lo) / (hi - lo)
    np.clip(out, 0.0, 1.0, out=out)
    return Volume(out.astype(np.float32))


def binarize_mask(v: Volume, threshold: float = 0.5) -> Volume:
    """Strict-greater thresholding of a single-channel volume to {0, 1}."""
    if v.channels != 1:
        raise InvalidArgumentError(
            f"binarize_mask needs a single channel, got {v.channels}"
        )
    return Volume((v.data > threshold).astype(np.float32))


def resample(v: Volume, target: Shape3, mode: str = "trilinear") -> Volume:
    """Resample to ``target`` extents (align-corners-false, edge-clamped)."""
    target = Shape3(*target)
    if min(target) < 1:
        raise InvalidArgumentError(f"target extents must be >= 1, got {target}")
    if mode == "trilinear":
        return Volume(kernels.resample_trilinear(v.data, target))
    if mode == "nearest":
        return Volume(kernels.resample_nearest(v.data, target))
    raise InvalidArgumentError(f"unknown resample mode {mode!r}")


def crop(v: Volume, r: Region3, pad: float = 0.0) -> Volume:
    """Extract ``r`` from ``v``; voxels outside the source take ``pad``."""
    (oh, ow, od), (eh, ew, ed) = r.origin, r.extent
    if min(oh, ow, od) < 0:
        raise InvalidArgumentError(f"region origin must be non-negative, got {r.origin}")
    C = v.channels
    H, W, D = v.shape
    out = np.full((C, eh, ew, ed), np.float32(pad), np.float32)
    # overlap of [origin, origin+extent) with the source box
    h0, h1 = min(oh, H), min(oh + eh, H)
    w0, w1 = min(ow, W), min(ow + ew, W)
    d0, d1 = min(od, D), min(od + ed, D)
    if h0 < h1 and w0 < w1 and d0 < d1:
        out[:, h0 - oh : h1 - oh, w0 - ow : w1 - ow, d0 - od : d1 - od] = v.data[
            :, h0:h1, w0:w1, d0:d1
        ]
    return Volume(out)


def region_slices(shape: Shape3, r: Region3):
    """Index tuples for the in-range part of ``r``: (dst_sel, patch_sel).

    Returns ``None`` when the region misses the volume entirely.
    """
    (oh, ow, od), (eh, ew, ed) = r.origin, r.extent
    H, W, D = shape
    h0, h1 = min(oh, H), min(oh + eh, H)
    w0, w1 = min(ow, W), min(ow + ew, W)
    d0, d1 = min(od, D), min(od + ed, D)
    if h0 >= h1 or w0 >= w1 or d0 >= d1:
        return None
    dst_sel = (slice(None), slice(h0, h1), slice(w0, w1), slice(d0, d1))
    patch_sel = (slice(None), slice(h0 - oh, h1 - oh), slice(w0 - ow, w1 - ow),
                 slice(d0 - od, d1 - od))
    return dst_sel, patch_sel


def accumulate(dst: Volume, weights: Volume, patch: Volume, patch_w: Volume,
               r: Region3) -> None:
    """Weighted paste: ``dst[r] += patch * patch_w``; ``weights[r] += patch_w``.

    ``patch_w`` is single-channel and broadcasts across the channels of
    ``patch``.  Portions of ``r`` outside ``dst`` are skipped.
    """
    if dst.channels != patch.channels:
        raise InvalidArgumentError(
            f"channel mismatch: dst has {dst.channels}, patch has {patch.channels}"
        )
    if weights.channels != 1 or patch_w.channels != 1:
        raise InvalidArgumentError("weight buffers must be single-channel")
    if tuple(patch.shape) != tuple(r.extent) or tuple(patch_w.shape) != tuple(r.extent):
        raise InvalidArgumentError("patch/patch_w extents must match the region")
    if tuple(dst.shape) != tuple(weights.shape):
        raise InvalidArgumentError("dst and weights must share a shape")
    sel = region_slices(dst.shape, r)
    if sel is None:
        return
    dst_sel, patch_sel = sel
    dst.data[dst_sel] += patch.data[patch_sel] * patch_w.data[patch_sel]
    weights.data[dst_sel] += patch_w.data[patch_sel]


def weighted_average(dst: Volume, weights: Volume) -> Volume:
    """Divide an accumulation buffer by its weights (zero weight → zero)."""
    w = weights.data
    out = np.where(w > 0, dst.data / np.where(w > 0, w, 1.0), 0.0)
    return Volume(out.astype(np.float32))
