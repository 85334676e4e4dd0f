"""Coarse-to-fine step ladder, sliding-window tile plans, and the coordinate
map from a fine-step tile to its coarse-step autoregressive crop.

Steps are 1-based in the public API (t = 1 is the coarsest); resolution
doubles from each step to the next, up to ceil rounding, and the final step
runs at the original resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from arvox.errors import InvalidArgumentError
from arvox.volume import Region3, Shape3


@dataclass(frozen=True)
class ScaleSchedule:
    """The full ladder for one input shape: T steps, per-step dims, patch edge."""

    T: int
    dims: tuple  # tuple of T Shape3 entries, dims[t-1] = shape at step t
    patch_edge: int


@dataclass(frozen=True)
class TilePlan:
    step: int
    patch_edge: int
    origins: tuple  # lexicographically sorted (oh, ow, od) triples
    blend: str  # weight profile identifier, "trapezoid"


@dataclass(frozen=True)
class ARCrop:
    """Where a fine tile's context lives in the previous step.

    ``parent_region`` is an (I/2)-cubed box in step-(t-1) coordinates whose
    origin is floor(tile_origin / 2), clamped to fit ``prev_dims``; whatever
    the unclamped box would have read beyond the volume is recorded in
    ``pad_low``/``pad_high`` (voxels of zero padding per axis).  The crop is
    later upsampled to ``target_extent`` cubed.
    """

    parent_region: Region3
    target_extent: int
    pad_low: tuple
    pad_high: tuple


def num_steps(shape: Shape3, patch_edge: int) -> int:
    """Smallest T with max(H,W,D) <= patch_edge * 2**(T-1); exact integers."""
    if patch_edge < 2:
        raise InvalidArgumentError(f"patch edge must be >= 2, got {patch_edge}")
    longest = max(shape)
    t = 1
    reach = patch_edge
    while reach < longest:
        reach *= 2
        t += 1
    return t


def step_dims(shape: Shape3, T: int, t: int) -> Shape3:
    """Per-axis ceil(extent / 2**(T-t)); t = T returns the shape unchanged."""
    if not 1 <= t <= T:
        raise InvalidArgumentError(f"step {t} outside 1..{T}")
    div = 1 << (T - t)
    return Shape3(*(-(-a // div) for a in shape))


def make_schedule(shape: Shape3, patch_edge: int) -> ScaleSchedule:
    shape = Shape3(*shape)
    if min(shape) < 1:
        raise InvalidArgumentError(f"extents must be positive, got {shape}")
    if patch_edge % 2:
        raise InvalidArgumentError(f"patch edge must be even, got {patch_edge}")
    T = num_steps(shape, patch_edge)
    dims = tuple(step_dims(shape, T, t) for t in range(1, T + 1))
    return ScaleSchedule(T=T, dims=dims, patch_edge=patch_edge)


def _axis_origins(extent: int, I: int, stride: int) -> list:
    if extent <= I:
        return [0]
    last = extent - I
    n = math.ceil(last / stride) + 1
    # n evenly spaced starts from 0 to last, rounded to ints, last one flush
    return sorted({min(round(i * last / (n - 1)), last) for i in range(n)})


def plan_tiles(dims: Shape3, patch_edge: int, overlap_fraction: float,
               step: int = 1) -> TilePlan:
    """Axis-separable sliding-window origins covering every voxel.

    Stride is at most ``patch_edge * (1 - overlap_fraction)``; the first tile
    starts at 0 and the last is clamped flush to the far border.  Extents
    smaller than the patch get a single origin-0 tile (consumers pad).
    """
    if not 0.0 <= overlap_fraction < 1.0:
        raise InvalidArgumentError(
            f"overlap fraction must be in [0,1), got {overlap_fraction}"
        )
    stride = max(1, int(patch_edge * (1.0 - overlap_fraction)))
    axes = [_axis_origins(e, patch_edge, stride) for e in Shape3(*dims)]
    origins = tuple(
        (h, w, d) for h in axes[0] for w in axes[1] for d in axes[2]
    )
    return TilePlan(step=step, patch_edge=patch_edge, origins=origins,
                    blend="trapezoid")


def ar_crop_for_tile(tile_origin, patch_edge: int, prev_dims: Shape3) -> ARCrop:
    """Map a fine tile to its half-scale source box in the previous step.

    The unclamped box is [floor(o/2), floor(o/2) + I/2) per axis.  Origins are
    clamped into the previous step's volume and any shortfall is returned as
    explicit zero-pad amounts so the caller can crop-with-pad and still know
    which voxels are synthetic.
    """
    if patch_edge % 2:
        raise InvalidArgumentError(f"patch edge must be even, got {patch_edge}")
    half = patch_edge // 2
    prev_dims = Shape3(*prev_dims)
    origin, pad_low, pad_high = [], [], []
    for o, e in zip(tile_origin, prev_dims):
        po = min(o // 2, max(0, e - half))
        avail = min(e - po, half)
        origin.append(po)
        pad_low.append(0)  # floor(o/2) >= 0, so low padding never occurs
        pad_high.append(half - avail)
    return ARCrop(
        parent_region=Region3(tuple(origin), Shape3(half, half, half)),
        target_extent=patch_edge,
        pad_low=tuple(pad_low),
        pad_high=tuple(pad_high),
    )


def blend_profile(patch_edge: int, overlap_fraction: float):
    """Separable trapezoid weight patch of shape (1, I, I, I), all weights > 0.

    Each axis ramps linearly over ``r = floor(I * overlap/2)`` voxels at both
    faces with weights (i+1)/(r+1), and is 1 in the interior.  Overlap 0 gives
    an all-ones patch.
    """
    import numpy as np

    if not 0.0 <= overlap_fraction < 1.0:
        raise InvalidArgumentError(
            f"overlap fraction must be in [0,1), got {overlap_fraction}"
        )
    I = patch_edge
    r = int(I * overlap_fraction / 2)
    axis = np.ones(I, np.float32)
    for i in range(min(r, I)):
        w = np.float32((i + 1) / (r + 1))
        axis[i] = min(axis[i], w)
        axis[I - 1 - i] = min(axis[I - 1 - i], w)
    patch = axis[:, None, None] * axis[None, :, None] * axis[None, None, :]
    return patch[None].astype(np.float32)
