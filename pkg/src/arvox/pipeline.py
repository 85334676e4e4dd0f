"""Coarse-to-fine autoregressive inference over full volumes.

The input is resampled down a ladder of scales (each step doubling resolution
up to ceil rounding).  The coarsest scale is predicted in one padded forward
with no autoregressive context; every later step slides an I-cubed window
over the target, hands each tile the context pairs cropped at the same spot
plus the matching half-scale crop of the previous step's prediction
(upsampled back to the window size), and stitches the per-tile outputs with
trapezoid blend weights.  The final step runs at the original resolution, so
the output always matches the input extents.

A config-selected identity stub can stand in for the network: it returns its
target tile unchanged, which makes the whole pipeline a (blended) identity
and lets the tiling/crop/stitch bookkeeping be verified exactly, no weights
involved.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from arvox.context import ARContext, ContextSet, crop_context, resize_context
from arvox.errors import ConfigError, InvalidArgumentError
from arvox.schedule import (ar_crop_for_tile, blend_profile, make_schedule,
                            plan_tiles)
from arvox.unet import UNetConfig, model_forward
from arvox.volume import (Region3, Shape3, Volume, binarize_mask, crop,
                          region_slices, resample)

TASK_KINDS = ("segmentation", "regression")
MODEL_KINDS = ("unet", "identity")


@dataclass
class InferenceRequest:
    target: Volume
    context: ContextSet
    config: UNetConfig
    task_kind: str = "regression"
    overlap_fraction: float = 0.25
    na_icl_enabled: bool = True
    model: str = "unet"
    context_batch_size: int = 1
    keep_intermediates: bool = False

    def validate(self):
        if self.target.channels != 1:
            raise InvalidArgumentError("target must be single-channel")
        if tuple(self.context.shape) != tuple(self.target.shape):
            raise InvalidArgumentError(
                f"context extents {tuple(self.context.shape)} != target "
                f"extents {tuple(self.target.shape)}"
            )
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise InvalidArgumentError(
                f"overlap_fraction must be in [0,1), got {self.overlap_fraction}"
            )
        if self.task_kind not in TASK_KINDS:
            raise InvalidArgumentError(f"task_kind must be one of {TASK_KINDS}")
        if self.model not in MODEL_KINDS:
            raise InvalidArgumentError(f"model must be one of {MODEL_KINDS}")


@dataclass
class StepTrace:
    """Observability record: one entry per executed step.

    ``seconds`` values are wall-clock and excluded from persisted reports so
    reruns stay byte-identical.
    """

    steps: list = field(default_factory=list)
    companion_mask: Volume = None
    intermediates: list = field(default_factory=list)

    def add_step(self, t, dims, n_tiles, seconds, tile_seconds):
        self.steps.append({
            "t": t,
            "dims": list(dims),
            "tiles": n_tiles,
            "seconds": seconds,
            "tile_seconds": tile_seconds,
        })

    def as_json_dict(self):
        return {
            "T": len(self.steps),
            "dims": [s["dims"] for s in self.steps],
            "tiles_per_step": [s["tiles"] for s in self.steps],
        }


def _pad_to_patch(v: Volume, edge: int) -> Volume:
    if tuple(v.shape) == (edge, edge, edge):
        return v
    return crop(v, Region3((0, 0, 0), Shape3(edge, edge, edge)), 0.0)


def _pad_context(s: ContextSet, edge: int) -> ContextSet:
    if tuple(s.shape) == (edge, edge, edge):
        return s
    return crop_context(s, Region3((0, 0, 0), Shape3(edge, edge, edge)), 0.0)


def _forward(req: InferenceRequest, w, x: Volume, s: ContextSet, a) -> Volume:
    if req.model == "identity":
        return x.copy()
    return model_forward(x, s, a, w, req.config,
                         context_batch_size=req.context_batch_size)


def _predict_single(req, w, x: Volume, s: ContextSet, a) -> Volume:
    """One forward at arbitrary dims <= I: pad in, crop the prediction back."""
    I = req.config.patch_edge
    dims = x.shape
    y = _forward(req, w, _pad_to_patch(x, I), _pad_context(s, I), a)
    if tuple(dims) != (I, I, I):
        y = crop(y, Region3((0, 0, 0), dims), 0.0)
    return y


def _predict_tiled(req, w, x: Volume, s: ContextSet, prev) -> tuple:
    """Sliding-window pass at x's dims; ``prev`` is (image, prediction) at the
    previous step's dims, or None for the single-scale ablation."""
    I = req.config.patch_edge
    dims = x.shape
    if max(dims) <= I:
        a = None
        if prev is not None:
            a = _ar_context_for_tile((0, 0, 0), I, prev)
        y = _predict_single(req, w, x, s, a)
        return y, 1, []
    plan = plan_tiles(dims, I, req.overlap_fraction)
    # Stitch in float64: equal float32 contributions then cancel exactly in
    # the final weighted division, so the identity stub round-trips bitwise.
    blend64 = blend_profile(I, req.overlap_fraction).astype(np.float64)
    dst = np.zeros((1, *dims), np.float64)
    wsum = np.zeros((1, *dims), np.float64)
    tile_seconds = []
    for origin in plan.origins:
        t0 = time.perf_counter()
        r = Region3(origin, Shape3(I, I, I))
        x_i = crop(x, r, 0.0)
        s_i = crop_context(s, r, 0.0)
        a_i = _ar_context_for_tile(origin, I, prev) if prev is not None else None
        y_i = _forward(req, w, x_i, s_i, a_i)
        sel = region_slices(Shape3(*dims), r)
        dst_sel, patch_sel = sel
        dst[dst_sel] += y_i.data[patch_sel] * blend64[patch_sel]
        wsum[dst_sel] += blend64[patch_sel]
        tile_seconds.append(time.perf_counter() - t0)
    out = np.where(wsum > 0, dst / np.where(wsum > 0, wsum, 1.0), 0.0)
    return Volume(out.astype(np.float32)), len(plan.origins), tile_seconds


def _ar_context_for_tile(origin, I: int, prev) -> ARContext:
    prev_img, prev_pred = prev
    arc = ar_crop_for_tile(origin, I, prev_img.shape)
    tgt = Shape3(arc.target_extent, arc.target_extent, arc.target_extent)
    img = resample(crop(prev_img, arc.parent_region, 0.0), tgt, "trilinear")
    pred = resample(crop(prev_pred, arc.parent_region, 0.0), tgt, "trilinear")
    return ARContext(img, pred)


def infer(req: InferenceRequest, w=None) -> tuple:
    """Run the full ladder; returns (prediction, trace).

    Segmentation requests additionally carry a 0.5-binarized companion mask
    on the trace.  Deterministic: fixed tile and reduction order.
    """
    req.validate()
    if req.model == "unet":
        if w is None:
            raise ConfigError("model 'unet' requires a weight store")
        w.validate(req.config)
    if not req.na_icl_enabled:
        return _infer_single_scale(req, w)

    sched = make_schedule(req.target.shape, req.config.patch_edge)
    trace = StepTrace()
    prev = None
    y = None
    for t in range(1, sched.T + 1):
        t0 = time.perf_counter()
        dims = sched.dims[t - 1]
        x_t = resample(req.target, dims, "trilinear")
        s_t = resize_context(req.context, dims)
        if t == 1:
            y = _predict_single(req, w, x_t, s_t, None)
            n_tiles, tile_seconds = 1, []
        else:
            y, n_tiles, tile_seconds = _predict_tiled(req, w, x_t, s_t, prev)
        prev = (x_t, y)
        if req.keep_intermediates:
            trace.intermediates.append(y)
        trace.add_step(t, dims, n_tiles, time.perf_counter() - t0, tile_seconds)
    if req.task_kind == "segmentation":
        trace.companion_mask = binarize_mask(y, 0.5)
    return y, trace


def _infer_single_scale(req: InferenceRequest, w) -> tuple:
    t0 = time.perf_counter()
    trace = StepTrace()
    y, n_tiles, tile_seconds = _predict_tiled(req, w, req.target, req.context,
                                              prev=None)
    trace.add_step(1, req.target.shape, n_tiles,
                   time.perf_counter() - t0, tile_seconds)
    if req.task_kind == "segmentation":
        trace.companion_mask = binarize_mask(y, 0.5)
    return y, trace


def infer_ablation_no_naicl(req: InferenceRequest, w=None) -> Volume:
    """Single-scale sliding-window inference: full resolution, no AR context."""
    req.validate()
    if req.model == "unet":
        if w is None:
            raise ConfigError("model 'unet' requires a weight store")
        w.validate(req.config)
    y, _ = _infer_single_scale(req, w)
    return y
