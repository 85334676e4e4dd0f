"""Smooth-L1 loss family and evaluation metrics (Dice, PSNR).

All reductions are means over voxels, computed in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from arvox.errors import InvalidArgumentError
from arvox.volume import Volume


@dataclass(frozen=True)
class LossReport:
    value: float
    terms: dict


def _congruent(a: Volume, b: Volume, op: str):
    if a.data.shape != b.data.shape:
        raise InvalidArgumentError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} differ"
        )


def smooth_l1(pred: Volume, target: Volume, beta: float = 1.0) -> float:
    """Mean over voxels of the Huber-style branch:

        0.5 * d**2 / beta   where |d| <  beta
        |d| - 0.5 * beta    where |d| >= beta

    Both branches agree at |d| == beta (value 0.5 * beta).
    """
    _congruent(pred, target, "smooth_l1")
    if beta <= 0:
        raise InvalidArgumentError(f"beta must be positive, got {beta}")
    d = pred.data.astype(np.float64) - target.data.astype(np.float64)
    ad = np.abs(d)
    per = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)
    return float(per.mean())


def _forward_diff(a: np.ndarray, axis: int) -> np.ndarray:
    return np.diff(a, axis=axis)


def intensity_diff_loss(pred: Volume, target: Volume, beta: float = 1.0) -> LossReport:
    """Smooth-L1 on intensities plus on forward differences along each axis.

    The difference term is the mean of the three per-axis smooth-L1 values;
    axes of extent 1 contribute 0 (no differences exist there).
    """
    _congruent(pred, target, "intensity_diff_loss")
    if pred.channels != 1:
        raise InvalidArgumentError("intensity_diff_loss expects single-channel volumes")
    term1 = smooth_l1(pred, target, beta)
    parts = []
    for axis in (1, 2, 3):
        if pred.data.shape[axis] < 2:
            parts.append(0.0)
            continue
        dp = Volume(_forward_diff(pred.data, axis))
        dt = Volume(_forward_diff(target.data, axis))
        parts.append(smooth_l1(dp, dt, beta))
    term2 = float(sum(parts) / 3.0)
    return LossReport(value=term1 + term2,
                      terms={"intensity": term1, "intensity_difference": term2})


def dice(pred_mask: Volume, gt_mask: Volume) -> float:
    """2|P∩G| / (|P|+|G|) over binary volumes; both empty → 1.0."""
    _congruent(pred_mask, gt_mask, "dice")
    p = pred_mask.data
    g = gt_mask.data
    for name, m in (("pred", p), ("gt", g)):
        if not np.isin(m, (0.0, 1.0)).all():
            raise InvalidArgumentError(f"dice: {name} mask is not binary")
    inter = float(np.count_nonzero((p == 1.0) & (g == 1.0)))
    total = float(np.count_nonzero(p) + np.count_nonzero(g))
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def psnr(pred: Volume, target: Volume, peak: float = 1.0) -> float:
    """10·log10(peak² / MSE); identical inputs give +inf."""
    _congruent(pred, target, "psnr")
    if peak <= 0:
        raise InvalidArgumentError(f"peak must be positive, got {peak}")
    d = pred.data.astype(np.float64) - target.data.astype(np.float64)
    mse = float((d * d).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
