"""Semantic context sets and constant-memory feature aggregation.

A context set is an ordered list of image/label pairs from other subjects.
Pairs are cropped and resized in lockstep with the target so every voxel
stays spatially aligned.  Per-pair encoder features are reduced with a
running sum and one final division, so peak residency is two feature sets —
the accumulator and the set in flight — no matter how many pairs stream
through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from arvox.errors import InvalidArgumentError
from arvox.volume import Region3, Shape3, Volume, crop, resample


@dataclass(frozen=True)
class ContextPair:
    image: Volume
    label: Volume

    def __post_init__(self):
        if self.image.channels != 1 or self.label.channels != 1:
            raise InvalidArgumentError("context image and label must be single-channel")
        if tuple(self.image.shape) != tuple(self.label.shape):
            raise InvalidArgumentError(
                f"context pair misaligned: image {tuple(self.image.shape)} vs "
                f"label {tuple(self.label.shape)}"
            )


@dataclass(frozen=True)
class ContextSet:
    pairs: tuple

    def __post_init__(self):
        if len(self.pairs) < 1:
            raise InvalidArgumentError("context set must hold at least one pair")
        ref = tuple(self.pairs[0].image.shape)
        for pr in self.pairs:
            if tuple(pr.image.shape) != ref:
                raise InvalidArgumentError("context pairs are not mutually congruent")

    def __len__(self):
        return len(self.pairs)

    @property
    def shape(self) -> Shape3:
        return self.pairs[0].image.shape


@dataclass(frozen=True)
class ARContext:
    """Previous-step target image and its prediction; ``None`` plays EMPTY."""

    image: Volume
    prediction: Volume

    def __post_init__(self):
        if tuple(self.image.shape) != tuple(self.prediction.shape):
            raise InvalidArgumentError("AR image/prediction extents differ")


def crop_context(s: ContextSet, r: Region3, pad: float = 0.0) -> ContextSet:
    """Crop every pair with the identical region and pad value."""
    return ContextSet(tuple(
        ContextPair(crop(p.image, r, pad), crop(p.label, r, pad))
        for p in s.pairs
    ))


def resize_context(s: ContextSet, target: Shape3) -> ContextSet:
    """Resample every pair to ``target`` (trilinear; labels stay soft)."""
    return ContextSet(tuple(
        ContextPair(resample(p.image, target, "trilinear"),
                    resample(p.label, target, "trilinear"))
        for p in s.pairs
    ))


class FeatureAggregator:
    """Running mean over per-pair feature sets with instrumented residency.

    ``add`` folds one feature set (a list of per-stage arrays) into a
    float64 accumulator; ``add_batch`` folds a already-grouped chunk in list
    order, which only changes the shape of the reduction tree, never the
    operands.  ``result`` divides once by the expected count, so the output
    equals the batch mean.  ``peak_bytes`` tracks the largest number of
    feature bytes alive inside the aggregator at once (accumulator plus the
    set being folded) — the quantity that must stay flat as k grows.
    """

    def __init__(self, expected: int):
        if expected < 1:
            raise InvalidArgumentError(f"aggregation count must be >= 1, got {expected}")
        self.expected = expected
        self.count = 0
        self._acc = None
        self.set_bytes = 0
        self.peak_bytes = 0

    @staticmethod
    def _nbytes(feats) -> int:
        return sum(int(f.nbytes) for f in feats)

    def add(self, feats) -> None:
        inflight = self._nbytes(feats)
        if self._acc is None:
            self._acc = [f.astype(np.float64) for f in feats]
            self.set_bytes = inflight
        else:
            if len(feats) != len(self._acc):
                raise InvalidArgumentError("feature set arity changed mid-stream")
            for a, f in zip(self._acc, feats):
                a += f
        self.peak_bytes = max(self.peak_bytes, self._nbytes(self._acc) + inflight)
        self.count += 1

    def add_batch(self, sets) -> None:
        """Fold a pre-grouped chunk: batch-local partial sum, then one merge.

        Associates the additions differently than streaming ``add`` calls
        would, which is the point — partitioning into mini-batches must not
        change the mean beyond float addition reordering.
        """
        sets = list(sets)
        if not sets:
            return
        if len(sets) == 1:
            self.add(sets[0])
            return
        partial = [f.astype(np.float64) for f in sets[0]]
        for feats in sets[1:]:
            if len(feats) != len(partial):
                raise InvalidArgumentError("feature set arity changed mid-stream")
            for p, f in zip(partial, feats):
                p += f
        inflight = sum(self._nbytes(fs) for fs in sets) + self._nbytes(partial)
        if self._acc is None:
            self._acc = partial
            self.set_bytes = self._nbytes(sets[0])
        else:
            if len(partial) != len(self._acc):
                raise InvalidArgumentError("feature set arity changed mid-stream")
            for a, p in zip(self._acc, partial):
                a += p
        self.peak_bytes = max(self.peak_bytes, self._nbytes(self._acc) + inflight)
        self.count += len(sets)

    def result(self):
        if self.count != self.expected:
            raise InvalidArgumentError(
                f"aggregated {self.count} sets, expected {self.expected}"
            )
        return [(a / self.expected).astype(np.float32) for a in self._acc]


def aggregate_features(per_pair_features, k: int):
    """Mean the streamed feature sets; mathematically the batch mean."""
    agg = FeatureAggregator(k)
    for feats in per_pair_features:
        agg.add(feats)
    return agg.result()
