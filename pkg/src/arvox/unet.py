"""Three-branch 3D U-Net forward pass.

One branch encodes the target patch, one encodes each semantic context pair
(image + label), and one encodes the autoregressive context (previous-step
image + prediction).  The AR branch owns no weights — every lookup aliases to
the context branch — and differs from it in exactly two ways: a learned
per-channel embedding added to its stage-1 output, and the AR flag it carries
into block attention.

Information flows between branches through residual fusion sites:
  encoder   context/AR features query the target features
  decoder   target features query the aggregated semantic features plus the
            AR features (when present)
Each site computes ``x + Conv1(concat(x, attention(x, sources)))``, so zeroed
fusion convs collapse the whole model to a plain single-branch U-Net.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from arvox.attention import BAMConfig, BAMWeights, KVSource, bam_forward
from arvox.context import ARContext, ContextSet, FeatureAggregator
from arvox.errors import ConfigError, InvalidArgumentError
from arvox.kernels import conv3d, instance_norm, leaky_relu, resample_trilinear
from arvox.volume import Volume
from arvox.weights import WeightStore, stage_width


@dataclass(frozen=True)
class UNetConfig:
    stages: int = 5
    base_channels: int = 32
    patch_edge: int = 128
    target_channels: int = 1
    context_channels: int = 2
    ar_channels: int = 2
    bam_p: int = 4
    bam_m: int = 66
    fusion_stages_encoder: tuple = None  # None -> every stage
    fusion_stages_decoder: tuple = None

    def __post_init__(self):
        if self.stages < 2:
            raise ConfigError(f"stages must be >= 2, got {self.stages}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.patch_edge % (1 << (self.stages - 1)):
            raise ConfigError(
                f"patch_edge {self.patch_edge} not divisible by "
                f"2**(stages-1) = {1 << (self.stages - 1)}"
            )
        if self.ar_channels != self.context_channels:
            raise ConfigError(
                "ar_channels must equal context_channels (shared encoder weights)"
            )
        if self.bam_m < 6 or self.bam_m % 6:
            raise ConfigError(f"bam_m must be >= 6 and divisible by 6, got {self.bam_m}")
        for name in ("fusion_stages_encoder", "fusion_stages_decoder"):
            val = getattr(self, name)
            if val is None:
                val = tuple(range(1, self.stages + 1))
            else:
                val = tuple(sorted(set(int(s) for s in val)))
                if val and (val[0] < 1 or val[-1] > self.stages):
                    raise ConfigError(f"{name} entries must lie in 1..{self.stages}")
            object.__setattr__(self, name, val)
        for s in set(self.fusion_stages_encoder) | set(self.fusion_stages_decoder):
            res = self.resolution(s)
            if res % self.bam_p:
                raise ConfigError(
                    f"patch_edge: stage-{s} resolution {res} not divisible by "
                    f"bam_p={self.bam_p}"
                )

    def resolution(self, s: int) -> int:
        return self.patch_edge >> (s - 1)


def _block(x: np.ndarray, w: WeightStore, prefix: str) -> np.ndarray:
    for conv in ("conv1", "conv2"):
        x = conv3d(x, w[f"{prefix}.{conv}.kernel"], w[f"{prefix}.{conv}.bias"],
                   stride=1, pad=1)
        x = leaky_relu(instance_norm(x))
    return x


def _fuse(q_feat: np.ndarray, sources, w: WeightStore, cfg: UNetConfig,
          prefix: str, query_is_ar: bool = False) -> np.ndarray:
    bcfg = BAMConfig(p=cfg.bam_p, m=cfg.bam_m, channels=q_feat.shape[0])
    bw = BAMWeights(w_q=w[f"{prefix}.w_q"], w_k=w[f"{prefix}.w_k"],
                    r_ar=w[f"{prefix}.r_ar"])
    att = bam_forward(Volume(q_feat), sources, bcfg, bw, query_is_ar).data
    cat = np.concatenate([q_feat, att], axis=0)
    mixed = conv3d(cat, w[f"{prefix}.conv.kernel"], w[f"{prefix}.conv.bias"])
    return (q_feat + mixed).astype(np.float32)


def _check_patch(x: Volume, cfg: UNetConfig, channels: int, what: str):
    I = cfg.patch_edge
    if tuple(x.shape) != (I, I, I):
        raise InvalidArgumentError(
            f"{what} extents {tuple(x.shape)} != patch {I}^3"
        )
    if x.channels != channels:
        raise InvalidArgumentError(
            f"{what} has {x.channels} channels, expected {channels}"
        )


def _encode(x: np.ndarray, branch: str, w: WeightStore, cfg: UNetConfig,
            tgt_feats=None) -> list:
    """Per-stage encoder features; fusion applied when target features given."""
    feats = []
    cur = x
    for s in range(1, cfg.stages + 1):
        if s > 1:
            cur = conv3d(cur, w[f"{branch}.enc.s{s - 1}.down.kernel"],
                         w[f"{branch}.enc.s{s - 1}.down.bias"], stride=2)
        cur = _block(cur, w, f"{branch}.enc.s{s}")
        if branch == "ar" and s == 1:
            e = w["ar.embed"]
            if np.any(e):
                cur = (cur + e[:, None, None, None]).astype(np.float32)
        if tgt_feats is not None and s in cfg.fusion_stages_encoder:
            cur = _fuse(cur, [KVSource(Volume(tgt_feats[s - 1]))], w, cfg,
                        f"fuse.enc.s{s}", query_is_ar=(branch == "ar"))
        feats.append(cur)
    return feats


def branch_encode(x: Volume, branch: str, w: WeightStore, cfg: UNetConfig) -> list:
    """Public fusion-free encoder for one branch; returns per-stage Volumes."""
    if branch not in ("tgt", "ctx", "ar"):
        raise InvalidArgumentError(f"unknown branch {branch!r}")
    arity = {"tgt": cfg.target_channels, "ctx": cfg.context_channels,
             "ar": cfg.ar_channels}[branch]
    _check_patch(x, cfg, arity, f"{branch} input")
    return [Volume(f) for f in _encode(x.data, branch, w, cfg)]


def _decode(tgt_feats, sem_feats, ar_feats, w: WeightStore,
            cfg: UNetConfig) -> np.ndarray:
    def kv(s):
        sources = [KVSource(Volume(sem_feats[s - 1]))]
        if ar_feats is not None:
            sources.append(KVSource(Volume(ar_feats[s - 1]), is_autoregressive=True))
        return sources

    d = tgt_feats[-1]
    s = cfg.stages
    if sem_feats is not None and s in cfg.fusion_stages_decoder:
        d = _fuse(d, kv(s), w, cfg, f"fuse.dec.s{s}")
    for s in range(cfg.stages - 1, 0, -1):
        res = cfg.resolution(s)
        up = resample_trilinear(d, (res, res, res))
        d = _block(np.concatenate([tgt_feats[s - 1], up], axis=0), w, f"tgt.dec.s{s}")
        if sem_feats is not None and s in cfg.fusion_stages_decoder:
            d = _fuse(d, kv(s), w, cfg, f"fuse.dec.s{s}")
    return conv3d(d, w["tgt.head.kernel"], w["tgt.head.bias"])


def forward_target_only(x: Volume, w: WeightStore, cfg: UNetConfig) -> Volume:
    """Plain single-branch U-Net on the target: no context, no fusion."""
    _check_patch(x, cfg, cfg.target_channels, "target")
    tgt_feats = _encode(x.data, "tgt", w, cfg)
    return Volume(_decode(tgt_feats, None, None, w, cfg))


def model_forward(x: Volume, s: ContextSet, a, w: WeightStore, cfg: UNetConfig,
                  context_batch_size: int = 1, stats: dict = None) -> Volume:
    """Single-patch prediction from target, context set, and AR context.

    ``a`` is an :class:`ARContext` or ``None`` for the coarsest step, where
    no previous prediction exists yet — the AR branch is skipped outright
    rather than fed a zero tensor, so attention never sees synthetic keys.
    Context features stream through a running mean (``context_batch_size``
    groups them without changing the result), keeping residency flat in the
    number of pairs.  Deterministic: identical inputs give identical bytes.
    """
    if not isinstance(s, ContextSet) or len(s) < 1:
        raise InvalidArgumentError("model_forward needs a non-empty context set")
    if context_batch_size < 1:
        raise InvalidArgumentError("context_batch_size must be >= 1")
    _check_patch(x, cfg, cfg.target_channels, "target")
    for i, pair in enumerate(s.pairs):
        _check_patch(pair.image, cfg, 1, f"context[{i}].image")
        _check_patch(pair.label, cfg, 1, f"context[{i}].label")
    if a is not None:
        _check_patch(a.image, cfg, 1, "ar.image")
        _check_patch(a.prediction, cfg, 1, "ar.prediction")

    tgt_feats = _encode(x.data, "tgt", w, cfg)

    agg = FeatureAggregator(len(s))
    batch = []
    for pair in s.pairs:
        stacked = np.concatenate([pair.image.data, pair.label.data], axis=0)
        feats = _encode(stacked, "ctx", w, cfg, tgt_feats=tgt_feats)
        if context_batch_size == 1:
            agg.add(feats)  # pure streaming: one set in flight, ever
            continue
        batch.append(feats)
        if len(batch) == context_batch_size:
            agg.add_batch(batch)
            batch = []
    if batch:
        agg.add_batch(batch)
    sem_feats = agg.result()
    if stats is not None:
        stats["peak_feature_bytes"] = agg.peak_bytes
        stats["feature_set_bytes"] = agg.set_bytes

    ar_feats = None
    if a is not None:
        stacked = np.concatenate([a.image.data, a.prediction.data], axis=0)
        ar_feats = _encode(stacked, "ar", w, cfg, tgt_feats=tgt_feats)

    return Volume(_decode(tgt_feats, sem_feats, ar_feats, w, cfg))
