"""Named parameter store for the three-branch network.

Parameters live in a flat ``name -> float32 ndarray`` map with dotted
canonical names ("ctx.enc.s2.conv1.kernel").  The autoregressive branch owns
no encoder parameters of its own: any lookup under ``ar.enc.`` resolves to
the matching ``ctx.enc.`` entry, so the branches share weights by aliasing
rather than by copy.  The only AR-specific parameter is the stage-1 scale
embedding ``ar.embed``.
"""

from __future__ import annotations

import numpy as np

from arvox.errors import ConfigError
from arvox.io import read_mvwt, write_mvwt

_AR_PREFIX = "ar.enc."
_CTX_PREFIX = "ctx.enc."


def stage_width(cfg, s: int) -> int:
    """Channel count at stage ``s`` (1-based): base doubling per stage."""
    return cfg.base_channels * (1 << (s - 1))


def param_spec(cfg) -> dict:
    """Every owned parameter name with its shape, in a fixed order.

    Aliased AR-encoder names are deliberately absent — they are views, not
    storage.
    """
    S = cfg.stages
    spec = {}

    def enc(branch, in_ch):
        for s in range(1, S + 1):
            w = stage_width(cfg, s)
            c_in = in_ch if s == 1 else w
            spec[f"{branch}.enc.s{s}.conv1.kernel"] = (w, c_in, 3, 3, 3)
            spec[f"{branch}.enc.s{s}.conv1.bias"] = (w,)
            spec[f"{branch}.enc.s{s}.conv2.kernel"] = (w, w, 3, 3, 3)
            spec[f"{branch}.enc.s{s}.conv2.bias"] = (w,)
            if s < S:
                w_next = stage_width(cfg, s + 1)
                spec[f"{branch}.enc.s{s}.down.kernel"] = (w_next, w, 2, 2, 2)
                spec[f"{branch}.enc.s{s}.down.bias"] = (w_next,)

    enc("tgt", cfg.target_channels)
    enc("ctx", cfg.context_channels)

    for s in range(1, S):
        w = stage_width(cfg, s)
        w_up = stage_width(cfg, s + 1)
        spec[f"tgt.dec.s{s}.conv1.kernel"] = (w, w + w_up, 3, 3, 3)
        spec[f"tgt.dec.s{s}.conv1.bias"] = (w,)
        spec[f"tgt.dec.s{s}.conv2.kernel"] = (w, w, 3, 3, 3)
        spec[f"tgt.dec.s{s}.conv2.bias"] = (w,)

    spec["tgt.head.kernel"] = (1, stage_width(cfg, 1), 1, 1, 1)
    spec["tgt.head.bias"] = (1,)
    spec["ar.embed"] = (stage_width(cfg, 1),)

    m = cfg.bam_m
    for site, stages in (("enc", cfg.fusion_stages_encoder),
                         ("dec", cfg.fusion_stages_decoder)):
        for s in stages:
            w = stage_width(cfg, s)
            spec[f"fuse.{site}.s{s}.w_q"] = (w, m)
            spec[f"fuse.{site}.s{s}.w_k"] = (w, m)
            spec[f"fuse.{site}.s{s}.r_ar"] = (m,)
            spec[f"fuse.{site}.s{s}.conv.kernel"] = (w, 2 * w, 1, 1, 1)
            spec[f"fuse.{site}.s{s}.conv.bias"] = (w,)
    return spec


class WeightStore:
    """Immutable-by-convention mapping of canonical names to tensors."""

    def __init__(self, tensors: dict, cfg=None):
        self._tensors = dict(tensors)
        if cfg is not None:
            self.validate(cfg)

    @staticmethod
    def resolve(name: str) -> str:
        if name.startswith(_AR_PREFIX):
            return _CTX_PREFIX + name[len(_AR_PREFIX):]
        return name

    def __getitem__(self, name: str) -> np.ndarray:
        key = self.resolve(name)
        try:
            return self._tensors[key]
        except KeyError:
            raise ConfigError(f"missing weight {key!r}") from None

    def __contains__(self, name: str) -> bool:
        return self.resolve(name) in self._tensors

    def names(self):
        return list(self._tensors)

    def validate(self, cfg) -> None:
        spec = param_spec(cfg)
        for name, shape in spec.items():
            if name not in self._tensors:
                raise ConfigError(f"missing weight {name!r}")
            have = tuple(self._tensors[name].shape)
            if have != tuple(shape):
                raise ConfigError(
                    f"weight {name!r} has shape {have}, expected {tuple(shape)}"
                )
        extra = set(self._tensors) - set(spec)
        if extra:
            raise ConfigError(f"unknown weights: {sorted(extra)[:5]}")

    def replaced(self, name: str, value: np.ndarray) -> "WeightStore":
        """Copy of the store with one entry swapped (tests poke at sharing)."""
        t = dict(self._tensors)
        t[self.resolve(name)] = np.asarray(value, np.float32)
        return WeightStore(t)

    def save(self, path) -> None:
        write_mvwt(path, self._tensors)

    @classmethod
    def load(cls, path, cfg=None) -> "WeightStore":
        return cls(read_mvwt(path), cfg)


def init_weights(cfg, seed: int = 0) -> WeightStore:
    """Seeded uniform(-0.05, 0.05) values for every owned parameter."""
    rng = np.random.default_rng(seed)
    tensors = {
        name: rng.uniform(-0.05, 0.05, size=shape).astype(np.float32)
        for name, shape in param_spec(cfg).items()
    }
    return WeightStore(tensors, cfg)


def zero_fusion_convs(store: WeightStore) -> WeightStore:
    """Zero every fusion 1x1x1 conv, making fusion a residual no-op."""
    t = {n: store[n] for n in store.names()}
    for n in list(t):
        if n.startswith("fuse.") and (n.endswith("conv.kernel") or n.endswith("conv.bias")):
            t[n] = np.zeros_like(t[n])
    return WeightStore(t)
