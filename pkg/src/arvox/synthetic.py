"""Deterministic synthetic volume pairs for self-tests and demos.

Every generator is a pure function of (kind, shape, seed): the same spec
always yields bitwise-identical volumes.  Pairs come back as (image, label)
for segmentation-style kinds and (corrupted, clean) for restoration-style
kinds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from arvox.errors import InvalidArgumentError
from arvox.volume import Shape3, Volume

KINDS = ("sphere_seg", "ramp", "gaussian_noise", "salt_pepper", "bias_field")


@dataclass(frozen=True)
class SyntheticSpec:
    shape: Shape3
    kind: str
    seed: int = 0
    sigma: float = 0.1   # gaussian_noise std
    rho: float = 0.05    # salt_pepper corrupted fraction

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"kind must be one of {KINDS}, got {self.kind!r}")
        object.__setattr__(self, "shape", Shape3(*self.shape))


def _ramp(shape: Shape3) -> np.ndarray:
    h, w, d = shape
    gh = np.linspace(0.0, 1.0, h, dtype=np.float64)[:, None, None]
    gw = np.linspace(0.0, 1.0, w, dtype=np.float64)[None, :, None]
    gd = np.linspace(0.0, 1.0, d, dtype=np.float64)[None, None, :]
    return ((gh * 0.6 + gw * 0.25 + gd * 0.15)[None]).astype(np.float32)


def _sphere(shape: Shape3, rng) -> tuple:
    h, w, d = shape
    r = max(2, min(shape) // 4)
    center = [rng.integers(r, max(r + 1, e - r)) for e in shape]
    ih = (np.arange(h, dtype=np.float64) - center[0])[:, None, None]
    iw = (np.arange(w, dtype=np.float64) - center[1])[None, :, None]
    idx = (np.arange(d, dtype=np.float64) - center[2])[None, None, :]
    dist2 = ih ** 2 + iw ** 2 + idx ** 2
    mask = (dist2 <= r * r).astype(np.float32)[None]
    image = (_ramp(shape) * 0.2 + mask * 0.8).astype(np.float32)
    return image, mask


def generate_synthetic(spec: SyntheticSpec) -> tuple:
    """Return (image, label_or_clean) volumes for the given spec."""
    rng = np.random.default_rng(spec.seed)
    shape = spec.shape
    if spec.kind == "sphere_seg":
        image, mask = _sphere(shape, rng)
        return Volume(image), Volume(mask)
    clean = _ramp(shape)
    if spec.kind == "ramp":
        return Volume(clean.copy()), Volume(clean.copy())
    if spec.kind == "gaussian_noise":
        noisy = clean + rng.normal(0.0, spec.sigma, clean.shape).astype(np.float32)
        return Volume(noisy.astype(np.float32)), Volume(clean.copy())
    if spec.kind == "salt_pepper":
        if not 0.0 <= spec.rho <= 1.0:
            raise InvalidArgumentError(f"rho must be in [0,1], got {spec.rho}")
        img = clean.copy()
        if spec.rho > 0.0:
            hit = rng.random(img.shape) < spec.rho
            val = (rng.random(img.shape) < 0.5).astype(np.float32)
            img[hit] = val[hit]
        return Volume(img), Volume(clean.copy())
    # bias_field: clean image modulated by a smooth first/second-order field
    h, w, d = shape
    u = np.linspace(-1.0, 1.0, h, dtype=np.float64)[:, None, None]
    v = np.linspace(-1.0, 1.0, w, dtype=np.float64)[None, :, None]
    t = np.linspace(-1.0, 1.0, d, dtype=np.float64)[None, None, :]
    c = rng.uniform(-0.2, 0.2, size=6)
    fieldv = 1.0 + c[0] * u + c[1] * v + c[2] * t + c[3] * u * u + c[4] * v * v + c[5] * t * t
    img = (clean * fieldv[None]).astype(np.float32)
    return Volume(img), Volume(clean.copy())
