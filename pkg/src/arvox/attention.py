"""Blockwise cross-attention over 3D feature maps.

A feature map ``(C, H, W, D)`` is divided into ``p**3`` equal blocks; queries
and keys are block-mean-pooled and linearly projected to width ``m``, a 3D
sine-cosine positional embedding is added to both, and keys from
autoregressive sources additionally receive a learned embedding vector.
Attention then runs at block granularity — a ``B x (B * n_sources)`` matrix
instead of voxel-by-voxel — and each query block's output is the convex
combination of the *unpooled* value blocks, reshaped back to the original
spatial layout.  Cost scales with the number of blocks squared rather than
the number of voxels squared.

``bam_dense_oracle`` recomputes the same result with plain nested scalar
loops and serves as the correctness reference for tests; it is unusably slow
for anything beyond toy extents, by design.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from arvox.errors import InvalidArgumentError
from arvox.kernels import softmax_rows
from arvox.volume import Volume


@dataclass(frozen=True)
class BAMConfig:
    p: int          # blocks per axis; B = p**3
    m: int          # projection width, divisible by 6 (3 axes x sin/cos)
    channels: int

    def __post_init__(self):
        if self.p < 1:
            raise InvalidArgumentError(f"p must be >= 1, got {self.p}")
        if self.m < 6 or self.m % 6:
            raise InvalidArgumentError(f"m must be >= 6 and divisible by 6, got {self.m}")
        if self.channels < 1:
            raise InvalidArgumentError(f"channels must be >= 1, got {self.channels}")


@dataclass(frozen=True)
class BAMWeights:
    w_q: np.ndarray   # (C, m)
    w_k: np.ndarray   # (C, m)
    r_ar: np.ndarray  # (m,)


@dataclass(frozen=True)
class KVSource:
    """One key/value feature map plus its per-source autoregressive flag."""

    features: Volume
    is_autoregressive: bool = False


def _check_divisible(shape, p):
    if any(e % p for e in shape):
        raise InvalidArgumentError(f"extents {tuple(shape)} not divisible by p={p}")


def partition_blocks(x: Volume, p: int) -> np.ndarray:
    """Reindex ``(C,H,W,D)`` as ``(C, N, p, p, p)`` with N voxels per block.

    Pure view shuffling; :func:`restore_blocks` inverts it bitwise.
    """
    _check_divisible(x.shape, p)
    C = x.channels
    h, w, d = (e // p for e in x.shape)
    a = x.data.reshape(C, p, h, p, w, p, d)
    a = a.transpose(0, 2, 4, 6, 1, 3, 5)  # (C, h, w, d, p, p, p)
    return np.ascontiguousarray(a.reshape(C, h * w * d, p, p, p))


def restore_blocks(blocks: np.ndarray, shape) -> np.ndarray:
    """Inverse of :func:`partition_blocks` back to ``(C, H, W, D)``."""
    C, N, p = blocks.shape[0], blocks.shape[1], blocks.shape[2]
    H, W, D = shape
    h, w, d = H // p, W // p, D // p
    if h * w * d != N:
        raise InvalidArgumentError("block count does not match the target shape")
    a = blocks.reshape(C, h, w, d, p, p, p).transpose(0, 4, 1, 5, 2, 6, 3)
    return np.ascontiguousarray(a.reshape(C, H, W, D))


def pool_blocks(blocks: np.ndarray) -> np.ndarray:
    """Mean over each block's voxels: ``(C,N,p,p,p)`` → ``(C, p**3)``."""
    C, _, p = blocks.shape[0], blocks.shape[1], blocks.shape[2]
    return blocks.mean(axis=1, dtype=np.float64).reshape(C, p ** 3).astype(np.float32)


def sincos_pos_embed(p: int, m: int) -> np.ndarray:
    """3D sine-cosine table, shape ``(p**3, m)``.

    Layout: the three axis embeddings concatenated [h | w | d], each axis a
    width-(m/3) 1D embedding of the block index laid out [sin | cos] with
    frequencies 1/10000**(2j/(m/3)).
    """
    if m % 6:
        raise InvalidArgumentError(f"m must be divisible by 6, got {m}")
    per_axis = m // 3
    half = per_axis // 2
    j = np.arange(half, dtype=np.float64)
    freq = 1.0 / (10000.0 ** (2.0 * j / per_axis))
    idx = np.arange(p, dtype=np.float64)
    ang = idx[:, None] * freq[None, :]                     # (p, half)
    table1d = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)  # (p, per_axis)

    out = np.empty((p, p, p, m), np.float64)
    out[..., 0:per_axis] = table1d[:, None, None, :]
    out[..., per_axis : 2 * per_axis] = table1d[None, :, None, :]
    out[..., 2 * per_axis : 3 * per_axis] = table1d[None, None, :, :]
    return out.reshape(p ** 3, m).astype(np.float32)


# ---------------------------------------------------------------------------
# forward pass, layered so invariant tests can poke at the internals
# ---------------------------------------------------------------------------

def _embed_queries(x_q: Volume, cfg: BAMConfig, w: BAMWeights,
                   query_is_ar: bool = False) -> np.ndarray:
    blocks = partition_blocks(x_q, cfg.p)
    pooled = pool_blocks(blocks)                       # (C, B)
    qhat = pooled.T @ w.w_q + sincos_pos_embed(cfg.p, cfg.m)
    if query_is_ar:
        qhat = qhat + w.r_ar
    return qhat.astype(np.float32)                     # (B, m)


def _embed_keys_values(sources, cfg: BAMConfig, w: BAMWeights):
    """Concatenate all sources along the block axis.

    Returns ``(khat, values)``: khat ``(B_k, m)`` and values ``(B_k, C*N)``,
    with B_k = p**3 * len(sources).
    """
    pos = sincos_pos_embed(cfg.p, cfg.m)
    khs, vals = [], []
    for s in sources:
        blocks = partition_blocks(s.features, cfg.p)   # (C, N, p, p, p)
        pooled = pool_blocks(blocks)                   # (C, B)
        kh = pooled.T @ w.w_k + pos
        if s.is_autoregressive:
            kh = kh + w.r_ar
        khs.append(kh.astype(np.float32))
        C, N, p = blocks.shape[0], blocks.shape[1], blocks.shape[2]
        # (B, C*N): each key block's full unpooled content, flattened
        v = blocks.reshape(C, N, p ** 3).transpose(2, 0, 1).reshape(p ** 3, C * N)
        vals.append(np.ascontiguousarray(v))
    return np.concatenate(khs, axis=0), np.concatenate(vals, axis=0)


def block_attention(qhat: np.ndarray, khat: np.ndarray, values: np.ndarray,
                    m: int):
    """Softmax(QK^T/sqrt(m)) over the key axis, then the value mix.

    Returns ``(A, out_rows)`` with A ``(B, B_k)`` float64 and out_rows
    ``(B, C*N)`` float32.
    """
    logits = (qhat.astype(np.float64) @ khat.astype(np.float64).T) / np.sqrt(m)
    A = softmax_rows(logits)
    out = (A @ values.astype(np.float64)).astype(np.float32)
    return A, out


def bam_logits(x_q: Volume, sources, cfg: BAMConfig, w: BAMWeights,
               query_is_ar: bool = False) -> np.ndarray:
    """Pre-softmax block logit matrix, exposed for diagnostics and tests."""
    qhat = _embed_queries(x_q, cfg, w, query_is_ar)
    khat, _ = _embed_keys_values(sources, cfg, w)
    return (qhat.astype(np.float64) @ khat.astype(np.float64).T) / np.sqrt(cfg.m)


def bam_forward(x_q: Volume, sources, cfg: BAMConfig, w: BAMWeights,
                query_is_ar: bool = False) -> Volume:
    """Blockwise cross-attention from ``x_q`` onto the given sources."""
    if not sources:
        raise InvalidArgumentError("bam_forward needs at least one source")
    for s in sources:
        if tuple(s.features.shape) != tuple(x_q.shape):
            raise InvalidArgumentError(
                f"source extents {tuple(s.features.shape)} != query extents "
                f"{tuple(x_q.shape)}"
            )
        if s.features.channels != cfg.channels:
            raise InvalidArgumentError(
                f"source has {s.features.channels} channels, config says {cfg.channels}"
            )
    if x_q.channels != cfg.channels:
        raise InvalidArgumentError(
            f"query has {x_q.channels} channels, config says {cfg.channels}"
        )
    _check_divisible(x_q.shape, cfg.p)

    qhat = _embed_queries(x_q, cfg, w, query_is_ar)
    khat, values = _embed_keys_values(sources, cfg, w)
    _, out_rows = block_attention(qhat, khat, values, cfg.m)

    C = cfg.channels
    p = cfg.p
    N = out_rows.shape[1] // C
    blocks = out_rows.reshape(p ** 3, C, N).transpose(1, 2, 0)  # (C, N, B)
    blocks = np.ascontiguousarray(blocks).reshape(C, N, p, p, p)
    return Volume(restore_blocks(blocks, x_q.shape))


def bam_dense_oracle(x_q: Volume, sources, cfg: BAMConfig, w: BAMWeights,
                     query_is_ar: bool = False) -> Volume:
    """Scalar-loop reference for :func:`bam_forward`.

    Same mathematics, no batched linear algebra: every pooled mean, every
    projection entry, every logit, and every value mix is an explicit Python
    loop.  Quadratic-and-worse constants throughout — tiny inputs only.
    """
    if not sources:
        raise InvalidArgumentError("bam_dense_oracle needs at least one source")
    p, m, C = cfg.p, cfg.m, cfg.channels
    H, W, D = x_q.shape
    _check_divisible(x_q.shape, p)
    h, w_, d = H // p, W // p, D // p
    N = h * w_ * d
    B = p ** 3

    def block_voxels(vol, bi, bj, bk):
        vals = np.empty((C, N), np.float32)
        n = 0
        for ii in range(h):
            for jj in range(w_):
                for kk in range(d):
                    for c in range(C):
                        vals[c, n] = vol.data[c, bi * h + ii, bj * w_ + jj, bk * d + kk]
                    n += 1
        return vals

    def pooled_vec(vol, bi, bj, bk):
        vals = block_voxels(vol, bi, bj, bk)
        out = np.empty(C, np.float64)
        for c in range(C):
            s = 0.0
            for n in range(N):
                s += float(vals[c, n])
            out[c] = s / N
        return out

    pos = sincos_pos_embed(p, m)

    def embed(vol, proj, block_index, is_ar):
        bi, bj, bk = block_index
        pv = pooled_vec(vol, bi, bj, bk)
        e = np.empty(m, np.float64)
        for col in range(m):
            s = 0.0
            for c in range(C):
                s += pv[c] * float(proj[c, col])
            e[col] = s + float(pos[(bi * p + bj) * p + bk, col])
            if is_ar:
                e[col] += float(w.r_ar[col])
        return e

    block_ids = [(i, j, k) for i in range(p) for j in range(p) for k in range(p)]
    qhats = [embed(x_q, w.w_q, b, query_is_ar) for b in block_ids]
    khats, values = [], []
    for s in sources:
        for b in block_ids:
            khats.append(embed(s.features, w.w_k, b, s.is_autoregressive))
            values.append(block_voxels(s.features, *b))

    Bk = len(khats)
    scale = np.sqrt(m)
    out = np.zeros((C, H, W, D), np.float32)
    for qi, (bi, bj, bk) in enumerate(block_ids):
        logits = np.empty(Bk, np.float64)
        for ki in range(Bk):
            s = 0.0
            for col in range(m):
                s += qhats[qi][col] * khats[ki][col]
            logits[ki] = s / scale
        mx = logits.max()
        expo = np.exp(logits - mx)
        att = expo / expo.sum()
        mix = np.zeros((C, N), np.float64)
        for ki in range(Bk):
            for c in range(C):
                for n in range(N):
                    mix[c, n] += att[ki] * float(values[ki][c, n])
        n = 0
        for ii in range(h):
            for jj in range(w_):
                for kk in range(d):
                    for c in range(C):
                        out[c, bi * h + ii, bj * w_ + jj, bk * d + kk] = np.float32(
                            mix[c, n]
                        )
                    n += 1
    return Volume(out)
