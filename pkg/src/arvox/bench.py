"""Complexity microbenchmark: blockwise attention vs dense voxel attention.

For each spatial edge this times one forward of block attention and one of a
plain voxel-token cross-attention (every voxel a token), and pairs the wall
times with analytic FLOP counts.  Growth exponents of time vs voxel count are
fitted by least squares in log-log space: block attention should land near 1
(linear in voxels at fixed block count), dense attention near 2.

The dense path here is a timing surrogate only — correctness of the blockwise
module is checked against the scalar-loop oracle in :mod:`arvox.attention`,
not against this code.  It runs in float32 and processes query rows in chunks
so the score matrix never materializes whole.
"""

from __future__ import annotations

import time

import numpy as np

from arvox.attention import BAMConfig, BAMWeights, KVSource, bam_forward
from arvox.errors import InvalidArgumentError
from arvox.volume import Volume


def analytic_flops_bam(edge: int, p: int, channels: int, m: int,
                       n_sources: int = 1) -> float:
    """Operation count for one blockwise forward (mul+add counted as 2)."""
    n = edge ** 3
    B = p ** 3
    Bk = B * n_sources
    pool = (1 + n_sources) * channels * n
    project = (1 + n_sources) * B * channels * m * 2
    logits = 2 * B * Bk * m
    softmax = 3 * B * Bk
    mix = 2 * B * Bk * channels * (n // B)
    return float(pool + project + logits + softmax + mix)


def analytic_flops_dense(edge: int, channels: int, m: int,
                         n_sources: int = 1) -> float:
    """Operation count for voxel-token cross-attention at the same sizes."""
    n = edge ** 3
    project = 2 * (1 + n_sources) * n * channels * m
    logits = 2 * n * (n * n_sources) * m
    softmax = 3 * n * (n * n_sources)
    mix = 2 * n * (n * n_sources) * channels
    return float(project + logits + softmax + mix)


def dense_attention_forward(x_q: np.ndarray, x_kv: np.ndarray,
                            w_q: np.ndarray, w_k: np.ndarray,
                            chunk: int = 1024) -> np.ndarray:
    """Every-voxel-a-token cross-attention, float32, chunked over queries.

    ``x_q``/``x_kv`` are (C, n) token matrices; values are the unprojected
    ``x_kv`` tokens, mirroring the blockwise module's unpooled values.
    """
    m = w_q.shape[1]
    q = x_q.T @ w_q                      # (n, m)
    k = x_kv.T @ w_k                     # (n, m)
    v = np.ascontiguousarray(x_kv.T)     # (n, C)
    scale = np.float32(1.0 / np.sqrt(m))
    out = np.empty_like(v)
    for i in range(0, q.shape[0], chunk):
        logits = (q[i : i + chunk] @ k.T) * scale
        logits -= logits.max(axis=1, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=1, keepdims=True)
        out[i : i + chunk] = logits @ v
    return out


def _time_call(fn, min_time: float, max_reps: int) -> float:
    """Best-of-reps wall time; keeps repeating cheap calls until min_time."""
    best = None
    elapsed = 0.0
    reps = 0
    while reps < max_reps and (reps == 0 or elapsed < min_time):
        t0 = time.perf_counter()
        fn()
        dt = time.perf_counter() - t0
        best = dt if best is None else min(best, dt)
        elapsed += dt
        reps += 1
    return best


def fit_exponent(voxels, times) -> float:
    """Least-squares slope of log(time) against log(voxel count)."""
    x = np.log(np.asarray(voxels, np.float64))
    y = np.log(np.asarray(times, np.float64))
    slope = np.polyfit(x, y, 1)[0]
    return float(slope)


def bam_bench(edges, p: int = 4, channels: int = 16, m: int = 66,
              seed: int = 0, min_time: float = 0.05) -> dict:
    """Time both attention styles over ``edges`` and fit growth exponents."""
    for e in edges:
        if e % p:
            raise InvalidArgumentError(f"edge {e} not divisible by p={p}")
    rng = np.random.default_rng(seed)
    cfg = BAMConfig(p=p, m=m, channels=channels)
    weights = BAMWeights(
        w_q=rng.standard_normal((channels, m)).astype(np.float32) * 0.1,
        w_k=rng.standard_normal((channels, m)).astype(np.float32) * 0.1,
        r_ar=rng.standard_normal(m).astype(np.float32) * 0.1,
    )

    rows = []
    for edge in edges:
        x_q = Volume(rng.standard_normal((channels, edge, edge, edge)).astype(np.float32))
        x_kv = Volume(rng.standard_normal((channels, edge, edge, edge)).astype(np.float32))
        src = [KVSource(x_kv)]
        flat_q = x_q.data.reshape(channels, -1)
        flat_kv = x_kv.data.reshape(channels, -1)

        # warm up the cheap path so one-off setup cost stays out of the fit;
        # the dense run at large edges is seconds long and needs none
        bam_forward(x_q, src, cfg, weights)
        t_bam = _time_call(lambda: bam_forward(x_q, src, cfg, weights),
                           min_time, max_reps=50)
        t_dense = _time_call(
            lambda: dense_attention_forward(flat_q, flat_kv, weights.w_q, weights.w_k),
            min_time, max_reps=5,
        )
        rows.append({
            "edge": int(edge),
            "voxels": int(edge ** 3),
            "flops_bam": analytic_flops_bam(edge, p, channels, m),
            "flops_dense": analytic_flops_dense(edge, channels, m),
            "time_bam_ms": t_bam * 1e3,
            "time_dense_ms": t_dense * 1e3,
        })

    voxels = [r["voxels"] for r in rows]
    report = {
        "p": p,
        "channels": channels,
        "m": m,
        "entries": rows,
        "exponent_bam_measured": fit_exponent(voxels, [r["time_bam_ms"] for r in rows]),
        "exponent_dense_measured": fit_exponent(voxels, [r["time_dense_ms"] for r in rows]),
        "exponent_bam_analytic": fit_exponent(voxels, [r["flops_bam"] for r in rows]),
        "exponent_dense_analytic": fit_exponent(voxels, [r["flops_dense"] for r in rows]),
    }
    return report
