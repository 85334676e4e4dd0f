"""Built-in invariant suite: a release gate runnable from the CLI.

Each suite re-derives its expectation independently of the code under test
(brute-force step counts, scalar-loop attention oracle, exact identity
propagation) and reports pass/fail plus a short detail string.  The optional
``inject_fault`` hook deliberately breaks one fixture — it exists so the
suite itself can be shown to catch regressions, not to simulate real faults.
"""

from __future__ import annotations

import numpy as np

from arvox.attention import (BAMConfig, BAMWeights, KVSource, bam_dense_oracle,
                             bam_forward, bam_logits, block_attention,
                             _embed_keys_values, _embed_queries)
from arvox.context import ContextPair, ContextSet
from arvox.errors import InvalidArgumentError
from arvox.pipeline import InferenceRequest, infer
from arvox.schedule import make_schedule, num_steps, plan_tiles, step_dims
from arvox.unet import UNetConfig, model_forward
from arvox.volume import Shape3, Volume
from arvox.weights import init_weights

FAULTS = ("dead_ar_embedding",)


def _brute_force_steps(shape, I):
    # independent derivation: doublings needed to reach the longest axis
    need = -(-max(shape) // I)  # ceil(max/I)
    t = 1
    while (1 << (t - 1)) < need:
        t += 1
    return t


def _axis_cover(origins, I, extent):
    covered = 0  # origins sorted; greedy sweep over [0, extent)
    for o in sorted(origins):
        if o > covered:
            return False
        covered = max(covered, o + I)
    return covered >= extent


def check_schedule(num_shapes: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    edges = (8, 16, 32, 64, 128)
    bad = 0
    detail = ""
    for _ in range(num_shapes):
        shape = Shape3(*(int(rng.integers(1, 513)) for _ in range(3)))
        I = int(edges[rng.integers(0, len(edges))])
        sched = make_schedule(shape, I)
        ok = sched.T == _brute_force_steps(shape, I)
        ok &= tuple(sched.dims[-1]) == tuple(shape)
        ok &= max(sched.dims[0]) <= I
        for t in range(1, sched.T + 1):
            div = 1 << (sched.T - t)
            ok &= tuple(sched.dims[t - 1]) == tuple(-(-a // div) for a in shape)
        for t in range(2, sched.T + 1):
            plan = plan_tiles(sched.dims[t - 1], I, 0.25)
            for ax in range(3):
                ok &= _axis_cover(sorted({o[ax] for o in plan.origins}), I,
                                  sched.dims[t - 1][ax])
        if not ok:
            bad += 1
            detail = detail or f"first failure: shape={tuple(shape)} I={I}"
    return {"name": "schedule_exactness", "passed": bad == 0,
            "detail": detail or f"{num_shapes} shapes checked"}


def check_bam_oracle(seed: int, instances: int = 6) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_rowsum = 0.0
    for i in range(instances):
        p = int(rng.choice((1, 2, 4)))
        edge = int(p * rng.integers(1, 8 // p + 1))
        C = int(rng.integers(1, 4))
        m = 6 * int(rng.integers(1, 3))
        cfg = BAMConfig(p=p, m=m, channels=C)
        w = BAMWeights(
            w_q=rng.standard_normal((C, m)).astype(np.float32) * 0.2,
            w_k=rng.standard_normal((C, m)).astype(np.float32) * 0.2,
            r_ar=rng.standard_normal(m).astype(np.float32) * 0.2,
        )
        n_src = int(rng.integers(1, 4))
        x_q = Volume(rng.standard_normal((C, edge, edge, edge)).astype(np.float32))
        sources = [
            KVSource(
                Volume(rng.standard_normal((C, edge, edge, edge)).astype(np.float32)),
                is_autoregressive=bool(rng.integers(0, 2)),
            )
            for _ in range(n_src)
        ]
        fast = bam_forward(x_q, sources, cfg, w).data
        slow = bam_dense_oracle(x_q, sources, cfg, w).data
        scale = max(float(np.abs(slow).max()), 1e-3)
        worst = max(worst, float(np.abs(fast - slow).max()) / scale)
        qhat = _embed_queries(x_q, cfg, w)
        khat, values = _embed_keys_values(sources, cfg, w)
        A, _ = block_attention(qhat, khat, values, cfg.m)
        worst_rowsum = max(worst_rowsum, float(np.abs(A.sum(axis=1) - 1.0).max()))
    passed = worst <= 1e-5 and worst_rowsum <= 1e-6
    return {"name": "bam_oracle_equivalence", "passed": passed,
            "detail": f"max rel err {worst:.2e}, row-sum dev {worst_rowsum:.2e}"}


def _tiny_cfg() -> UNetConfig:
    return UNetConfig(stages=2, base_channels=4, patch_edge=8,
                      bam_p=2, bam_m=6)


def _tiny_context(rng, k: int, shape) -> ContextSet:
    return ContextSet(tuple(
        ContextPair(
            Volume(rng.random(tuple(shape), dtype=np.float32)[None]),
            Volume(rng.random(tuple(shape), dtype=np.float32)[None]),
        )
        for _ in range(k)
    ))


def check_identity_pipeline(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    cfg = _tiny_cfg()
    worst0 = worst25 = 0.0
    for shape in ((8, 8, 8), (20, 14, 10), (37, 18, 9)):
        target = Volume(rng.random(shape, dtype=np.float32)[None])
        ctx = _tiny_context(rng, 1, shape)
        for overlap in (0.0, 0.25):
            req = InferenceRequest(target=target, context=ctx, config=cfg,
                                   overlap_fraction=overlap, model="identity")
            y, _ = infer(req)
            err = float(np.abs(y.data - target.data).max())
            if overlap == 0.0:
                worst0 = max(worst0, err)
            else:
                worst25 = max(worst25, err)
    passed = worst0 == 0.0 and worst25 <= 1e-6
    return {"name": "identity_pipeline_exactness", "passed": passed,
            "detail": f"overlap0 err {worst0:.2e}, overlap0.25 err {worst25:.2e}"}


def check_context_permutation(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    cfg = _tiny_cfg()
    w = init_weights(cfg, seed=seed)
    shape = (cfg.patch_edge,) * 3
    x = Volume(rng.random(shape, dtype=np.float32)[None])
    ctx = _tiny_context(rng, 3, shape)
    perm = ContextSet(tuple(ctx.pairs[i] for i in (2, 0, 1)))
    base = model_forward(x, ctx, None, w, cfg).data
    swapped = model_forward(x, perm, None, w, cfg).data
    err = float(np.abs(base - swapped).max())
    return {"name": "context_permutation_invariance", "passed": err <= 1e-6,
            "detail": f"max abs diff {err:.2e}"}


def check_memory_constancy(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    cfg = _tiny_cfg()
    w = init_weights(cfg, seed=seed)
    shape = (cfg.patch_edge,) * 3
    x = Volume(rng.random(shape, dtype=np.float32)[None])
    peaks, set_bytes = [], 0
    for k in (1, 4, 8):
        stats = {}
        model_forward(x, _tiny_context(rng, k, shape), None, w, cfg, stats=stats)
        peaks.append(stats["peak_feature_bytes"])
        set_bytes = stats["feature_set_bytes"]
    spread = max(peaks) - min(peaks)
    return {"name": "memory_constancy", "passed": spread < set_bytes,
            "detail": f"peaks {peaks}, one set = {set_bytes} bytes"}


def check_ar_effect(seed: int, inject_fault: str = None) -> dict:
    rng = np.random.default_rng(seed)
    C, m, p, edge = 3, 6, 2, 4
    cfg = BAMConfig(p=p, m=m, channels=C)
    r_ar = rng.standard_normal(m).astype(np.float32) * 0.3
    if inject_fault == "dead_ar_embedding":
        r_ar = np.zeros_like(r_ar)
    w = BAMWeights(
        w_q=rng.standard_normal((C, m)).astype(np.float32) * 0.2,
        w_k=rng.standard_normal((C, m)).astype(np.float32) * 0.2,
        r_ar=r_ar,
    )
    x_q = Volume(rng.standard_normal((C, edge, edge, edge)).astype(np.float32))
    kv = Volume(rng.standard_normal((C, edge, edge, edge)).astype(np.float32))
    on = bam_logits(x_q, [KVSource(kv, is_autoregressive=True)], cfg, w)
    off = bam_logits(x_q, [KVSource(kv, is_autoregressive=False)], cfg, w)
    changed = not np.array_equal(on, off)
    return {"name": "ar_embedding_effect", "passed": changed,
            "detail": "AR toggle changes logits" if changed
            else "AR toggle had no effect on logits"}


def selftest(num_shapes: int = 200, seed: int = 0,
             inject_fault: str = None) -> dict:
    if inject_fault is not None and inject_fault not in FAULTS:
        raise InvalidArgumentError(
            f"unknown fault {inject_fault!r}; known: {FAULTS}"
        )
    suites = [
        check_schedule(num_shapes, seed),
        check_bam_oracle(seed),
        check_identity_pipeline(seed),
        check_context_permutation(seed),
        check_memory_constancy(seed),
        check_ar_effect(seed, inject_fault),
    ]
    return {"suites": suites, "all_passed": all(s["passed"] for s in suites)}
