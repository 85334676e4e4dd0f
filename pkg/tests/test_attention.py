import math

import numpy as np
import pytest

from arvox.attention import (
    BAMConfig,
    BAMWeights,
    KVSource,
    _embed_keys_values,
    _embed_queries,
    bam_dense_oracle,
    bam_forward,
    bam_logits,
    block_attention,
    partition_blocks,
    pool_blocks,
    restore_blocks,
    sincos_pos_embed,
)
from arvox.errors import InvalidArgumentError
from arvox.volume import Volume

from . import oracles


def rand_weights(rng, cfg, ar_scale=1.0):
    return BAMWeights(
        w_q=rng.standard_normal((cfg.channels, cfg.m)).astype(np.float32) * 0.2,
        w_k=rng.standard_normal((cfg.channels, cfg.m)).astype(np.float32) * 0.2,
        r_ar=rng.standard_normal(cfg.m).astype(np.float32) * ar_scale,
    )


def rand_volume(rng, channels, edge):
    return Volume(rng.standard_normal((channels, edge, edge, edge)).astype(np.float32))


class TestBlocks:
    def test_partition_restore_round_trip_bitwise(self, rng):
        x = rand_volume(rng, 3, 6)
        blocks = partition_blocks(x, 2)
        back = restore_blocks(blocks, x.shape)
        np.testing.assert_array_equal(back, x.data)

    def test_partition_shape(self, rng):
        x = Volume(rng.standard_normal((2, 4, 6, 8)).astype(np.float32))
        blocks = partition_blocks(x, 2)
        assert blocks.shape == (2, (4 // 2) * (6 // 2) * (8 // 2), 2, 2, 2)

    def test_partition_block_content(self):
        # lay out a volume whose value encodes its own coordinates
        edge, p = 4, 2
        x = np.arange(edge ** 3, dtype=np.float32).reshape(1, edge, edge, edge)
        blocks = partition_blocks(Volume(x), p)
        side = edge // p
        # block (1,0,1) must hold exactly the slab x[2:4, 0:2, 2:4]
        want = x[0, 2:4, 0:2, 2:4].ravel()
        got = np.sort(blocks[0, :, 1, 0, 1])
        np.testing.assert_array_equal(got, np.sort(want))

    def test_pool_is_per_block_mean(self, rng):
        x = rand_volume(rng, 2, 6)
        blocks = partition_blocks(x, 3)
        pooled = pool_blocks(blocks)
        assert pooled.shape == (2, 27)
        for c in range(2):
            for b in range(27):
                bi, bj, bk = b // 9, (b // 3) % 3, b % 3
                assert pooled[c, b] == pytest.approx(
                    float(blocks[c, :, bi, bj, bk].astype(np.float64).mean()), abs=1e-6
                )

    def test_indivisible_extent_rejected(self, rng):
        x = Volume(rng.standard_normal((1, 5, 4, 4)).astype(np.float32))
        with pytest.raises(InvalidArgumentError):
            partition_blocks(x, 2)


class TestPosEmbed:
    def test_matches_scalar_recompute(self):
        for p, m in [(1, 6), (2, 12), (4, 66)]:
            got = sincos_pos_embed(p, m)
            want = oracles.pos_embed_scalar(p, m)
            np.testing.assert_allclose(got, want, atol=1e-6)

    def test_rows_distinct(self):
        table = sincos_pos_embed(3, 12)
        assert len({r.tobytes() for r in table}) == 27

    def test_zero_block_embeds_as_sin0_cos0(self):
        table = sincos_pos_embed(2, 6)
        np.testing.assert_allclose(table[0], [0, 1, 0, 1, 0, 1], atol=0)

    def test_rejects_bad_width(self):
        with pytest.raises(InvalidArgumentError):
            sincos_pos_embed(2, 8)


class TestConfig:
    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            BAMConfig(p=0, m=6, channels=1)
        with pytest.raises(InvalidArgumentError):
            BAMConfig(p=2, m=7, channels=1)
        with pytest.raises(InvalidArgumentError):
            BAMConfig(p=2, m=6, channels=0)

    def test_channel_mismatch_rejected(self, rng):
        cfg = BAMConfig(p=2, m=6, channels=2)
        w = rand_weights(rng, cfg)
        xq = rand_volume(rng, 2, 4)
        bad = KVSource(rand_volume(rng, 1, 4))
        with pytest.raises(InvalidArgumentError):
            bam_forward(xq, [bad], cfg, w)


class TestAttentionMath:
    def test_rows_sum_to_one(self, rng):
        cfg = BAMConfig(p=2, m=12, channels=3)
        w = rand_weights(rng, cfg)
        xq = rand_volume(rng, 3, 6)
        srcs = [KVSource(rand_volume(rng, 3, 6)),
                KVSource(rand_volume(rng, 3, 6), is_autoregressive=True)]
        qhat = _embed_queries(xq, cfg, w)
        khat, values = _embed_keys_values(srcs, cfg, w)
        A, _ = block_attention(qhat, khat, values, cfg.m)
        assert A.shape == (8, 16)
        np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-12)
        assert (A >= 0).all()

    def test_output_within_value_envelope(self, rng):
        # every output entry is a convex mix of the corresponding value column
        cfg = BAMConfig(p=2, m=6, channels=2)
        w = rand_weights(rng, cfg)
        xq = rand_volume(rng, 2, 4)
        srcs = [KVSource(rand_volume(rng, 2, 4)) for _ in range(2)]
        qhat = _embed_queries(xq, cfg, w)
        khat, values = _embed_keys_values(srcs, cfg, w)
        _, out = block_attention(qhat, khat, values, cfg.m)
        lo = values.min(axis=0) - 1e-6
        hi = values.max(axis=0) + 1e-6
        assert (out >= lo).all() and (out <= hi).all()

    def test_constant_sources_pass_through(self, rng):
        c = np.float32(0.8125)
        cfg = BAMConfig(p=2, m=6, channels=1)
        w = rand_weights(rng, cfg)
        xq = rand_volume(rng, 1, 4)
        srcs = [KVSource(Volume(np.full((1, 4, 4, 4), c, np.float32)))
                for _ in range(3)]
        out = bam_forward(xq, srcs, cfg, w)
        np.testing.assert_allclose(out.data, c, atol=1e-6)

    def test_single_block_single_source_is_identity(self, rng):
        # p=1 with one source: softmax over one key is 1, mix returns the source
        cfg = BAMConfig(p=1, m=6, channels=2)
        w = rand_weights(rng, cfg)
        xq = rand_volume(rng, 2, 3)
        src = rand_volume(rng, 2, 3)
        out = bam_forward(xq, [KVSource(src)], cfg, w)
        np.testing.assert_array_equal(out.data, src.data)

    def test_single_block_two_sources_zero_proj_is_mean(self, rng):
        cfg = BAMConfig(p=1, m=6, channels=1)
        w = BAMWeights(w_q=np.zeros((1, 6), np.float32),
                       w_k=np.zeros((1, 6), np.float32),
                       r_ar=np.zeros(6, np.float32))
        a, b = rand_volume(rng, 1, 3), rand_volume(rng, 1, 3)
        out = bam_forward(a, [KVSource(a), KVSource(b)], cfg, w)
        want = (a.data.astype(np.float64) + b.data.astype(np.float64)) / 2
        np.testing.assert_allclose(out.data, want, atol=1e-6)

    def test_source_order_invariance(self, rng):
        cfg = BAMConfig(p=2, m=12, channels=2)
        w = rand_weights(rng, cfg)
        xq = rand_volume(rng, 2, 6)
        s1, s2, s3 = (rand_volume(rng, 2, 6) for _ in range(3))
        fwd = lambda order: bam_forward(xq, [KVSource(s) for s in order], cfg, w).data
        base = fwd([s1, s2, s3])
        np.testing.assert_allclose(fwd([s3, s1, s2]), base, atol=1e-6)

    def test_deterministic(self, rng):
        cfg = BAMConfig(p=2, m=12, channels=2)
        w = rand_weights(rng, cfg)
        xq = rand_volume(rng, 2, 4)
        srcs = [KVSource(rand_volume(rng, 2, 4), is_autoregressive=True)]
        one = bam_forward(xq, srcs, cfg, w, query_is_ar=True).data
        two = bam_forward(xq, srcs, cfg, w, query_is_ar=True).data
        np.testing.assert_array_equal(one, two)


class TestARFlag:
    def test_zero_tag_makes_flag_inert(self, rng):
        cfg = BAMConfig(p=2, m=6, channels=2)
        w = rand_weights(rng, cfg, ar_scale=0.0)
        xq = rand_volume(rng, 2, 4)
        src = rand_volume(rng, 2, 4)
        on = bam_logits(xq, [KVSource(src, is_autoregressive=True)], cfg, w)
        off = bam_logits(xq, [KVSource(src, is_autoregressive=False)], cfg, w)
        np.testing.assert_array_equal(on, off)

    def test_nonzero_tag_changes_logits(self, rng):
        cfg = BAMConfig(p=2, m=6, channels=2)
        w = rand_weights(rng, cfg, ar_scale=1.0)
        xq = rand_volume(rng, 2, 4)
        src = rand_volume(rng, 2, 4)
        on = bam_logits(xq, [KVSource(src, is_autoregressive=True)], cfg, w)
        off = bam_logits(xq, [KVSource(src, is_autoregressive=False)], cfg, w)
        assert np.abs(on - off).max() > 1e-6

    def test_query_side_tag(self, rng):
        cfg = BAMConfig(p=2, m=6, channels=1)
        w = rand_weights(rng, cfg)
        xq = rand_volume(rng, 1, 4)
        src = [KVSource(rand_volume(rng, 1, 4))]
        with_tag = bam_logits(xq, src, cfg, w, query_is_ar=True)
        without = bam_logits(xq, src, cfg, w, query_is_ar=False)
        assert np.abs(with_tag - without).max() > 1e-6


class TestDenseOracleAgreement:
    """Blocked fast path against the scalar dense reference."""

    @pytest.mark.parametrize("p,edge,channels,nsrc", [
        (1, 4, 1, 1),
        (2, 4, 2, 2),
        (2, 6, 3, 3),
        (4, 8, 2, 1),
        (4, 8, 1, 2),
    ])
    def test_forward_matches_oracle(self, rng, p, edge, channels, nsrc):
        cfg = BAMConfig(p=p, m=12, channels=channels)
        w = rand_weights(rng, cfg)
        xq = rand_volume(rng, channels, edge)
        srcs = [KVSource(rand_volume(rng, channels, edge),
                         is_autoregressive=(i % 2 == 1)) for i in range(nsrc)]
        fast = bam_forward(xq, srcs, cfg, w)
        ref = bam_dense_oracle(xq, srcs, cfg, w)
        denom = max(1e-8, float(np.abs(ref.data).max()))
        rel = float(np.abs(fast.data - ref.data).max()) / denom
        assert rel <= 1e-5

    def test_oracle_agreement_with_ar_query(self, rng):
        cfg = BAMConfig(p=2, m=6, channels=2)
        w = rand_weights(rng, cfg)
        xq = rand_volume(rng, 2, 4)
        srcs = [KVSource(rand_volume(rng, 2, 4), is_autoregressive=True)]
        fast = bam_forward(xq, srcs, cfg, w, query_is_ar=True)
        ref = bam_dense_oracle(xq, srcs, cfg, w, query_is_ar=True)
        np.testing.assert_allclose(fast.data, ref.data, atol=1e-5)


def test_flop_scaling_is_quadratic_in_blocks_not_voxels():
    # doubling the edge (8x the voxels) must not 64x the attention logit work
    from arvox.bench import analytic_flops_bam, analytic_flops_dense

    f1 = analytic_flops_bam(8, p=4, channels=8, m=66)
    f2 = analytic_flops_bam(16, p=4, channels=8, m=66)
    d1 = analytic_flops_dense(8, channels=8, m=66)
    d2 = analytic_flops_dense(16, channels=8, m=66)
    assert f2 / f1 < 16          # near-linear in voxels
    assert d2 / d1 > 32          # near-quadratic in voxels
