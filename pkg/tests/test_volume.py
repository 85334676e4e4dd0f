import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arvox.errors import InvalidArgumentError
from arvox.volume import (
    Region3,
    Shape3,
    Volume,
    accumulate,
    binarize_mask,
    crop,
    from_array,
    normalize_percentile,
    percentile,
    resample,
    weighted_average,
)

from . import oracles


class TestVolumeContainer:
    def test_3d_input_gains_channel_axis(self):
        v = Volume(np.zeros((4, 5, 6), np.float32))
        assert v.data.shape == (1, 4, 5, 6)

    def test_preserves_4d(self):
        v = Volume(np.zeros((3, 2, 2, 2), np.float32))
        assert v.channels == 3
        assert v.shape == Shape3(2, 2, 2)

    def test_casts_to_float32_contiguous(self):
        raw = np.arange(8, dtype=np.float64).reshape(2, 2, 2)[::-1]
        v = Volume(raw)
        assert v.data.dtype == np.float32
        assert v.data.flags["C_CONTIGUOUS"]

    def test_rejects_wrong_rank(self):
        with pytest.raises(InvalidArgumentError):
            Volume(np.zeros((2, 2), np.float32))

    def test_from_array_validate_rejects_nan(self):
        bad = np.zeros((1, 2, 2, 2), np.float32)
        bad[0, 0, 0, 0] = np.nan
        with pytest.raises(InvalidArgumentError):
            from_array(bad, validate=True)
        # without validation it is accepted as-is
        from_array(bad)


class TestPercentile:
    def test_integers_0_to_100_q02(self):
        v = Volume(np.arange(101, dtype=np.float32).reshape(1, 101, 1, 1))
        assert percentile(v, 0.02) == pytest.approx(2.0, abs=1e-12)

    def test_linspace_median(self):
        v = Volume(np.linspace(0, 1, 101, dtype=np.float32).reshape(1, 101, 1, 1))
        assert percentile(v, 0.5) == pytest.approx(0.5, abs=1e-7)

    @given(st.lists(st.floats(-100, 100, width=32), min_size=1, max_size=64),
           st.floats(0, 1))
    @settings(max_examples=60, deadline=None)
    def test_matches_sort_interp_oracle(self, vals, q):
        n = len(vals)
        arr = np.asarray(vals, np.float32).reshape(1, n, 1, 1)
        got = percentile(Volume(arr), q)
        want = oracles.quantile_sorted_interp(arr.ravel(), q)
        assert got == pytest.approx(want, rel=1e-5, abs=1e-5)

    def test_rejects_out_of_range_q(self):
        v = Volume(np.zeros((1, 2, 2, 2), np.float32))
        for q in (-0.1, 1.5):
            with pytest.raises(InvalidArgumentError):
                percentile(v, q)


class TestNormalize:
    def test_maps_p02_to_zero_p98_to_one(self, rng):
        data = rng.uniform(-50, 120, size=(1, 9, 9, 9)).astype(np.float32)
        v = normalize_percentile(Volume(data))
        lo = percentile(Volume(data), 0.02)
        hi = percentile(Volume(data), 0.98)
        expect = np.clip((data - np.float32(lo)) / (np.float32(hi) - np.float32(lo)), 0.0, 1.0)
        np.testing.assert_array_equal(v.data, expect.astype(np.float32))

    def test_output_bounded(self, rng):
        data = rng.standard_normal((1, 7, 6, 5)).astype(np.float32) * 40
        out = normalize_percentile(Volume(data)).data
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_degenerate_spread_gives_zeros(self):
        v = normalize_percentile(Volume(np.full((1, 4, 4, 4), 3.25, np.float32)))
        np.testing.assert_array_equal(v.data, np.zeros_like(v.data))


class TestResample:
    def test_identity_shape_is_bitwise_copy(self, rng):
        data = rng.standard_normal((2, 5, 6, 7)).astype(np.float32)
        out = resample(Volume(data), Shape3(5, 6, 7))
        np.testing.assert_array_equal(out.data, data)
        assert out.data is not data

    def test_ramp_downsample_matches_loop_oracle(self):
        x = np.arange(64, dtype=np.float32).reshape(1, 4, 4, 4)
        got = resample(Volume(x), Shape3(2, 2, 2)).data
        want = oracles.resample_trilinear_loop(x, (2, 2, 2))
        np.testing.assert_allclose(got, want, atol=1e-6)

    @pytest.mark.parametrize("out_shape", [(3, 5, 2), (6, 6, 6), (1, 9, 4)])
    def test_random_volumes_match_loop_oracle(self, rng, out_shape):
        x = rng.standard_normal((2, 4, 5, 3)).astype(np.float32)
        got = resample(Volume(x), Shape3(*out_shape)).data
        want = oracles.resample_trilinear_loop(x, out_shape)
        np.testing.assert_allclose(got, want, atol=1e-5)

    def test_nearest_matches_loop_oracle(self, rng):
        x = rng.standard_normal((1, 5, 4, 6)).astype(np.float32)
        got = resample(Volume(x), Shape3(3, 7, 2), mode="nearest").data
        want = oracles.resample_nearest_loop(x, (3, 7, 2))
        np.testing.assert_array_equal(got, want)

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6),
           st.integers(1, 8), st.integers(1, 8), st.integers(1, 8),
           st.floats(-10, 10, width=32))
    @settings(max_examples=40, deadline=None)
    def test_constant_volume_stays_constant(self, h, w, d, oh, ow, od, c):
        v = Volume(np.full((1, h, w, d), c, np.float32))
        out = resample(v, Shape3(oh, ow, od)).data
        np.testing.assert_allclose(out, c, atol=2e-6 * max(1.0, abs(c)))

    def test_values_stay_within_input_hull(self, rng):
        x = rng.uniform(-3, 3, size=(1, 6, 6, 6)).astype(np.float32)
        out = resample(Volume(x), Shape3(11, 5, 13)).data
        assert out.min() >= x.min() - 1e-5
        assert out.max() <= x.max() + 1e-5

    def test_rejects_unknown_mode(self):
        v = Volume(np.zeros((1, 2, 2, 2), np.float32))
        with pytest.raises(InvalidArgumentError):
            resample(v, Shape3(2, 2, 2), mode="bicubic")


class TestCropAccumulate:
    def test_interior_crop_is_exact_slice(self, rng):
        x = rng.standard_normal((2, 8, 8, 8)).astype(np.float32)
        r = Region3((1, 2, 3), Shape3(4, 3, 2))
        got = crop(Volume(x), r)
        np.testing.assert_array_equal(got.data, x[:, 1:5, 2:5, 3:5])

    def test_overhanging_crop_pads(self, rng):
        x = rng.standard_normal((1, 4, 4, 4)).astype(np.float32)
        r = Region3((2, 2, 2), Shape3(4, 4, 4))
        got = crop(Volume(x), r, pad=-1.0).data
        want = oracles.crop_loop(x, (2, 2, 2), (4, 4, 4), -1.0)
        np.testing.assert_array_equal(got, want)

    def test_negative_origin_rejected(self):
        v = Volume(np.zeros((1, 4, 4, 4), np.float32))
        with pytest.raises(InvalidArgumentError):
            crop(v, Region3((-1, 0, 0), Shape3(2, 2, 2)))

    def test_accumulate_matches_loop_oracle(self, rng):
        dst = Volume(np.zeros((1, 6, 6, 6), np.float32))
        wsum = Volume(np.zeros((1, 6, 6, 6), np.float32))
        dst2 = np.zeros((1, 6, 6, 6), np.float32)
        wsum2 = np.zeros((1, 6, 6, 6), np.float32)
        for origin in [(0, 0, 0), (2, 2, 2), (3, 0, 4)]:
            patch = rng.standard_normal((1, 4, 4, 4)).astype(np.float32)
            pw = rng.uniform(0.1, 1.0, size=(1, 4, 4, 4)).astype(np.float32)
            accumulate(dst, wsum, Volume(patch), Volume(pw),
                       Region3(origin, Shape3(4, 4, 4)))
            oracles.accumulate_loop(dst2, wsum2, patch, pw, origin)
        np.testing.assert_allclose(dst.data, dst2, atol=1e-6)
        np.testing.assert_allclose(wsum.data, wsum2, atol=1e-6)

    def test_two_half_overlapping_constant_patches_average_exactly(self):
        # Constant value c pasted twice over an overlap must come back as c.
        c = np.float32(0.7305)
        dst = Volume(np.zeros((1, 4, 4, 6), np.float32))
        wsum = Volume(np.zeros((1, 4, 4, 6), np.float32))
        patch = Volume(np.full((1, 4, 4, 4), c, np.float32))
        ones = Volume(np.ones((1, 4, 4, 4), np.float32))
        accumulate(dst, wsum, patch, ones, Region3((0, 0, 0), Shape3(4, 4, 4)))
        accumulate(dst, wsum, patch, ones, Region3((0, 0, 2), Shape3(4, 4, 4)))
        out = weighted_average(dst, wsum).data
        np.testing.assert_array_equal(out, np.full_like(out, c))

    def test_weighted_average_zero_weight_yields_zero(self):
        dst = Volume(np.full((1, 2, 2, 2), 9.0, np.float32))
        wsum = Volume(np.zeros((1, 2, 2, 2), np.float32))
        out = weighted_average(dst, wsum).data
        np.testing.assert_array_equal(out, np.zeros_like(out))


class TestBinarize:
    def test_strictly_above_half(self):
        data = np.array([0.0, 0.5, 0.5000001, 1.0], np.float32).reshape(1, 4, 1, 1)
        out = binarize_mask(Volume(data)).data.ravel()
        np.testing.assert_array_equal(out, [0.0, 0.0, 1.0, 1.0])

    def test_multichannel_rejected(self):
        with pytest.raises(InvalidArgumentError):
            binarize_mask(Volume(np.zeros((2, 2, 2, 2), np.float32)))
