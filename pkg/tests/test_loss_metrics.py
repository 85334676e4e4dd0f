import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arvox.errors import InvalidArgumentError
from arvox.metrics import dice, intensity_diff_loss, psnr, smooth_l1
from arvox.volume import Volume

from . import oracles


def const_pair(pred_val, target_val, shape=(1, 2, 2, 2)):
    return (Volume(np.full(shape, pred_val, np.float32)),
            Volume(np.full(shape, target_val, np.float32)))


class TestSmoothL1:
    def test_half_unit_difference(self):
        p, t = const_pair(0.5, 0.0)
        assert smooth_l1(p, t, beta=1.0) == pytest.approx(0.125, abs=1e-9)

    def test_two_unit_difference(self):
        p, t = const_pair(2.0, 0.0)
        assert smooth_l1(p, t, beta=1.0) == pytest.approx(1.5, abs=1e-9)

    def test_continuous_at_beta(self):
        eps = 1e-4
        below, t = const_pair(1.0 - eps, 0.0)
        above, _ = const_pair(1.0 + eps, 0.0)
        assert abs(smooth_l1(above, t) - smooth_l1(below, t)) < 1e-7 + 2 * eps

    def test_zero_at_equality(self, rng):
        x = Volume(rng.standard_normal((1, 3, 3, 3)).astype(np.float32))
        assert smooth_l1(x, Volume(x.data.copy())) == 0.0

    def test_matches_loop_oracle(self, rng):
        p = Volume(rng.standard_normal((1, 4, 4, 4)).astype(np.float32))
        t = Volume(rng.standard_normal((1, 4, 4, 4)).astype(np.float32))
        for beta in (0.5, 1.0, 2.0):
            got = smooth_l1(p, t, beta)
            want = oracles.smooth_l1_loop(p.data, t.data, beta)
            assert got == pytest.approx(want, abs=1e-9)

    @given(st.floats(0.01, 5.0), st.floats(-4, 4, width=32))
    @settings(max_examples=60, deadline=None)
    def test_nonnegative_and_symmetric(self, beta, v):
        p, t = const_pair(v, 0.0)
        fwd = smooth_l1(p, t, beta)
        rev = smooth_l1(t, p, beta)
        assert fwd >= 0
        assert fwd == pytest.approx(rev, abs=1e-12)

    def test_extent_mismatch_rejected(self, rng):
        a = Volume(np.zeros((1, 2, 2, 2), np.float32))
        b = Volume(np.zeros((1, 2, 2, 3), np.float32))
        with pytest.raises(InvalidArgumentError):
            smooth_l1(a, b)


class TestIntensityDiffLoss:
    def test_terms_reported(self, rng):
        p = Volume(rng.standard_normal((1, 4, 4, 4)).astype(np.float32))
        t = Volume(rng.standard_normal((1, 4, 4, 4)).astype(np.float32))
        rep = intensity_diff_loss(p, t)
        assert set(rep.terms) == {"intensity", "intensity_difference"}
        assert rep.value == pytest.approx(
            rep.terms["intensity"] + rep.terms["intensity_difference"], abs=1e-12)

    def test_constant_offset_has_zero_difference_term(self):
        base = np.arange(8, dtype=np.float32).reshape(1, 2, 2, 2) / 10
        p = Volume(base + np.float32(0.25))
        t = Volume(base)
        rep = intensity_diff_loss(p, t)
        assert rep.terms["intensity_difference"] == pytest.approx(0.0, abs=1e-7)
        assert rep.terms["intensity"] > 0

    def test_difference_term_is_axis_mean(self, rng):
        p = Volume(rng.standard_normal((1, 3, 3, 3)).astype(np.float32))
        t = Volume(rng.standard_normal((1, 3, 3, 3)).astype(np.float32))
        rep = intensity_diff_loss(p, t, beta=1.0)
        parts = []
        for axis in (1, 2, 3):
            dp = np.diff(p.data, axis=axis)
            dt = np.diff(t.data, axis=axis)
            parts.append(oracles.smooth_l1_loop(dp, dt, 1.0))
        assert rep.terms["intensity_difference"] == pytest.approx(sum(parts) / 3, abs=1e-9)

    def test_extent_one_axes_contribute_zero(self):
        p = Volume(np.ones((1, 1, 1, 1), np.float32) * 2)
        t = Volume(np.zeros((1, 1, 1, 1), np.float32))
        rep = intensity_diff_loss(p, t)
        assert rep.terms["intensity_difference"] == 0.0


class TestDice:
    def test_perfect_overlap(self):
        m = Volume((np.arange(8).reshape(1, 2, 2, 2) % 2).astype(np.float32))
        assert dice(m, Volume(m.data.copy())) == pytest.approx(1.0, abs=0)

    def test_disjoint_masks(self):
        a = np.zeros((1, 2, 2, 2), np.float32); a[0, 0] = 1
        b = np.zeros((1, 2, 2, 2), np.float32); b[0, 1] = 1
        assert dice(Volume(a), Volume(b)) == 0.0

    def test_half_overlap(self):
        a = np.zeros((1, 4, 1, 1), np.float32); a[0, :2] = 1
        b = np.zeros((1, 4, 1, 1), np.float32); b[0, 1:3] = 1
        # |A|=2, |B|=2, |A∩B|=1 -> 2*1/(2+2)
        assert dice(Volume(a), Volume(b)) == pytest.approx(0.5, abs=1e-12)

    def test_both_empty_is_one(self):
        z = Volume(np.zeros((1, 2, 2, 2), np.float32))
        assert dice(z, Volume(z.data.copy())) == 1.0

    def test_one_empty_is_zero(self):
        z = Volume(np.zeros((1, 2, 2, 2), np.float32))
        o = Volume(np.ones((1, 2, 2, 2), np.float32))
        assert dice(z, o) == 0.0

    def test_nonbinary_rejected(self):
        a = Volume(np.full((1, 2, 2, 2), 0.5, np.float32))
        b = Volume(np.zeros((1, 2, 2, 2), np.float32))
        with pytest.raises(InvalidArgumentError):
            dice(a, b)


class TestPSNR:
    def test_mse_001_peak_1_is_20db(self):
        p = Volume(np.full((1, 2, 2, 2), 0.1, np.float32))
        t = Volume(np.zeros((1, 2, 2, 2), np.float32))
        assert psnr(p, t, peak=1.0) == pytest.approx(20.0, abs=1e-6)

    def test_identical_volumes_are_infinite(self, rng):
        x = Volume(rng.standard_normal((1, 3, 3, 3)).astype(np.float32))
        assert psnr(x, Volume(x.data.copy())) == math.inf

    def test_peak_scaling(self):
        p = Volume(np.full((1, 2, 2, 2), 0.1, np.float32))
        t = Volume(np.zeros((1, 2, 2, 2), np.float32))
        assert psnr(p, t, peak=2.0) == pytest.approx(
            20.0 + 20.0 * math.log10(2.0), abs=1e-6)

    @given(st.floats(0.01, 0.5), st.floats(0.55, 1.0))
    @settings(max_examples=30, deadline=None)
    def test_monotone_in_error(self, small, large):
        t = Volume(np.zeros((1, 2, 2, 2), np.float32))
        p_small = Volume(np.full((1, 2, 2, 2), small, np.float32))
        p_large = Volume(np.full((1, 2, 2, 2), large, np.float32))
        assert psnr(p_small, t) > psnr(p_large, t)
