"""Map normalisation, map-size ratios and keypoint pooling."""
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from synergy_selfie.convnet import NetSpec, forward, init_params, parse_layers, toy_alex
from synergy_selfie.descriptor import (build_descriptor, descriptor_from_maps, map_size_ratios,
                                       normalize_maps, pool_at_keypoints, round_half_away)
from synergy_selfie.keypoints import Keypoint, fallback_grid

from oracles import traced_ratios


def kp(x, y):
    return Keypoint(x, y, 0, 1, 0.1)


class TestNormalize:
    def test_divides_by_peak(self):
        C = np.array([[[1.0, -4.0], [2.0, 0.5]]])
        (out,) = normalize_maps([C])
        np.testing.assert_array_equal(out, C / 4)
        assert np.abs(out).max() == 1.0

    def test_zero_layer_untouched(self):
        (out,) = normalize_maps([np.zeros((2, 3, 3))])
        np.testing.assert_array_equal(out, 0.0)

    # subnormal entries can underflow to zero when divided by the map maximum
    @given(arrays(np.float64, (2, 3, 4), elements=st.floats(-1e6, 1e6, allow_subnormal=False)))
    def test_sign_order_and_range(self, C):
        (out,) = normalize_maps([C])
        np.testing.assert_array_equal(np.sign(out), np.sign(C))
        order = np.argsort(np.abs(C).ravel(), kind="stable")
        assert np.all(np.diff(np.abs(out).ravel()[order]) >= 0)
        assert np.abs(out).max() in (0.0, 1.0)


class TestRatios:
    def test_toy_alex(self):
        assert [r.ratio for r in map_size_ratios(toy_alex(8))] == [Fraction(1, 2), Fraction(1, 4), Fraction(1, 8)]

    def test_stride_four_then_one(self):
        spec = NetSpec((1, 32, 32), parse_layers("conv(4,11,4) relu conv(4,5,1) flatten fc(2)"))
        assert [r.ratio for r in map_size_ratios(spec)] == [Fraction(1, 4), Fraction(1, 4)]

    def test_conv_stride_pattern_4_1_2_1_2(self):
        spec = NetSpec((1, 64, 64), parse_layers(
            "conv(1,1,4) conv(1,3,1) conv(1,3,2) conv(1,3,1) conv(1,3,2) flatten fc(1)"))
        expected = [Fraction(1, d) for d in (4, 4, 8, 8, 16)]
        assert [r.ratio for r in map_size_ratios(spec)] == expected
        assert traced_ratios(spec) == expected

    @pytest.mark.parametrize("text,expected", [
        ("conv(1,3,2) maxpool(3,2) conv(1,3,1) flatten fc(1)", (2, 4)),
        ("conv(1,7,2) relu maxpool(3,2) conv(1,5,1) relu maxpool(3,2) conv(1,3,1) flatten fc(1)", (2, 4, 8)),
        ("conv(1,1,4) maxpool(3,2) conv(1,3,1) maxpool(3,2) conv(1,3,2) flatten fc(1)", (4, 8, 32)),
    ])
    def test_pooling_nets_match_coordinate_trace(self, text, expected):
        spec = NetSpec((1, 64, 64), parse_layers(text))
        ratios = [r.ratio for r in map_size_ratios(spec)]
        assert ratios == [Fraction(1, d) for d in expected]
        assert traced_ratios(spec) == ratios

    def test_layer_indices(self):
        assert [r.layer_index for r in map_size_ratios(toy_alex(8))] == [0, 3, 6]


class TestPooling:
    def test_hand_example(self):
        C = np.zeros((1, 5, 5))
        C[0, 2, 2], C[0, 1, 2], C[0, 3, 2], C[0, 2, 3], C[0, 2, 1] = 0.1, 0.9, 0.2, 0.3, 0.0
        C[0, 1, 1] = 5.0  # diagonal neighbours are not part of the cross
        np.testing.assert_array_equal(pool_at_keypoints(C, [kp(2, 2)], Fraction(1)), [0.9])

    def test_corner_uses_in_bounds_cells(self):
        C = -np.ones((1, 4, 4))
        C[0, 0, 0], C[0, 0, 1], C[0, 1, 0] = -0.5, -0.7, -0.2
        C[0, 3, 3] = 9.0
        np.testing.assert_array_equal(pool_at_keypoints(C, [kp(0, 0)], Fraction(1)), [-0.2])

    def test_identical_keypoints(self):
        C = np.random.default_rng(0).standard_normal((3, 6, 6))
        one = pool_at_keypoints(C, [kp(2, 3)], Fraction(1, 2))
        np.testing.assert_array_equal(pool_at_keypoints(C, [kp(2, 3)] * 5, Fraction(1, 2)), one)

    def test_average_over_keypoints(self):
        C = np.arange(25.0).reshape(1, 5, 5)
        a = pool_at_keypoints(C, [kp(0, 0)], Fraction(1))
        b = pool_at_keypoints(C, [kp(4, 4)], Fraction(1))
        np.testing.assert_array_equal(pool_at_keypoints(C, [kp(0, 0), kp(4, 4)], Fraction(1)), (a + b) / 2)

    def test_rounding_and_clamping(self):
        assert [round_half_away(Fraction(v, 2)) for v in (-3, -1, 1, 3, 5)] == [-2, -1, 1, 2, 3]
        C = np.zeros((1, 3, 3))
        C[0, 2, 2] = 1.0
        # 5 * 1/2 = 2.5 rounds to 3 and clamps to 2; 100 clamps too
        assert pool_at_keypoints(C, [kp(5, 5)], Fraction(1, 2))[0] == 1.0
        assert pool_at_keypoints(C, [kp(100, 100)], Fraction(1, 2))[0] == 1.0
        # 3 * 1/2 = 1.5 rounds to 2, so (2, 2) is the centre
        assert pool_at_keypoints(C, [kp(3, 3)], Fraction(1, 2))[0] == 1.0
        # 1 * 1/2 = 0.5 rounds to 1; the cross around (1, 1) misses (2, 2)
        assert pool_at_keypoints(C, [kp(1, 1)], Fraction(1, 2))[0] == 0.0

    def test_requires_keypoints(self):
        with pytest.raises(ValueError):
            pool_at_keypoints(np.zeros((1, 2, 2)), [], Fraction(1))


class TestDescriptor:
    def test_toy_alex_length_and_blocks(self):
        spec = toy_alex(8, 32)
        d = build_descriptor(spec, init_params(spec, 0), np.random.default_rng(0).random((32, 32)))
        assert d.data.shape == (56,)
        assert d.layer_offsets == (0, 8, 24)
        assert [len(d.block(p)) for p in range(3)] == [8, 16, 32]

    def test_zero_image_gives_zero_descriptor(self):
        spec = toy_alex(8, 32)
        d = build_descriptor(spec, init_params(spec, 0), np.zeros((32, 32)))
        np.testing.assert_array_equal(d.data, 0.0)

    def test_fallback_keypoints_on_constant_image(self):
        spec = toy_alex(8, 32)
        p = init_params(spec, 1)
        img = np.full((32, 32), 0.4)
        auto = build_descriptor(spec, p, img)
        manual = build_descriptor(spec, p, img, keypoints=fallback_grid(32, 32))
        np.testing.assert_array_equal(auto.data, manual.data)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31))
    def test_entries_within_unit_interval(self, seed):
        spec = toy_alex(8, 32)
        p = init_params(spec, seed % 7)
        p.biases[0] = np.random.default_rng(seed).standard_normal(8)
        d = build_descriptor(spec, p, np.random.default_rng(seed).random((32, 32)))
        assert np.all(np.abs(d.data) <= 1.0)

    def test_deterministic(self):
        spec = toy_alex(8, 32)
        p = init_params(spec, 2)
        img = np.random.default_rng(2).random((32, 32))
        np.testing.assert_array_equal(build_descriptor(spec, p, img).data,
                                      build_descriptor(spec, p, img).data)

    def test_from_maps_matches_build(self):
        spec = toy_alex(8, 32)
        p = init_params(spec, 3)
        img = np.random.default_rng(3).random((32, 32))
        kps = [kp(4, 5), kp(20, 11)]
        _, maps = forward(spec, p, img[None])
        np.testing.assert_array_equal(descriptor_from_maps(spec, maps, kps).data,
                                      build_descriptor(spec, p, img, keypoints=kps).data)

    def test_wrong_image_size(self):
        spec = toy_alex(8, 32)
        with pytest.raises(ValueError):
            build_descriptor(spec, init_params(spec), np.zeros((31, 32)))
