"""Image decoding, grayscale, resize and masking."""
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from synergy_selfie.errors import DecodeError
from synergy_selfie.imaging import (MaskRect, apply_masks, decode_image, encode_pgm, encode_ppm,
                                    load_gray, resize_bilinear, to_grayscale)


def resize_scalar(img, out_w, out_h):
    """Pixel-by-pixel bilinear resize with half-pixel centers and clamping."""
    h, w = len(img), len(img[0])
    out = np.zeros((out_h, out_w))
    for oy in range(out_h):
        sy = min(max((oy + 0.5) * h / out_h - 0.5, 0.0), h - 1)
        y0 = int(sy)
        y1 = min(y0 + 1, h - 1)
        ty = sy - y0
        for ox in range(out_w):
            sx = min(max((ox + 0.5) * w / out_w - 0.5, 0.0), w - 1)
            x0 = int(sx)
            x1 = min(x0 + 1, w - 1)
            tx = sx - x0
            top = img[y0][x0] * (1 - tx) + img[y0][x1] * tx
            bot = img[y1][x0] * (1 - tx) + img[y1][x1] * tx
            out[oy, ox] = top * (1 - ty) + bot * ty
    return out


class TestDecode:
    def test_white_pgm(self):
        rgb = decode_image(b"P5\n2 2\n255\n" + bytes([255] * 4))
        assert rgb.shape == (2, 2, 3)
        np.testing.assert_array_equal(rgb, 1.0)

    def test_black_ppm(self):
        rgb = decode_image(b"P6 1 1 255\n" + bytes(3))
        np.testing.assert_array_equal(rgb, np.zeros((1, 1, 3)))

    def test_pure_channels_ppm(self):
        payload = bytes([255, 0, 0, 0, 255, 0, 0, 0, 255])
        rgb = decode_image(b"P6\n3 1\n255\n" + payload)
        np.testing.assert_array_equal(rgb[0], np.eye(3))

    def test_header_comments_and_small_maxval(self):
        rgb = decode_image(b"P5\n# a comment\n2 1\n# another\n15\n" + bytes([15, 5]))
        np.testing.assert_allclose(rgb[0, :, 0], [1.0, 1 / 3])

    def test_truncated_payload_reports_offset(self):
        data = b"P5\n4 4\n255\n" + bytes(10)
        with pytest.raises(DecodeError) as exc:
            decode_image(data)
        assert exc.value.offset == len(data)
        assert "truncated" in str(exc.value)

    def test_sample_above_maxval(self):
        with pytest.raises(DecodeError) as exc:
            decode_image(b"P5\n2 1\n100\n" + bytes([50, 101]))
        assert exc.value.offset == len(b"P5\n2 1\n100\n") + 1

    @pytest.mark.parametrize("data", [b"", b"GIF89a", b"P5\n2", b"P5\nx 2\n255\n", b"P5\n2 2\n999\n"])
    def test_malformed(self, data):
        with pytest.raises(DecodeError):
            decode_image(data)

    def test_png_roundtrip(self):
        from PIL import Image

        arr = np.arange(12, dtype=np.uint8).reshape(2, 2, 3) * 20
        buf = io.BytesIO()
        Image.fromarray(arr, "RGB").save(buf, format="PNG")
        np.testing.assert_allclose(decode_image(buf.getvalue()), arr / 255.0)

    def test_corrupt_png(self):
        with pytest.raises(DecodeError):
            decode_image(b"\x89PNG\r\n\x1a\n" + bytes(20))

    @given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3))))
    def test_ppm_encode_decode_roundtrip(self, arr):
        np.testing.assert_array_equal(decode_image(encode_ppm(arr / 255.0)), arr / 255.0)

    def test_pgm_encode_decode_roundtrip(self, tmp_path):
        gray = np.arange(6).reshape(2, 3) / 255.0
        (tmp_path / "g.pgm").write_bytes(encode_pgm(gray))
        np.testing.assert_allclose(load_gray(tmp_path / "g.pgm"), gray, atol=1e-12)


class TestGrayscale:
    def test_white_and_black(self):
        np.testing.assert_allclose(to_grayscale(np.ones((3, 2, 3))), 1.0, atol=1e-15)
        np.testing.assert_array_equal(to_grayscale(np.zeros((3, 2, 3))), 0.0)

    def test_pure_red(self):
        assert to_grayscale(np.array([[[1.0, 0.0, 0.0]]]))[0, 0] == pytest.approx(0.299, abs=1e-15)


class TestResize:
    @given(st.floats(0, 1), st.integers(1, 9), st.integers(1, 9), st.integers(1, 9), st.integers(1, 9))
    def test_constant_stays_constant(self, v, h, w, oh, ow):
        out = resize_bilinear(np.full((h, w), v), ow, oh)
        assert out.shape == (oh, ow)
        np.testing.assert_array_equal(out, v)

    def test_identity_is_bit_identical_copy(self):
        img = np.random.default_rng(0).random((5, 7))
        out = resize_bilinear(img, 7, 5)
        np.testing.assert_array_equal(out, img)
        assert out is not img

    def test_two_pixels_to_four(self):
        out = resize_bilinear(np.array([[0.0, 1.0]]), 4, 1)
        np.testing.assert_allclose(out, resize_scalar([[0.0, 1.0]], 4, 1), atol=1e-15)
        np.testing.assert_allclose(out[0], [0.0, 0.25, 0.75, 1.0])

    @settings(max_examples=40)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 12), st.integers(1, 12), st.integers(0, 10**6))
    def test_matches_scalar_oracle(self, h, w, oh, ow, seed):
        img = np.random.default_rng(seed).random((h, w))
        out = resize_bilinear(img, ow, oh)
        np.testing.assert_allclose(out, resize_scalar(img.tolist(), ow, oh), atol=1e-12)
        assert out.min() >= img.min() and out.max() <= img.max()

    def test_rejects_empty_target(self):
        with pytest.raises(ValueError):
            resize_bilinear(np.ones((2, 2)), 0, 3)


class TestMasks:
    def test_empty_list_unchanged(self):
        img = np.random.default_rng(1).random((4, 5))
        np.testing.assert_array_equal(apply_masks(img, []), img)

    def test_whole_image(self):
        np.testing.assert_array_equal(apply_masks(np.ones((4, 5)), [MaskRect(0, 0, 5, 4)]), 0.0)

    def test_interior_rect_zeroes_four_pixels(self):
        out = apply_masks(np.ones((4, 4)), [MaskRect(1, 1, 2, 2)])
        assert np.count_nonzero(out == 0) == 4
        np.testing.assert_array_equal(out[1:3, 1:3], 0.0)

    def test_rect_clipped_to_image(self):
        out = apply_masks(np.ones((4, 4)), [MaskRect(-2, 3, 3, 9)])
        assert np.count_nonzero(out == 0) == 1 and out[3, 0] == 0

    def test_input_not_modified(self):
        img = np.ones((3, 3))
        apply_masks(img, [MaskRect(0, 0, 3, 3)])
        np.testing.assert_array_equal(img, 1.0)

    def test_rect_text_roundtrip(self):
        r = MaskRect(3, 4, 5, 6)
        assert MaskRect.from_text(r.to_text()) == r
        with pytest.raises(ValueError):
            MaskRect.from_text("1,2,3")
        with pytest.raises(ValueError):
            MaskRect(0, 0, -1, 2)
