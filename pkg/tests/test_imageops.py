import logging

import numpy as np
import pytest
from PIL import Image

from dermapipe.errors import (
    CorruptFile,
    EmptyMaskFallback,
    MissingFile,
    UnsupportedFormat,
    ZeroDimension,
)
from dermapipe.imageops import (
    FEATURE_INPUT_SIZE,
    IMAGENET_MEAN,
    IMAGENET_STD,
    MASK_COVERAGE_FLOOR,
    apply_mask,
    apply_mask_or_whole,
    crop_to_mask_bbox,
    decode_image,
    denormalize_imagenet,
    feature_tensor,
    load_mask,
    normalize_imagenet,
    resize_bilinear,
    resize_mask_nearest,
    save_mask,
)

from helpers import write_mask_png, write_rgb_png


# --- decode ---


def test_decode_png_and_jpeg(tmp_path):
    raw = write_rgb_png(tmp_path / "x.png", 10, 12, seed=5)
    img = decode_image(tmp_path / "x.png")
    assert img.shape == (10, 12, 3) and img.dtype == np.float32
    assert np.allclose(img, raw.astype(np.float32) / 255.0)
    assert img.min() >= 0.0 and img.max() <= 1.0

    Image.fromarray(raw, mode="RGB").save(tmp_path / "x.jpg", format="JPEG", quality=95)
    jpg = decode_image(tmp_path / "x.jpg")
    assert jpg.shape == (10, 12, 3)


def test_decode_grayscale_promotes_to_rgb(tmp_path):
    Image.fromarray(np.full((6, 6), 77, dtype=np.uint8), mode="L").save(tmp_path / "g.png")
    img = decode_image(tmp_path / "g.png")
    assert img.shape == (6, 6, 3)
    assert np.allclose(img, 77 / 255.0)


def test_decode_rejects_missing_unsupported_corrupt(tmp_path):
    with pytest.raises(MissingFile):
        decode_image(tmp_path / "none.png")

    bmp = tmp_path / "x.bmp"
    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(bmp, format="BMP")
    with pytest.raises(UnsupportedFormat):
        decode_image(bmp)

    garbage = tmp_path / "garbage.png"
    garbage.write_bytes(b"not an image at all")
    with pytest.raises(UnsupportedFormat):
        decode_image(garbage)

    truncated = tmp_path / "trunc.png"
    write_rgb_png(tmp_path / "full.png", 64, 64, seed=1)
    data = (tmp_path / "full.png").read_bytes()
    truncated.write_bytes(data[: len(data) // 3])
    with pytest.raises((CorruptFile, UnsupportedFormat)):
        decode_image(truncated)


# --- bilinear resize ---


def test_resize_identity():
    img = np.random.default_rng(0).random((9, 7, 3)).astype(np.float32)
    out = resize_bilinear(img, 9, 7)
    assert np.allclose(out, img, atol=1e-6)


def test_resize_1d_hand_case():
    # Row [0, 1] upsampled to width 4 with half-pixel centers:
    # src_x = (dst + 0.5) * 2/4 - 0.5 = [-0.25, 0.25, 0.75, 1.25] -> clamped
    # [0, 0.25, 0.75, 1].
    row = np.array([[0.0, 1.0]], dtype=np.float32)
    out = resize_bilinear(row, 1, 4)
    assert np.allclose(out, [[0.0, 0.25, 0.75, 1.0]], atol=1e-6)


def test_resize_2x2_to_3x3_hand_case():
    # src coords for 2 -> 3: (d + 0.5) * 2/3 - 0.5 = [-1/6, 1/2, 7/6] ->
    # clamped [0, 1/2, 1]. Bilinear on corners [[0,1],[2,3]]:
    img = np.array([[0.0, 1.0], [2.0, 3.0]], dtype=np.float32)
    out = resize_bilinear(img, 3, 3)
    expect = np.array([
        [0.0, 0.5, 1.0],
        [1.0, 1.5, 2.0],
        [2.0, 2.5, 3.0],
    ])
    assert np.allclose(out, expect, atol=1e-6)


def test_resize_downsample_average_of_constant():
    img = np.full((8, 8, 3), 0.37, dtype=np.float32)
    out = resize_bilinear(img, 3, 5)
    assert out.shape == (3, 5, 3)
    assert np.allclose(out, 0.37, atol=1e-6)


def test_resize_stays_in_range_and_dtype():
    img = np.random.default_rng(3).random((31, 17, 3)).astype(np.float32)
    out = resize_bilinear(img, 224, 224)
    assert out.dtype == np.float32
    assert out.min() >= img.min() - 1e-6 and out.max() <= img.max() + 1e-6


def test_resize_rejects_zero_target():
    img = np.zeros((4, 4, 3), dtype=np.float32)
    with pytest.raises(ZeroDimension):
        resize_bilinear(img, 0, 4)
    with pytest.raises(ZeroDimension):
        resize_bilinear(img, 4, -1)


def test_resize_mask_nearest_strictly_binary():
    mask = np.zeros((10, 10), dtype=np.uint8)
    mask[2:5, 3:7] = 1
    out = resize_mask_nearest(mask, 23, 17)
    assert set(np.unique(out)) <= {0, 1}
    assert out.dtype == mask.dtype
    # identity size keeps the mask unchanged
    assert np.array_equal(resize_mask_nearest(mask, 10, 10), mask)
    # index mapping: out row r samples in row floor((r + 0.5) * in/out)
    big = resize_mask_nearest(mask, 20, 20)
    rows = np.minimum(((np.arange(20) + 0.5) * 0.5).astype(int), 9)
    assert np.array_equal(big, mask[rows[:, None], rows[None, :]])


# --- normalisation ---


def test_normalize_constants_and_roundtrip():
    assert np.allclose(IMAGENET_MEAN, [0.485, 0.456, 0.406])
    assert np.allclose(IMAGENET_STD, [0.229, 0.224, 0.225])
    img = np.random.default_rng(1).random((5, 6, 3)).astype(np.float32)
    z = normalize_imagenet(img)
    assert np.allclose(z, (img - IMAGENET_MEAN) / IMAGENET_STD, atol=1e-6)
    assert np.allclose(denormalize_imagenet(z), img, atol=1e-6)
    # black maps to -mean/std exactly (the masked-background constant)
    black = normalize_imagenet(np.zeros((2, 2, 3), dtype=np.float32))
    assert np.allclose(black[0, 0], -IMAGENET_MEAN / IMAGENET_STD, atol=1e-6)


# --- masking ---


def test_apply_mask_zeroes_background():
    img = np.ones((8, 8, 3), dtype=np.float32) * 0.5
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[:4] = 1
    out = apply_mask(img, mask)
    assert np.all(out[:4] == 0.5) and np.all(out[4:] == 0.0)


def test_apply_mask_resizes_mismatched_mask():
    img = np.ones((8, 8, 3), dtype=np.float32)
    mask = np.zeros((4, 4), dtype=np.uint8)
    mask[:2] = 1  # top half
    out = apply_mask(img, mask)
    assert np.all(out[:4] == 1.0) and np.all(out[4:] == 0.0)


def test_apply_mask_coverage_floor():
    img = np.ones((10, 10, 3), dtype=np.float32)
    empty = np.zeros((10, 10), dtype=np.uint8)
    with pytest.raises(EmptyMaskFallback):
        apply_mask(img, empty)
    # exactly at the floor (1 of 100 pixels = 1%) passes
    one = empty.copy()
    one[0, 0] = 1
    assert apply_mask(img, one).shape == (10, 10, 3)
    # just under the floor fails (1 of 10201 pixels)
    big = np.zeros((101, 101), dtype=np.uint8)
    big[0, 0] = 1
    with pytest.raises(EmptyMaskFallback):
        apply_mask(np.ones((101, 101, 3), dtype=np.float32), big)
    assert MASK_COVERAGE_FLOOR == 0.01


def test_apply_mask_or_whole_fallback_warns(caplog):
    img = np.ones((10, 10, 3), dtype=np.float32) * 0.25
    empty = np.zeros((10, 10), dtype=np.uint8)
    with caplog.at_level(logging.WARNING, logger="dermapipe.imageops"):
        out, fell_back = apply_mask_or_whole(img, empty, record_id="rec9")
    assert fell_back and np.array_equal(out, img)
    assert any("rec9" in r.message for r in caplog.records)
    out, fell_back = apply_mask_or_whole(img, None)
    assert fell_back and np.array_equal(out, img)


def test_crop_to_mask_bbox():
    img = np.arange(6 * 8 * 3, dtype=np.float32).reshape(6, 8, 3)
    mask = np.zeros((6, 8), dtype=np.uint8)
    mask[2:5, 3:6] = 1
    out = crop_to_mask_bbox(img, mask)
    assert np.array_equal(out, img[2:5, 3:6])
    with pytest.raises(EmptyMaskFallback):
        crop_to_mask_bbox(img, np.zeros((6, 8), dtype=np.uint8))


# --- mask files ---


def test_mask_file_roundtrip(tmp_path):
    mask = np.zeros((15, 9), dtype=np.uint8)
    mask[4:9, 2:7] = 1
    save_mask(mask, tmp_path / "m.png")
    back = load_mask(tmp_path / "m.png")
    assert np.array_equal(back, mask)
    with Image.open(tmp_path / "m.png") as im:
        assert im.mode == "L"  # single channel, 8-bit


def test_load_mask_binarizes_at_128(tmp_path):
    gray = np.array([[0, 127, 128, 255]], dtype=np.uint8)
    Image.fromarray(gray, mode="L").save(tmp_path / "g.png")
    assert load_mask(tmp_path / "g.png").tolist() == [[0, 0, 1, 1]]


def test_load_mask_errors(tmp_path):
    with pytest.raises(MissingFile):
        load_mask(tmp_path / "none.png")
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"xx")
    with pytest.raises(UnsupportedFormat):
        load_mask(bad)


# --- end-to-end feature preprocessing ---


def test_feature_tensor_masked_vs_whole(tmp_path):
    write_rgb_png(tmp_path / "img.png", 64, 48, seed=9)
    mask = write_mask_png(tmp_path / "mask.png", 64, 48, box=(8, 40, 8, 40))
    whole, fb_whole = feature_tensor(tmp_path / "img.png")
    masked, fb_masked = feature_tensor(tmp_path / "img.png", mask=mask)
    assert whole.shape == (FEATURE_INPUT_SIZE, FEATURE_INPUT_SIZE, 3)
    assert whole.dtype == np.float32 and masked.dtype == np.float32
    assert not fb_whole and not fb_masked
    assert not np.allclose(whole, masked)
    # background of the masked tensor is the exact normalised-zero constant
    corner = masked[0, 0]
    assert np.allclose(corner, -IMAGENET_MEAN / IMAGENET_STD, atol=1e-5)


def test_feature_tensor_empty_mask_falls_back(tmp_path, caplog):
    write_rgb_png(tmp_path / "img.png", 32, 32, seed=2)
    empty = np.zeros((32, 32), dtype=np.uint8)
    whole, _ = feature_tensor(tmp_path / "img.png")
    with caplog.at_level(logging.WARNING, logger="dermapipe.imageops"):
        out, fell_back = feature_tensor(tmp_path / "img.png", mask=empty,
                                        record_id="r1")
    assert fell_back
    assert np.array_equal(out, whole)
    assert any("r1" in r.message for r in caplog.records)


def test_feature_tensor_crop_bbox_mode(tmp_path):
    write_rgb_png(tmp_path / "img.png", 40, 40, seed=4)
    mask = np.zeros((40, 40), dtype=np.uint8)
    mask[10:30, 5:35] = 1
    crop, fell_back = feature_tensor(tmp_path / "img.png", mask=mask, crop_bbox=True)
    assert crop.shape == (FEATURE_INPUT_SIZE, FEATURE_INPUT_SIZE, 3)
    assert not fell_back
    plain, _ = feature_tensor(tmp_path / "img.png", mask=mask)
    assert not np.allclose(crop, plain)


def test_feature_tensor_custom_size(tmp_path):
    write_rgb_png(tmp_path / "img.png", 30, 20, seed=6)
    out, _ = feature_tensor(tmp_path / "img.png", size=448)
    assert out.shape == (448, 448, 3)
