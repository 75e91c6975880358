import numpy as np
import pytest
import torch
from PIL import Image

from featinv.errors import UsageError
from featinv.images import (IMAGENET_MEAN, ImageBuffer, area_matched_size,
                            deprocess, load_image, pixel_range,
                            preprocess_rgb, save_image, to_pil)


def test_preprocess_shape_and_units():
    rgb = np.zeros((4, 6, 3), dtype=np.uint8)
    rgb[..., 0] = 255
    t = preprocess_rgb(rgb)
    assert t.shape == (3, 4, 6)
    # white red channel -> 1 - mean_r; black elsewhere -> -mean
    assert torch.allclose(t[0], torch.full((4, 6), 1.0 - IMAGENET_MEAN[0]))
    assert torch.allclose(t[1], torch.full((4, 6), -IMAGENET_MEAN[1]))


def test_preprocess_deprocess_roundtrip_exact():
    rng = np.random.default_rng(3)
    rgb = rng.integers(0, 256, size=(16, 12, 3), dtype=np.uint8)
    buf = ImageBuffer(preprocess_rgb(rgb, dtype=torch.float64))
    back = deprocess(buf)
    assert back.dtype == np.uint8
    assert np.array_equal(back, rgb)


def test_deprocess_clips_out_of_range():
    px = torch.full((3, 2, 2), 5.0)
    assert deprocess(ImageBuffer(px)).max() == 255
    px = torch.full((3, 2, 2), -5.0)
    assert deprocess(ImageBuffer(px)).min() == 0


def test_pixel_range_bounds():
    lo, hi = pixel_range(IMAGENET_MEAN)
    assert lo.shape == (3, 1, 1) and hi.shape == (3, 1, 1)
    for c in range(3):
        assert lo[c, 0, 0].item() == pytest.approx(-IMAGENET_MEAN[c])
        assert hi[c, 0, 0].item() == pytest.approx(1.0 - IMAGENET_MEAN[c])


def test_load_image_resize_and_dtype(tmp_path):
    rng = np.random.default_rng(0)
    p = tmp_path / "a.png"
    Image.fromarray(rng.integers(0, 255, (80, 60, 3), dtype=np.uint8)).save(p)
    buf = load_image(p, (40, 40), dtype=torch.float64)
    assert (buf.height, buf.width) == (40, 40)
    assert buf.pixels.dtype == torch.float64
    assert buf.source.endswith("a.png")


def test_load_image_missing_file(tmp_path):
    with pytest.raises(UsageError, match="cannot read"):
        load_image(tmp_path / "nope.png")


def test_load_image_rejects_tiny(tmp_path):
    p = tmp_path / "tiny.png"
    Image.new("RGB", (8, 8)).save(p)
    with pytest.raises(UsageError, match="32"):
        load_image(p)


def test_load_image_rejects_tiny_resize_request(tmp_path):
    p = tmp_path / "b.png"
    Image.new("RGB", (64, 64)).save(p)
    with pytest.raises(UsageError):
        load_image(p, (16, 16))


def test_save_image_png_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    rgb = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    buf = ImageBuffer(preprocess_rgb(rgb, dtype=torch.float64))
    out = tmp_path / "out.png"
    save_image(buf, out)
    assert np.array_equal(np.asarray(Image.open(out)), rgb)


def test_save_image_deterministic_bytes(tmp_path):
    buf = ImageBuffer(torch.rand(3, 20, 20, generator=torch.Generator().manual_seed(2)))
    save_image(buf, tmp_path / "a.png")
    save_image(buf, tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_to_pil_size():
    im = to_pil(ImageBuffer(torch.zeros(3, 10, 20)))
    assert im.size == (20, 10)  # PIL is (W, H)


def test_area_matched_size():
    # same aspect: area of 64x64 target spread over a 2:1 source
    h, w = area_matched_size((50, 100), (64, 64))
    assert h * w == pytest.approx(64 * 64, rel=0.05)
    assert w / h == pytest.approx(2.0, rel=0.05)
    assert area_matched_size((64, 64), (64, 64)) == (64, 64)


def test_area_matched_size_rejects_degenerate():
    with pytest.raises(UsageError):
        area_matched_size((4000, 4), (40, 40))


def test_clone_is_independent(toy_img):
    c = toy_img.clone()
    c.pixels += 1.0
    assert not torch.equal(c.pixels, toy_img.pixels)
