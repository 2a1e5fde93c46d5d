import math

import numpy as np
import pytest
from PIL import Image

from gidnet.errors import ImageError, ShapeError
from gidnet.imaging import (EvalProtocol, ImagePlane, bicubic_resize, crop_to_multiple, cubic, eval_dataset,
                            image_to_tensor, load_png, psnr, resize_weights, rgb_to_y, save_png, tensor_to_image)
from gidnet.model import ModelConfig, build_model

from conftest import smooth_image


def rand_image(rng, h, w):
    return ImagePlane(rng.integers(0, 256, (h, w, 3)).astype(np.uint8))


class TestPng:
    def test_roundtrip(self, tmp_path, rng):
        img = rand_image(rng, 5, 7)
        save_png(img, tmp_path / "a.png")
        back = load_png(tmp_path / "a.png")
        assert back.width == 7 and back.height == 5
        assert np.array_equal(back.data, img.data)

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_png(tmp_path / "nope.png")

    def test_single_pixel(self, tmp_path):
        save_png(ImagePlane(np.array([[[1, 2, 3]]], np.uint8)), tmp_path / "p.png")
        img = load_png(tmp_path / "p.png")
        assert img.data.size == 3 and img.data.ravel().tolist() == [1, 2, 3]

    def test_greyscale_replicated(self, tmp_path):
        Image.fromarray(np.array([[10, 200]], np.uint8), mode="L").save(tmp_path / "g.png")
        img = load_png(tmp_path / "g.png")
        assert img.data.tolist() == [[[10, 10, 10], [200, 200, 200]]]

    def test_16bit_grey_truncated(self, tmp_path):
        arr = np.array([[0x12FF, 0xABCD]], np.uint16)
        Image.fromarray(arr).save(tmp_path / "g16.png")
        img = load_png(tmp_path / "g16.png")
        assert img.data[0, :, 0].tolist() == [0x12, 0xAB]

    def test_rgba_rejected(self, tmp_path):
        Image.new("RGBA", (2, 2)).save(tmp_path / "a.png")
        with pytest.raises(ImageError, match="unsupported"):
            load_png(tmp_path / "a.png")

    def test_malformed(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"\x89PNG\r\n\x1a\n garbage")
        with pytest.raises(ImageError):
            load_png(tmp_path / "bad.png")


class TestBicubic:
    def test_kernel_values(self):
        assert cubic(np.array(0.0)) == 1.0
        assert cubic(np.array([1.0, 2.0, -1.0, 2.5])).tolist() == [0.0, 0.0, 0.0, 0.0]
        # a = -0.5 at |x| = 0.5: 1.5/8 - 2.5/4 + 1
        assert cubic(np.array(0.5)) == pytest.approx(0.5625)

    @pytest.mark.parametrize("t", np.linspace(0, 1, 11))
    def test_partition_of_unity(self, t):
        offsets = np.arange(-3, 4) + t
        assert abs(cubic(offsets).sum() - 1.0) <= 1e-6

    @pytest.mark.parametrize("n,m,f,aa", [(16, 4, 0.25, True), (4, 16, 4, False), (9, 27, 3, False), (10, 5, 0.5, False)])
    def test_weight_rows_normalised(self, n, m, f, aa):
        w = resize_weights(n, m, f, aa)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)

    def test_identity(self, rng):
        img = rand_image(rng, 9, 11)
        assert np.array_equal(bicubic_resize(img, 1.0).data, img.data)

    @pytest.mark.parametrize("factor", [0.25, 0.5, 2, 3, 4])
    def test_constant(self, factor):
        img = ImagePlane(np.full((12, 8, 3), [17, 128, 250], np.uint8))
        out = bicubic_resize(img, factor)
        assert (out.data == np.array([17, 128, 250], np.uint8)).all()

    def test_sizes(self, rng):
        img = rand_image(rng, 20, 12)
        assert bicubic_resize(img, 0.25).data.shape == (5, 3, 3)
        assert bicubic_resize(img, 4).data.shape == (80, 48, 3)

    @pytest.mark.parametrize("factor", [0.25, 0.5, 3, 4])
    def test_matches_pillow_interior(self, factor):
        img = smooth_image(7, 64, 48)
        mine = bicubic_resize(img, factor, antialias=True).data.astype(int)
        ref = np.asarray(Image.fromarray(img.data).resize((mine.shape[1], mine.shape[0]), Image.BICUBIC)).astype(int)
        b = int(max(2, 2 * factor)) + 1
        assert np.abs(mine - ref)[b:-b, b:-b].max() <= 1

    def test_antialias_smooths(self, rng):
        img = rand_image(rng, 64, 64)
        aa = bicubic_resize(img, 0.25, antialias=True).data.astype(float)
        plain = bicubic_resize(img, 0.25, antialias=False).data.astype(float)
        assert aa.std() < plain.std()

    def test_bad_factor(self, rng):
        with pytest.raises(ValueError):
            bicubic_resize(rand_image(rng, 4, 4), 0)


class TestLuminance:
    @pytest.mark.parametrize("rgb,y", [((255, 255, 255), 235.0), ((0, 0, 0), 16.0), ((0, 255, 0), 144.553)])
    def test_points(self, rgb, y):
        img = ImagePlane(np.array([[rgb]], np.uint8))
        assert rgb_to_y(img)[0, 0] == pytest.approx(y, abs=1e-9)

    def test_affine(self, rng):
        a = rand_image(rng, 4, 4)
        b = rand_image(rng, 4, 4)
        mix = ImagePlane(((a.data.astype(int) + b.data.astype(int)) // 2).astype(np.uint8))
        ya, yb = rgb_to_y(a), rgb_to_y(b)
        exact = ((a.data.astype(int) + b.data.astype(int)) % 2 == 0).all(axis=2)
        np.testing.assert_allclose(rgb_to_y(mix)[exact], ((ya + yb) / 2)[exact], atol=1e-6)


class TestPsnr:
    def test_identical(self, rng):
        img = rand_image(rng, 12, 12)
        assert psnr(img, img) == math.inf

    def test_black_white(self):
        a = ImagePlane(np.zeros((10, 10, 3), np.uint8))
        b = ImagePlane(np.full((10, 10, 3), 255, np.uint8))
        assert psnr(a, b, EvalProtocol(luminance=False)) == pytest.approx(0.0)

    def test_symmetry(self, rng):
        a, b = rand_image(rng, 16, 16), rand_image(rng, 16, 16)
        for proto in (EvalProtocol(), EvalProtocol(luminance=False, shave=0)):
            assert psnr(a, b, proto) == psnr(b, a, proto)

    def test_monotone_in_noise(self, rng):
        base = smooth_image(3, 40, 40)
        noise = rng.uniform(-1, 1, base.data.shape)
        scores = []
        for amp in (2, 8, 32):
            noisy = ImagePlane(np.clip(base.data + amp * noise, 0, 255).round().astype(np.uint8))
            scores.append(psnr(base, noisy))
        assert scores[0] >= scores[1] >= scores[2]

    def test_shave_excludes_border(self):
        a = ImagePlane(np.zeros((12, 12, 3), np.uint8))
        b = a.data.copy()
        b[0, :] = 255
        assert psnr(a, ImagePlane(b), EvalProtocol(shave=4)) == math.inf
        assert psnr(a, ImagePlane(b), EvalProtocol(shave=0)) < math.inf

    def test_mismatch(self, rng):
        with pytest.raises(ShapeError):
            psnr(rand_image(rng, 10, 10), rand_image(rng, 10, 11))
        with pytest.raises(ShapeError):
            psnr(rand_image(rng, 8, 8), rand_image(rng, 8, 8), EvalProtocol(shave=4))

    def test_y_and_rgb_differ(self, rng):
        a, b = rand_image(rng, 16, 16), rand_image(rng, 16, 16)
        assert psnr(a, b, EvalProtocol(luminance=True)) != psnr(a, b, EvalProtocol(luminance=False))


def test_tensor_conversions(rng):
    img = rand_image(rng, 5, 6)
    t = image_to_tensor(img)
    assert t.shape == (1, 3, 5, 6) and t.dtype == np.float32
    assert np.array_equal(tensor_to_image(t).data, img.data)
    assert tensor_to_image(np.full((1, 3, 1, 1), 2.0)).data.ravel().tolist() == [255] * 3
    assert tensor_to_image(np.full((1, 3, 1, 1), -1.0)).data.ravel().tolist() == [0] * 3
    # 0.5/255 rounds away from zero
    assert tensor_to_image(np.full((1, 3, 1, 1), 0.5 / 255)).data.ravel().tolist() == [1] * 3


def test_crop_to_multiple(rng):
    assert crop_to_multiple(rand_image(rng, 13, 10), 4).data.shape == (12, 8, 3)


class TestEvalDataset:
    def _write(self, d, imgs):
        d.mkdir()
        for i, img in enumerate(imgs):
            save_png(img, d / f"img{i:02d}.png")
        return d

    def test_single_image(self, tmp_path):
        d = self._write(tmp_path / "hr", [smooth_image(1, 40, 36)])
        rep = eval_dataset(None, d, EvalProtocol())
        assert len(rep.rows) == 1 and rep.mean == rep.rows[0][1]
        hr = load_png(d / "img00.png")
        lr = bicubic_resize(hr, 0.25)
        assert rep.rows[0][1] == psnr(bicubic_resize(lr, 4, antialias=False), hr)

    def test_ordering_and_mean(self, tmp_path):
        d = self._write(tmp_path / "hr", [smooth_image(i, 33, 30) for i in range(3)])
        rep = eval_dataset(None, d, EvalProtocol(luminance=False))
        assert [n for n, _ in rep.rows] == ["img00.png", "img01.png", "img02.png"]
        assert rep.mean == pytest.approx(np.mean([p for _, p in rep.rows]))
        assert "mean" in rep.to_text() and "psnr.mean=" in rep.to_kv()

    def test_empty(self, tmp_path):
        (tmp_path / "e").mkdir()
        with pytest.raises(FileNotFoundError):
            eval_dataset(None, tmp_path / "e")

    def test_random_model_below_bicubic(self, tmp_path):
        d = self._write(tmp_path / "hr", [smooth_image(i, 32, 32) for i in range(2)])
        model = build_model(ModelConfig(4, False), seed=0)
        bic = eval_dataset(None, d).mean
        rnd = eval_dataset(model, d).mean
        assert math.isfinite(rnd) and rnd < bic
