"""PNG I/O, bicubic resampling, luminance conversion and PSNR."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from .errors import ImageError, ShapeError

CUBIC_A = -0.5


@dataclass
class ImagePlane:
    """8-bit RGB raster stored as a ``(height, width, 3)`` uint8 array."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3 or self.data.dtype != np.uint8:
            raise ShapeError(f"ImagePlane needs (h, w, 3) uint8 samples, got {self.data.shape} {self.data.dtype}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ShapeError("ImagePlane must be nonempty")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def crop(self, top: int, left: int, height: int, width: int) -> "ImagePlane":
        return ImagePlane(self.data[top:top + height, left:left + width].copy())


def load_png(path: str | os.PathLike) -> ImagePlane:
    """Read an 8/16-bit RGB or greyscale PNG; 16-bit samples keep their high byte."""
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ImageError(f"{path}: not a PNG file")
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.uint32) >> 8
                arr = np.repeat(arr.astype(np.uint8)[..., None], 3, axis=2)
            elif mode in ("1", "L"):
                arr = np.repeat(np.asarray(im.convert("L"))[..., None], 3, axis=2)
            elif mode == "P":
                arr = np.asarray(im.convert("RGB"))
            elif mode == "RGB":
                arr = np.asarray(im)
            else:
                raise ImageError(f"{path}: unsupported PNG color type {mode!r}")
    except FileNotFoundError:
        raise
    except ImageError:
        raise
    except (OSError, SyntaxError, ValueError) as e:
        raise ImageError(f"{path}: malformed PNG ({e})") from e
    return ImagePlane(np.ascontiguousarray(arr, dtype=np.uint8))


def save_png(img: ImagePlane, path: str | os.PathLike) -> None:
    Image.fromarray(img.data, mode="RGB").save(path, format="PNG")


def round_to_u8(x: np.ndarray) -> np.ndarray:
    """Clamp to [0, 255] and round half away from zero."""
    return np.floor(np.clip(x, 0.0, 255.0) + 0.5).astype(np.uint8)


def image_to_tensor(img: ImagePlane) -> np.ndarray:
    """``(1, 3, h, w)`` float32 tensor in [0, 1]."""
    return (img.data.astype(np.float32) / 255.0).transpose(2, 0, 1)[None].copy()


def tensor_to_image(t: np.ndarray, index: int = 0) -> ImagePlane:
    return ImagePlane(round_to_u8(t[index].transpose(1, 2, 0).astype(np.float64) * 255.0))


# ----------------------------------------------------------------------------
# Bicubic resampling


def cubic(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def resize_weights(in_len: int, out_len: int, factor: float, antialias: bool) -> np.ndarray:
    """Dense ``(out_len, in_len)`` resampling matrix; rows sum to one.

    Output sample ``u`` (0-based) sits at input coordinate ``(u + 0.5)/factor - 0.5``.
    Out-of-range taps are folded onto the nearest edge sample.
    """
    if antialias and factor < 1:
        support = 2.0 / factor

        def kernel(d):
            return factor * cubic(factor * d)
    else:
        support = 2.0
        kernel = cubic
    centers = (np.arange(out_len) + 0.5) / factor - 0.5
    left = np.floor(centers - support).astype(np.int64) + 1
    taps = int(math.ceil(2 * support)) + 1
    idx = left[:, None] + np.arange(taps)[None, :]
    w = kernel(centers[:, None] - idx)
    w = w / w.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_len - 1)
    m = np.zeros((out_len, in_len))
    np.add.at(m, (np.repeat(np.arange(out_len), taps), idx.reshape(-1)), w.reshape(-1))
    return m


def _out_len(n: int, factor: float) -> int:
    return int(math.ceil(round(n * factor, 9)))


def bicubic_resize(img: ImagePlane, factor: float, antialias: bool = True) -> ImagePlane:
    if factor <= 0:
        raise ValueError(f"factor must be positive, got {factor}")
    oh, ow = _out_len(img.height, factor), _out_len(img.width, factor)
    if oh < 1 or ow < 1:
        raise ShapeError(f"resize of {img.height}x{img.width} by {factor} has zero size")
    mh = resize_weights(img.height, oh, factor, antialias)
    mw = resize_weights(img.width, ow, factor, antialias)
    src = img.data.astype(np.float64)
    out = np.einsum("oh,hwc->owc", mh, src)
    out = np.einsum("pw,owc->opc", mw, out)
    return ImagePlane(round_to_u8(out))


# ----------------------------------------------------------------------------
# Metrics


def rgb_to_y(img: ImagePlane) -> np.ndarray:
    """BT.601 limited-range luminance in [16, 235]."""
    rgb = img.data.astype(np.float64) / 255.0
    return 16.0 + rgb @ np.array([65.481, 128.553, 24.966])


@dataclass(frozen=True)
class EvalProtocol:
    scale: int = 4
    shave: int | None = None
    luminance: bool = True

    @property
    def border(self) -> int:
        return self.scale if self.shave is None else self.shave


def psnr(a: ImagePlane, b: ImagePlane, proto: EvalProtocol = EvalProtocol()) -> float:
    """PSNR in dB over the shaved interior; ``math.inf`` for identical inputs."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"psnr: {a.width}x{a.height} vs {b.width}x{b.height}")
    s = proto.border
    if s < 0 or a.height < 2 * s + 1 or a.width < 2 * s + 1:
        raise ShapeError(f"image {a.width}x{a.height} too small for shave {s}")
    if proto.luminance:
        x, y = rgb_to_y(a), rgb_to_y(b)
    else:
        x, y = a.data.astype(np.float64), b.data.astype(np.float64)
    if s:
        x, y = x[s:-s, s:-s], y[s:-s, s:-s]
    mse = float(np.mean((x - y) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def crop_to_multiple(img: ImagePlane, s: int) -> ImagePlane:
    return img.crop(0, 0, img.height - img.height % s, img.width - img.width % s)


@dataclass
class EvalReport:
    rows: list[tuple[str, float]]
    protocol: EvalProtocol

    @property
    def mean(self) -> float:
        return float(sum(p for _, p in self.rows) / len(self.rows))

    def to_text(self) -> str:
        w = max(len("mean"), *(len(n) for n, _ in self.rows))
        lines = [f"{n:<{w}}  {p:8.4f}" for n, p in self.rows]
        lines.append(f"{'mean':<{w}}  {self.mean:8.4f}")
        return "\n".join(lines)

    def to_kv(self) -> str:
        lines = [f"psnr.{n}={p:.6f}" for n, p in self.rows]
        lines.append(f"psnr.mean={self.mean:.6f}")
        return "\n".join(lines)


def bicubic_upscaler(scale: int) -> Callable[[ImagePlane], ImagePlane]:
    return lambda lr: bicubic_resize(lr, scale, antialias=False)


def model_upscaler(model) -> Callable[[ImagePlane], ImagePlane]:
    from .model import model_forward

    return lambda lr: tensor_to_image(model_forward(model, image_to_tensor(lr)))


def eval_dataset(model, hr_dir: str | os.PathLike, proto: EvalProtocol = EvalProtocol()) -> EvalReport:
    """Downscale each HR PNG by the protocol scale, super-resolve, and score it.

    ``model`` is a :class:`~gidnet.model.Model`, a callable ``ImagePlane -> ImagePlane``,
    or ``None`` for plain bicubic upscaling.
    """
    paths = sorted(p for p in Path(hr_dir).iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise FileNotFoundError(f"no PNG images in {hr_dir}")
    if model is None:
        upscale = bicubic_upscaler(proto.scale)
    elif callable(model):
        upscale = model
    else:
        upscale = model_upscaler(model)
    rows = []
    for p in paths:
        hr = crop_to_multiple(load_png(p), proto.scale)
        lr = bicubic_resize(hr, 1.0 / proto.scale, antialias=True)
        rows.append((p.name, psnr(upscale(lr), hr, proto)))
    return EvalReport(rows, proto)
