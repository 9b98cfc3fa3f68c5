"""Grayscale raster type plus decoding, rotation and cropping helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

# Default background for regions uncovered by a rotation (blank scanner glass).
WHITE = 255


class ImageLoadError(ValueError):
    """Raised when a file cannot be decoded into a GrayImage."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """An immutable 8-bit single-channel image.

    ``pixels`` is a read-only ``(height, width)`` uint8 array, row-major.
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError("zero-dimension image")
        if arr.dtype != np.uint8:
            if np.issubdtype(arr.dtype, np.floating) and not np.all(np.isfinite(arr)):
                raise ValueError("non-finite intensities")
            if arr.min() < 0 or arr.max() > 255:
                raise ValueError("intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        else:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_data(cls, width: int, height: int, data) -> "GrayImage":
        data = np.asarray(data)
        if data.size != width * height:
            raise ValueError(f"data length {data.size} != {width}x{height}")
        return cls(data.reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the intensities."""
        return self.pixels.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"GrayImage(w={self.width}, h={self.height})"


def load_image(path) -> GrayImage:
    """Decode a PNG or binary PGM (P5) file. Color input is reduced to luminance."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
    except OSError as exc:
        raise ImageLoadError(f"unreadable file: {path}: {exc}") from exc
    if head.startswith(b"\x89PNG"):
        expected = "PNG"
    elif head.startswith(b"P5"):
        expected = "PPM"
    else:
        raise ImageLoadError(f"unsupported format: {path}")
    try:
        with Image.open(path) as im:
            if im.format != expected:
                raise ImageLoadError(f"unsupported format: {path}")
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = (np.asarray(im, dtype=np.uint32) >> 8).astype(np.uint8)
            elif im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
            else:
                arr = np.asarray(im.convert("L"), dtype=np.uint8)
    except ImageLoadError:
        raise
    except (OSError, SyntaxError, ValueError, UnidentifiedImageError) as exc:
        raise ImageLoadError(f"unreadable file: {path}: {exc}") from exc
    if arr.ndim != 2 or arr.size == 0:
        raise ImageLoadError(f"zero-dimension image: {path}")
    return GrayImage(arr)


def save_png(img: GrayImage, path) -> None:
    Image.fromarray(np.ascontiguousarray(img.pixels), mode="L").save(path, format="PNG")


def mean_intensity(img: GrayImage) -> float:
    return float(img.pixels.mean(dtype=np.float64))


def _rotated_size(w: int, h: int, angle_degrees: float) -> tuple[int, int]:
    quarter = angle_degrees / 90.0
    if abs(quarter - round(quarter)) < 1e-12:
        # exact lattice rotation
        return (h, w) if int(round(quarter)) % 2 else (w, h)
    rad = math.radians(angle_degrees)
    c, s = abs(math.cos(rad)), abs(math.sin(rad))
    fw = w * c + h * s
    fh = w * s + h * c
    out_w = math.ceil(fw - 1e-9)
    out_h = math.ceil(fh - 1e-9)
    # match input parity so both grids share an exact center pixel
    out_w += (out_w - w) % 2
    out_h += (out_h - h) % 2
    return out_w, out_h


def _snap(v: np.ndarray) -> np.ndarray:
    r = np.round(v)
    return np.where(np.abs(v - r) < 1e-9, r, v)


def rotate_about_center(img: GrayImage, angle_degrees: float, fill: int = WHITE) -> GrayImage:
    """Rotate ``img`` about its center by ``angle_degrees``.

    Angles are measured in image coordinates (x right, y down): a feature
    pointing in direction ``phi`` ends up pointing in ``phi + angle``, which
    is clockwise on screen. The canvas grows to hold the whole rotated
    footprint. Samples are bilinear; source positions outside the input take
    ``fill``.
    """
    src = img.pixels.astype(np.float64)
    h, w = src.shape
    out_w, out_h = _rotated_size(w, h, angle_degrees)
    rad = math.radians(angle_degrees)
    c, s = math.cos(rad), math.sin(rad)

    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    u = xs - (out_w - 1) / 2.0
    v = ys - (out_h - 1) / 2.0
    # inverse mapping: rotate output offsets by -angle
    sx = _snap(c * u + s * v + (w - 1) / 2.0)
    sy = _snap(-s * u + c * v + (h - 1) / 2.0)

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0

    padded = np.full((h + 2, w + 2), float(fill))
    padded[1:-1, 1:-1] = src

    def tap(yy, xx):
        inside = (yy >= -1) & (yy <= h) & (xx >= -1) & (xx <= w)
        vals = padded[np.clip(yy + 1, 0, h + 1), np.clip(xx + 1, 0, w + 1)]
        return np.where(inside, vals, float(fill))

    out = (
        tap(y0, x0) * (1 - fx) * (1 - fy)
        + tap(y0, x0 + 1) * fx * (1 - fy)
        + tap(y0 + 1, x0) * (1 - fx) * fy
        + tap(y0 + 1, x0 + 1) * fx * fy
    )
    return GrayImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def center_crop(img: GrayImage, out_w: int, out_h: int) -> GrayImage:
    """Centered window; an odd leftover pixel is dropped from the right/bottom."""
    if out_w <= 0 or out_h <= 0:
        raise ValueError("crop size must be positive")
    if out_w > img.width or out_h > img.height:
        raise ValueError(
            f"requested {out_w}x{out_h} exceeds image {img.width}x{img.height}"
        )
    left = (img.width - out_w) // 2
    top = (img.height - out_h) // 2
    return GrayImage(img.pixels[top : top + out_h, left : left + out_w])
