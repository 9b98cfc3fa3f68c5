"""Synthetic ridge imagery for tests and smoke runs.

Stripes follow ``128 + contrast/2 * sin(2*pi*(x*cos(a) + y*sin(a))/period)``
in image coordinates (x right, y down), so the intensity gradient points
along ``a`` and the stripes themselves run perpendicular to it.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from fpliveness.image import GrayImage, save_png
from fpliveness.patches import Label


def _check(period_px, contrast):
    if period_px < 4:
        raise ValueError("period_px must be >= 4")
    if not 0 < contrast <= 255:
        raise ValueError("contrast must lie in (0, 255]")


def ridge_field(width, height, angle_degrees, period_px, contrast, *, phase=0.0, mean=128.0):
    """Noise-free float intensities (not clipped or quantized)."""
    _check(period_px, contrast)
    a = math.radians(angle_degrees)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    arg = 2 * math.pi * (xs * math.cos(a) + ys * math.sin(a)) / period_px + phase
    return mean + contrast / 2.0 * np.sin(arg)


def generate_synthetic_ridge(
    width: int,
    height: int,
    angle_degrees: float,
    period_px: float,
    contrast: float,
    seed: int = 0,
    *,
    noise_std: float = 1.0,
    phase: float = 0.0,
    mean: float = 128.0,
    ramp: float = 0.0,
) -> GrayImage:
    """Sinusoidal stripes plus seeded Gaussian noise.

    ``ramp`` adds a slow left-to-right intensity trend (levels per pixel),
    centred on the image, which makes the darker half pass the whitespace
    filter while contributing almost nothing to the gradients.
    """
    if width < 1 or height < 1:
        raise ValueError("width and height must be positive")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    img = ridge_field(width, height, angle_degrees, period_px, contrast, phase=phase, mean=mean)
    if ramp:
        img = img + ramp * (np.arange(width, dtype=np.float64) - (width - 1) / 2.0)[None, :]
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        img = img + rng.normal(0.0, noise_std, size=img.shape)
    return GrayImage(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def synthetic_fingerprint(width, height, label: Label, seed: int) -> GrayImage:
    """A stripe texture inside a soft-edged ellipse on a white background.

    Live and spoof prints differ in ridge period, contrast and noise, none of
    which rotation normalization removes.
    """
    rng = np.random.default_rng(seed)
    if label is Label.LIVE:
        period = rng.uniform(5.0, 6.5)
        contrast = rng.uniform(150, 190)
        noise = 4.0
    else:
        period = rng.uniform(9.5, 12.0)
        contrast = rng.uniform(100, 140)
        noise = 9.0
    angle = rng.uniform(-90, 90)
    tex = ridge_field(width, height, angle, period, contrast, phase=rng.uniform(0, 2 * math.pi), mean=110.0)
    tex = tex + rng.normal(0.0, noise, size=tex.shape)

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    rx, ry = 0.42 * width, 0.46 * height
    d = np.sqrt(((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2)
    alpha = np.clip((1.08 - d) / 0.16, 0.0, 1.0)
    img = alpha * tex + (1 - alpha) * 255.0
    return GrayImage(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def stripe_patches(n_per_class: int, side: int, seed: int, *, noise_std: float = 8.0):
    """Toy separable set: horizontal stripes (live) vs vertical stripes (spoof).

    Returns ``(x, y)`` with ``x`` uint8 of shape ``(2n, side, side)`` and
    ``y`` class indices (0 live, 1 spoof), classes interleaved.
    """
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for i in range(2 * n_per_class):
        cls = i % 2
        # horizontal stripes vary along y: gradient angle 90
        angle = 90.0 if cls == 0 else 0.0
        angle += rng.uniform(-10, 10)
        period = rng.uniform(4.0, 9.0)
        img = ridge_field(side, side, angle, period, rng.uniform(80, 200), phase=rng.uniform(0, 2 * math.pi))
        img = img + rng.normal(0.0, noise_std, size=img.shape)
        xs.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
        ys.append(cls)
    return np.stack(xs), np.asarray(ys, dtype=np.int64)


def write_synthetic_dataset(root, *, n_train=6, n_test=4, size=96, seed=0) -> int:
    """Populate ``root/{train,test}/{live,spoof}/`` with PNG fingerprints."""
    root = Path(root)
    count = 0
    for split, n in (("train", n_train), ("test", n_test)):
        for label in (Label.LIVE, Label.SPOOF):
            d = root / split / label.value
            d.mkdir(parents=True, exist_ok=True)
            for i in range(n):
                img = synthetic_fingerprint(size, size, label, _seed_for(seed, split, label, i))
                save_png(img, d / f"{label.value}_{i:03d}.png")
                count += 1
    return count


def _seed_for(seed, split, label, i) -> int:
    return seed * 100_003 + (0 if split == "train" else 50_000) + (0 if label is Label.LIVE else 25_000) + i
