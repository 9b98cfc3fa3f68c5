"""Colour overlay marking each scored patch: green for live, red for spoof."""

from __future__ import annotations

import numpy as np
from PIL import Image

from fpliveness.image import GrayImage
from fpliveness.metrics import FingerprintResult
from fpliveness.patches import Label, PatchParams

GREEN = (0, 200, 0)
RED = (220, 0, 0)


def marker_box(grid_origin, params: PatchParams) -> tuple[int, int, int]:
    """``(top, left, side)`` of the sigma-sized square centred on the slot's central cells."""
    r, c = grid_origin
    s, m, p = params.sigma, params.patch_multiplier, params.padding_multiplier
    offset = ((m - 1) * s) // 2
    return (r + p) * s + offset, (c + p) * s + offset, s


def render_overlay(img: GrayImage, result: FingerprintResult, params: PatchParams, alpha: float = 0.45) -> np.ndarray:
    """Return an ``(h, w, 3)`` uint8 image with one translucent square per patch."""
    base = np.repeat(img.pixels[..., None], 3, axis=2).astype(np.float64)
    out = base.copy()
    for origin, _score, decision in result.per_patch:
        top, left, side = marker_box(origin, params)
        if top < 0 or left < 0 or top + side > img.height or left + side > img.width:
            raise ValueError(f"patch at {origin} does not fit a {img.width}x{img.height} image")
        color = np.array(GREEN if decision is Label.LIVE else RED, dtype=np.float64)
        region = base[top : top + side, left : left + side]
        out[top : top + side, left : left + side] = (1 - alpha) * region + alpha * color
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def save_overlay(rgb: np.ndarray, path) -> None:
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
