"""Dense, overlapping, orientation-normalized patch extraction.

A patch slot is a square of ``m + 2p`` grid cells: ``m`` central cells per
side that determine the orientation, surrounded by ``p`` padding cells that
only supply pixels for the rotation. Slots advance by one cell (``sigma``
pixels) in both directions. Slot ``(r, c)`` covers pixel rows
``r*sigma .. (r+m+2p)*sigma - 1`` and its central cells are field cells
``r+p .. r+p+m-1`` (columns likewise).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from fpliveness.image import WHITE, GrayImage, center_crop, load_image, mean_intensity, rotate_about_center, save_png
from fpliveness.orientation import GridParams, OrientationField, block_angle, build_orientation_field

MANIFEST_NAME = "manifest.csv"
MANIFEST_FIELDS = ["filename", "source_id", "cell_row", "cell_col", "theta_degrees", "label"]


class Label(str, enum.Enum):
    LIVE = "live"
    SPOOF = "spoof"

    @property
    def index(self) -> int:
        """Class index used by the classifier (live=0, spoof=1)."""
        return 0 if self is Label.LIVE else 1

    @classmethod
    def from_index(cls, idx: int) -> "Label":
        return cls.LIVE if idx == 0 else cls.SPOOF


@dataclass(frozen=True)
class PatchParams:
    sigma: int = 12
    patch_multiplier: int = 10
    padding_multiplier: int = 2
    noise_factor: float = 0.1

    def __post_init__(self):
        GridParams(self.sigma)
        if self.patch_multiplier < 1:
            raise ValueError("patch_multiplier must be >= 1")
        if self.padding_multiplier < 0:
            raise ValueError("padding_multiplier must be >= 0")
        if not 0.0 <= self.noise_factor <= 1.0:
            raise ValueError("noise_factor must lie in [0, 1]")
        if self.final_side <= 0:
            raise ValueError(f"parameters leave no pixels after cropping: {self}")

    @property
    def cells_per_side(self) -> int:
        return self.patch_multiplier + 2 * self.padding_multiplier

    @property
    def padded_side(self) -> int:
        return self.sigma * self.cells_per_side

    @property
    def crop(self) -> int:
        return crop_amount(self.sigma, self.patch_multiplier)

    @property
    def final_side(self) -> int:
        return self.padded_side - 2 * self.crop

    @property
    def grid(self) -> GridParams:
        return GridParams(self.sigma)


@dataclass(frozen=True)
class Patch:
    pixels: GrayImage
    source_id: str
    grid_origin: tuple
    theta_degrees: float
    label: Optional[Label] = None

    @property
    def filename(self) -> str:
        r, c = self.grid_origin
        return f"{self.source_id}_r{r}_c{c}.png"


@dataclass(frozen=True)
class Rejected:
    reason: str
    grid_origin: tuple = dc_field(default=(0, 0))


def crop_amount(sigma: int, patch_multiplier: int) -> int:
    """Pixels removed from each side so a 45-degree rotation leaves no fill.

    ``ceil(sqrt((sigma*m)**2 / 8))`` evaluated in integers, so values that
    are exact squares are never nudged up by rounding.
    """
    if sigma < 1 or patch_multiplier < 1:
        raise ValueError("sigma and patch_multiplier must be >= 1")
    n = (sigma * patch_multiplier) ** 2
    k = math.isqrt(-(-n // 8))
    # smallest k with 8*k*k >= n
    return k if 8 * k * k >= n else k + 1


def slot_count(img: GrayImage, params: PatchParams) -> tuple[int, int]:
    k = params.cells_per_side
    rows = img.height // params.sigma - k + 1
    cols = img.width // params.sigma - k + 1
    return max(rows, 0), max(cols, 0)


def patch_angle(field: OrientationField, grid_origin, params: PatchParams) -> float:
    """Signed patch angle in degrees within [-90, 90].

    Sums the unit vectors of the central cells only; the sign comes from the
    unit-y components weighted by each cell's facing sign (ties count as +).
    """
    r, c = grid_origin
    m, p = params.patch_multiplier, params.padding_multiplier
    if r < 0 or c < 0:
        raise IndexError(f"central cells of slot {grid_origin} fall outside the field")
    return block_angle(field, r + p, c + p, m, m)


def whitespace_filter(patch_mean: float, image_mean: float, t: float) -> bool:
    """True (keep) when the patch is darker than the image mean by more than ``t``."""
    return patch_mean < image_mean * (1.0 - t)


def padded_block(img: GrayImage, grid_origin, params: PatchParams) -> Optional[GrayImage]:
    r, c = grid_origin
    s, side = params.sigma, params.padded_side
    top, left = r * s, c * s
    if r < 0 or c < 0 or top + side > img.height or left + side > img.width:
        return None
    return GrayImage(img.pixels[top : top + side, left : left + side])


def normalize_block(block: GrayImage, theta_degrees: float, params: PatchParams, fill: int = WHITE) -> GrayImage:
    """Rotate a padded block by ``-theta`` and crop it to the final patch side."""
    rotated = rotate_about_center(block, -theta_degrees, fill=fill)
    return center_crop(rotated, params.final_side, params.final_side)


def extract_patch(
    img: GrayImage,
    field: OrientationField,
    grid_origin,
    params: PatchParams,
    *,
    source_id: str = "",
    label: Optional[Label] = None,
    image_mean: Optional[float] = None,
    fill: int = WHITE,
) -> Union[Patch, Rejected]:
    grid_origin = tuple(int(v) for v in grid_origin)
    block = padded_block(img, grid_origin, params)
    if block is None:
        return Rejected("out_of_bounds", grid_origin)
    theta = patch_angle(field, grid_origin, params)
    pixels = normalize_block(block, theta, params, fill=fill)
    if image_mean is None:
        image_mean = mean_intensity(img)
    if not whitespace_filter(mean_intensity(pixels), image_mean, params.noise_factor):
        return Rejected("whitespace", grid_origin)
    return Patch(pixels, source_id, grid_origin, theta, label)


def dense_sample(
    img: GrayImage,
    params: PatchParams = PatchParams(),
    *,
    source_id: str = "",
    label: Optional[Label] = None,
    fill: int = WHITE,
) -> list[Patch]:
    """Every kept patch of ``img``, slots visited in row-major order."""
    rows, cols = slot_count(img, params)
    if rows == 0 or cols == 0:
        return []
    field = build_orientation_field(img, params.grid)
    image_mean = mean_intensity(img)
    kept = []
    for r in range(rows):
        for c in range(cols):
            out = extract_patch(
                img, field, (r, c), params,
                source_id=source_id, label=label, image_mean=image_mean, fill=fill,
            )
            if isinstance(out, Patch):
                kept.append(out)
    return kept


def _manifest_row(p: Patch) -> dict:
    return {
        "filename": p.filename,
        "source_id": p.source_id,
        "cell_row": p.grid_origin[0],
        "cell_col": p.grid_origin[1],
        "theta_degrees": f"{p.theta_degrees:.6f}",
        "label": p.label.value if p.label is not None else "",
    }


def persist_patches(patches, out_dir, *, append: bool = False) -> int:
    """Write patches as PNG files plus ``manifest.csv`` rows; returns the count.

    Refuses to overwrite: a repeated name within ``patches`` or an existing
    file of the same name raises ``FileExistsError`` before anything is written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = [p.filename for p in patches]
    seen = set()
    for name in names:
        if name in seen:
            raise FileExistsError(f"duplicate patch name {name}")
        seen.add(name)
        if (out_dir / name).exists():
            raise FileExistsError(f"refusing to overwrite {out_dir / name}")

    manifest = out_dir / MANIFEST_NAME
    write_header = not (append and manifest.exists())
    with open(manifest, "a" if append else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        if write_header:
            writer.writeheader()
        for p in patches:
            save_png(p.pixels, out_dir / p.filename)
            writer.writerow(_manifest_row(p))
    return len(patches)


def read_manifest(out_dir) -> list[dict]:
    with open(Path(out_dir) / MANIFEST_NAME, newline="") as fh:
        return list(csv.DictReader(fh))


def load_patches(out_dir) -> list[Patch]:
    out_dir = Path(out_dir)
    patches = []
    for row in read_manifest(out_dir):
        label = Label(row["label"]) if row["label"] else None
        patches.append(
            Patch(
                pixels=load_image(out_dir / row["filename"]),
                source_id=row["source_id"],
                grid_origin=(int(row["cell_row"]), int(row["cell_col"])),
                theta_degrees=float(row["theta_degrees"]),
                label=label,
            )
        )
    return patches
