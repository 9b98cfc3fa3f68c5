"""Per-cell gradient orientation field.

The image is tiled into non-overlapping sigma x sigma cells. For every cell
the absolute central differences of its interior pixels (the cell minus its
1-pixel border) are summed per axis, giving a non-negative gradient vector
that is stored normalized to unit length. Absolute sums lose the quadrant of
the gradient, so each cell also keeps a sign telling whether the gradient,
once flipped to point rightward, faces down (+1) or up (-1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fpliveness.image import GrayImage

DEFAULT_SIGMA = 12


@dataclass(frozen=True)
class GridParams:
    sigma: int = DEFAULT_SIGMA

    def __post_init__(self):
        if int(self.sigma) != self.sigma or self.sigma < 4:
            raise ValueError(f"sigma must be an integer >= 4, got {self.sigma}")


@dataclass(frozen=True, eq=False)
class OrientationField:
    """Cell matrices indexed ``[cell_row][cell_col]``."""

    sigma: int
    unit_mag_x: np.ndarray
    unit_mag_y: np.ndarray
    sign_y: np.ndarray
    magnitude: np.ndarray
    dx_sum: np.ndarray
    dy_sum: np.ndarray
    dy_signed: np.ndarray

    @property
    def cells_y(self) -> int:
        return self.magnitude.shape[0]

    @property
    def cells_x(self) -> int:
        return self.magnitude.shape[1]

    def __eq__(self, other):
        if not isinstance(other, OrientationField):
            return NotImplemented
        names = ("unit_mag_x", "unit_mag_y", "sign_y", "magnitude", "dy_signed")
        return self.sigma == other.sigma and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in names
        )


def _pix(img: GrayImage, x: int, y: int) -> int:
    return int(img.pixels[y, x])


def central_diff_x(img: GrayImage, x: int, y: int) -> int:
    if not (1 <= x <= img.width - 2 and 0 <= y <= img.height - 1):
        raise IndexError(f"no horizontal neighbours for pixel ({x}, {y})")
    return _pix(img, x + 1, y) - _pix(img, x - 1, y)


def central_diff_y(img: GrayImage, x: int, y: int) -> int:
    if not (0 <= x <= img.width - 1 and 1 <= y <= img.height - 2):
        raise IndexError(f"no vertical neighbours for pixel ({x}, {y})")
    return _pix(img, x, y + 1) - _pix(img, x, y - 1)


def cell_gradient_sums(img: GrayImage, cell_origin, params: GridParams = GridParams()):
    """Return ``(dx_cell, dy_cell, dy_signed)`` for the cell whose top-left pixel is ``cell_origin``.

    ``cell_origin`` is ``(row, col)`` in pixels. Only the cell's interior
    pixels are visited, so their neighbours never leave the cell.
    """
    row, col = cell_origin
    s = params.sigma
    if row < 0 or col < 0 or row + s > img.height or col + s > img.width:
        raise IndexError(f"cell at {cell_origin} exceeds image {img.width}x{img.height}")
    dx_cell = dy_cell = dy_signed = 0
    for y in range(row + 1, row + s - 1):
        for x in range(col + 1, col + s - 1):
            gx = central_diff_x(img, x, y)
            gy = central_diff_y(img, x, y)
            dx_cell += abs(gx)
            dy_cell += abs(gy)
            dy_signed += gy if gx >= 0 else -gy
    return dx_cell, dy_cell, dy_signed


def cell_magnitude(dx_cell: float, dy_cell: float) -> float:
    if dx_cell < 0 or dy_cell < 0:
        raise ValueError("cell sums must be non-negative")
    return float(np.sqrt(float(dy_cell) ** 2 + float(dx_cell) ** 2))


def _difference_maps(pixels: np.ndarray):
    p = pixels.astype(np.int64)
    gx = np.zeros_like(p)
    gy = np.zeros_like(p)
    gx[:, 1:-1] = p[:, 2:] - p[:, :-2]
    gy[1:-1, :] = p[2:, :] - p[:-2, :]
    return gx, gy


def build_orientation_field(img: GrayImage, params: GridParams = GridParams()) -> OrientationField:
    s = params.sigma
    cy, cx = img.height // s, img.width // s
    if cy < 1 or cx < 1:
        raise ValueError(f"image {img.width}x{img.height} too small for a {s}px cell")
    gx, gy = _difference_maps(img.pixels[: cy * s, : cx * s])
    signed = np.where(gx >= 0, gy, -gy)

    def cell_sum(a):
        return a.reshape(cy, s, cx, s)[:, 1:-1, :, 1:-1].sum(axis=(1, 3))

    dx_sum = cell_sum(np.abs(gx))
    dy_sum = cell_sum(np.abs(gy))
    dy_signed = cell_sum(signed)
    magnitude = np.sqrt(dy_sum.astype(np.float64) ** 2 + dx_sum.astype(np.float64) ** 2)
    safe = np.where(magnitude > 0, magnitude, 1.0)
    ux = np.where(magnitude > 0, dx_sum / safe, 0.0)
    uy = np.where(magnitude > 0, dy_sum / safe, 0.0)
    sign = np.where(dy_signed >= 0, 1, -1).astype(np.int8)
    return OrientationField(
        sigma=s,
        unit_mag_x=ux,
        unit_mag_y=uy,
        sign_y=sign,
        magnitude=magnitude,
        dx_sum=dx_sum,
        dy_sum=dy_sum,
        dy_signed=dy_signed,
    )


def block_angle(field: OrientationField, row: int, col: int, rows: int, cols: int) -> float:
    """Signed dominant gradient angle (degrees, [-90, 90]) of a block of cells.

    ``atan(sum(uy) / sum(ux))`` over the block, signed by the facing-weighted
    vertical sum (ties count as +). A block without gradient yields 0.
    """
    if row < 0 or col < 0 or row + rows > field.cells_y or col + cols > field.cells_x:
        raise IndexError(f"cell block ({row}, {col}, {rows}x{cols}) falls outside the field")
    ux = field.unit_mag_x[row : row + rows, col : col + cols]
    uy = field.unit_mag_y[row : row + rows, col : col + cols]
    sy = field.sign_y[row : row + rows, col : col + cols]
    dx, dy = float(ux.sum()), float(uy.sum())
    if dx == 0.0 and dy == 0.0:
        return 0.0
    angle = 90.0 if dx == 0.0 else math.degrees(math.atan(dy / dx))
    return angle if float((sy * uy).sum()) >= 0.0 else -angle


def dump_field_text(field: OrientationField) -> str:
    """Tab-separated ``ux,uy,sign,mag`` quadruples, one line per cell row."""
    lines = []
    for r in range(field.cells_y):
        cells = (
            f"{field.unit_mag_x[r, c]:.6f},{field.unit_mag_y[r, c]:.6f},"
            f"{int(field.sign_y[r, c])},{field.magnitude[r, c]:.6f}"
            for c in range(field.cells_x)
        )
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
