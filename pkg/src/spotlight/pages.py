"""Page rasters and grid geometry.

A page is an RGB8 raster with a stable id. Grids tile it into n x n patches
with floor boundaries (remainder pixels go to the last row/column), while
patch centers come from the continuous closed form (2j-1)/(2n), (2i-1)/(2n)
in page-normalized coordinates. Rows and columns are 1-based, row-major.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError

MAX_GRID_SIDE = 64


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.uint8)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PageImage:
    """Decoded page raster: id, dimensions, and a read-only (H, W, 3) buffer."""

    id: str
    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise InputError(f"page {self.id!r}: pixels must be (H, W, 3) uint8, got {px.shape} {px.dtype}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InputError(f"page {self.id!r}: width and height must be >= 1")
        object.__setattr__(self, "pixels", _readonly(px))

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @classmethod
    def load(cls, path: str | Path, page_id: str | None = None) -> "PageImage":
        """Decode a PNG or JPEG file; alpha is composited over white."""
        p = Path(path)
        if not p.is_file():
            raise InputError(f"image file not found: {p}")
        with Image.open(p) as img:
            return cls(page_id if page_id is not None else str(p), _decode_rgb(img))

    @classmethod
    def from_bytes(cls, data: bytes, page_id: str) -> "PageImage":
        with Image.open(io.BytesIO(data)) as img:
            return cls(page_id, _decode_rgb(img))

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()

    def save_png(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_png_bytes())

    def content_hash_material(self) -> bytes:
        return self.pixels.tobytes()


def _decode_rgb(img: Image.Image) -> np.ndarray:
    if img.mode in ("RGBA", "LA", "PA") or (img.mode == "P" and "transparency" in img.info):
        rgba = img.convert("RGBA")
        background = Image.new("RGBA", rgba.size, (255, 255, 255, 255))
        img = Image.alpha_composite(background, rgba).convert("RGB")
    else:
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.uint8)


@dataclass(frozen=True)
class GridSpec:
    """Side count of the square patch grid."""

    n: int = 6

    def __post_init__(self):
        if not (1 <= self.n <= MAX_GRID_SIDE):
            raise InputError(f"grid side must be in [1, {MAX_GRID_SIDE}], got {self.n}")


@dataclass(frozen=True)
class PatchRect:
    """One grid cell: 1-based (i, j) indices and half-open pixel bounds."""

    i: int
    j: int
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise InputError(f"patch ({self.i},{self.j}) has empty extent")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


@dataclass(frozen=True)
class NormPoint:
    """A point in page-normalized coordinates (x/W, y/H), both in [0, 1]."""

    xn: float
    yn: float

    def __post_init__(self):
        if not (0.0 <= self.xn <= 1.0 and 0.0 <= self.yn <= 1.0):
            raise InputError(f"normalized point out of range: ({self.xn}, {self.yn})")


@dataclass(frozen=True)
class Patch:
    """A grid cell together with its cropped pixels."""

    rect: PatchRect
    pixels: np.ndarray


def patch_center(i: int, j: int, spec: GridSpec) -> NormPoint:
    """Normalized center of cell (i, j): ((2j-1)/(2n), (2i-1)/(2n))."""
    n = spec.n
    if not (1 <= i <= n and 1 <= j <= n):
        raise InputError(f"patch index ({i},{j}) out of range for n={n}")
    return NormPoint((2 * j - 1) / (2 * n), (2 * i - 1) / (2 * n))


def grid_slice(page: PageImage, spec: GridSpec) -> list[Patch]:
    """Tile a page into n*n patches, row-major.

    Boundaries sit at floor(k*W/n) and floor(k*H/n), so the tiling is exact:
    every pixel belongs to exactly one patch and remainders land in the
    later rows/columns.
    """
    n = spec.n
    if n > min(page.width, page.height):
        raise InputError(f"grid n={n} exceeds page dims {page.width}x{page.height}")
    xs = [(k * page.width) // n for k in range(n + 1)]
    ys = [(k * page.height) // n for k in range(n + 1)]
    patches: list[Patch] = []
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            rect = PatchRect(i=i, j=j, x0=xs[j - 1], y0=ys[i - 1], x1=xs[j], y1=ys[i])
            crop = page.pixels[rect.y0 : rect.y1, rect.x0 : rect.x1]
            patches.append(Patch(rect=rect, pixels=crop))
    return patches
