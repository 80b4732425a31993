"""Occlusion-sensitivity analysis.

Slide a fill-colored window over the page, re-ask the model each time, and
record how much the response probability drops: S = P_orig - P_occ. Remote
APIs rarely expose logits, so a backend either implements response_logits
(softmax probability mode) or falls back to 0/1 answer consistency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .answering import MllmRequest, build_prompt, normalize_answer
from .attention import HighlightStyle
from .embedding import encode_image_b64
from .errors import ConfigError, InputError
from .pages import PageImage


@dataclass(frozen=True)
class OcclusionConfig:
    window: int
    stride: int
    fill: tuple[int, int, int] = (128, 128, 128)
    smooth_sigma: float = 1.0

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise InputError(f"window and stride must be >= 1, got {self.window}/{self.stride}")
        if any(not (0 <= c <= 255) for c in self.fill):
            raise InputError(f"fill color {self.fill} outside RGB8 range")
        if self.smooth_sigma < 0:
            raise InputError(f"smooth_sigma must be >= 0, got {self.smooth_sigma}")


@dataclass(frozen=True)
class SensitivityGrid:
    """S(x, y) per window cell plus the pixel origin of each row/column."""

    values: np.ndarray
    origins_x: tuple[int, ...]
    origins_y: tuple[int, ...]
    window: int
    stride: int
    p_orig: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape != (len(self.origins_y), len(self.origins_x)):
            raise InputError(f"grid shape {v.shape} does not match origins")
        if v.size and (float(v.min()) < -1.0 - 1e-9 or float(v.max()) > 1.0 + 1e-9):
            raise InputError("sensitivity values must lie in [-1, 1]")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "stride": self.stride,
            "p_orig": self.p_orig,
            "origins_x": list(self.origins_x),
            "origins_y": list(self.origins_y),
            "values": [[float(x) for x in row] for row in self.values],
        }

    def argmax_cell(self) -> tuple[int, int]:
        """(row, col) of the most sensitive cell, first-wins on ties."""
        flat = int(np.argmax(self.values))
        return flat // self.values.shape[1], flat % self.values.shape[1]


class LogitBackend(Protocol):
    def response_logits(self, query: str, pixels: np.ndarray) -> dict[str, float]: ...


class ConstantLogitsBackend:
    """Pixel-blind logits; its sensitivity map is identically zero."""

    def __init__(self, logits: dict[str, float]):
        if not logits:
            raise InputError("logits map is empty")
        self._logits = dict(logits)

    def response_logits(self, query: str, pixels: np.ndarray) -> dict[str, float]:
        return dict(self._logits)


def _softmax_at(logits: dict[str, float], reference: str) -> float:
    ref_key = " ".join(normalize_answer(reference))
    zmax = max(logits.values())
    denom = sum(math.exp(z - zmax) for z in logits.values())
    for key, z in logits.items():
        if " ".join(normalize_answer(key)) == ref_key:
            return math.exp(z - zmax) / denom
    return 0.0


def response_probability(backend, query: str, image: PageImage, reference_answer: str, allow_fallback: bool = True) -> float:
    """Probability the model assigns to the reference answer for this image.

    Logit-capable backends get a true softmax probability; generate-only
    backends fall back to 0/1 answer consistency when allowed.
    """
    if hasattr(backend, "response_logits"):
        return _softmax_at(backend.response_logits(query, image.pixels), reference_answer)
    if allow_fallback and hasattr(backend, "generate"):
        raw, _ = backend.generate(
            MllmRequest(prompt=build_prompt(query, "baseline"), images=(encode_image_b64(image.pixels),))
        )
        return 1.0 if normalize_answer(raw) == normalize_answer(reference_answer) else 0.0
    raise ConfigError("backend supports neither response_logits nor generate-based fallback")


def _derive_reference(backend, query: str, image: PageImage) -> str:
    if hasattr(backend, "response_logits"):
        logits = backend.response_logits(query, image.pixels)
        return max(logits, key=lambda key: (logits[key], key))
    if hasattr(backend, "generate"):
        raw, _ = backend.generate(
            MllmRequest(prompt=build_prompt(query, "baseline"), images=(encode_image_b64(image.pixels),))
        )
        return raw
    raise ConfigError("backend supports neither response_logits nor generate-based fallback")


def occlusion_sweep(
    image: PageImage,
    query: str,
    backend,
    cfg: OcclusionConfig,
    reference: str | None = None,
) -> SensitivityGrid:
    """Full sweep: one probability per window position, stepped by the stride.

    Windows at the right/bottom edge are clipped to the image rather than
    padded, so every probability is computed on a valid page. Any backend
    failure aborts the sweep; partial grids are never returned.
    """
    if cfg.window > min(image.width, image.height):
        raise InputError(f"window {cfg.window} exceeds page dims {image.width}x{image.height}")
    if reference is None:
        reference = _derive_reference(backend, query, image)
    p_orig = response_probability(backend, query, image, reference)
    origins_x = tuple(range(0, image.width, cfg.stride))
    origins_y = tuple(range(0, image.height, cfg.stride))
    fill = np.array(cfg.fill, dtype=np.uint8)
    values = np.zeros((len(origins_y), len(origins_x)), dtype=np.float64)
    for row, y0 in enumerate(origins_y):
        for col, x0 in enumerate(origins_x):
            occluded = image.pixels.copy()
            occluded[y0 : min(y0 + cfg.window, image.height), x0 : min(x0 + cfg.window, image.width)] = fill
            p_occ = response_probability(backend, query, PageImage(id=f"{image.id}#occ", pixels=occluded), reference)
            values[row, col] = p_orig - p_occ
    return SensitivityGrid(
        values=values, origins_x=origins_x, origins_y=origins_y, window=cfg.window, stride=cfg.stride, p_orig=p_orig
    )


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    ks = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(ks**2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def _convolve_reflect(grid: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = (len(kernel) - 1) // 2
    if radius == 0:
        return grid.copy()
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(grid, pad, mode="symmetric")
    out = np.zeros_like(grid)
    for offset, weight in enumerate(kernel):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(offset, offset + grid.shape[axis])
        out += weight * padded[tuple(sl)]
    return out


def smooth_heatmap(
    grid: SensitivityGrid,
    smooth_sigma: float,
    page: PageImage | None = None,
    style: HighlightStyle = HighlightStyle(color=(255, 0, 0), alpha=0.5),
) -> tuple[SensitivityGrid, PageImage | None]:
    """Gaussian-smooth the grid (reflective boundaries, radius ceil(3 sigma))
    and optionally alpha-composite a transparent-to-red overlay onto the page.

    Smoothing is linear and mass-conserving; sigma below 1e-6 is the identity.
    """
    if grid.values.size == 0:
        raise InputError("cannot smooth an empty grid")
    if smooth_sigma < 1e-6:
        smoothed = grid
    else:
        kernel = _gaussian_kernel(smooth_sigma)
        values = _convolve_reflect(grid.values, kernel, axis=0)
        values = _convolve_reflect(values, kernel, axis=1)
        smoothed = SensitivityGrid(
            values=np.clip(values, -1.0, 1.0),
            origins_x=grid.origins_x,
            origins_y=grid.origins_y,
            window=grid.window,
            stride=grid.stride,
            p_orig=grid.p_orig,
        )
    if page is None:
        return smoothed, None
    return smoothed, _render_overlay(smoothed, page, style)


def _render_overlay(grid: SensitivityGrid, page: PageImage, style: HighlightStyle) -> PageImage:
    # Positive sensitivity only; each cell paints its stride block.
    pos = np.clip(grid.values, 0.0, None)
    peak = float(pos.max())
    heat_cells = pos / peak if peak > 0 else pos
    heat = np.zeros((page.height, page.width), dtype=np.float64)
    for row, y0 in enumerate(grid.origins_y):
        for col, x0 in enumerate(grid.origins_x):
            heat[y0 : min(y0 + grid.stride, page.height), x0 : min(x0 + grid.stride, page.width)] = heat_cells[row, col]
    am = (style.alpha * heat)[:, :, None]
    color = np.array(style.color, dtype=np.float64)[None, None, :]
    blended = (1.0 - am) * page.pixels.astype(np.float64) + am * color
    out = np.clip(np.floor(blended + 0.5), 0, 255).astype(np.uint8)
    return PageImage(id=f"{page.id}#heatmap", pixels=out)
