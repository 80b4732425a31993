"""Adaptive Gaussian highlighting.

Confidence p maps through a sigmoid to the mask spread sigma; below 0.2 no
highlight is drawn at all. The mask lives in per-axis normalized coordinates
(x/W, y/H), so sigma is unitless and the same range works for any page size;
on non-square pages the highlight is elliptical in pixel space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingBackend, SelectionResult, select_from_page
from .errors import InputError
from .pages import GridSpec, NormPoint, PageImage

SIGMA_MAX = 0.8
DRAW_THRESHOLD = 0.2


@dataclass(frozen=True)
class MaskParams:
    """Center, spread, and whether the highlight is drawn at all."""

    center: NormPoint
    sigma: float
    draw: bool

    def __post_init__(self):
        if not (0.0 <= self.sigma <= SIGMA_MAX):
            raise InputError(f"sigma {self.sigma} outside [0, {SIGMA_MAX}]")
        if self.draw != (self.sigma >= DRAW_THRESHOLD):
            raise InputError(f"draw flag inconsistent with sigma {self.sigma}")


@dataclass(frozen=True)
class AttentionMask:
    """Per-pixel weights in [0, 1], row-major, peaking at the mask center."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.height, self.width):
            raise InputError(f"mask values shape {v.shape} != ({self.height}, {self.width})")
        if float(v.min()) < 0.0 or float(v.max()) > 1.0:
            raise InputError("mask values must lie in [0, 1]")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class HighlightStyle:
    """Highlight color and alpha blending factor."""

    color: tuple[int, int, int] = (0, 0, 255)
    alpha: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise InputError(f"alpha {self.alpha} outside [0, 1]")
        if any(not (0 <= c <= 255) for c in self.color):
            raise InputError(f"color {self.color} outside RGB8 range")


@dataclass(frozen=True)
class AttendedImage:
    """Rendered page plus the mask parameters that produced it."""

    image: PageImage
    params: MaskParams | None = None


@dataclass(frozen=True)
class SpotlightConfig:
    grid: GridSpec = GridSpec(6)
    style: HighlightStyle = HighlightStyle()
    clean_mode: str = "rule_based"
    sigma_bounds: tuple[float, float] = (0.0, SIGMA_MAX)


def adaptive_sigma(p: float, bounds: tuple[float, float] = (0.0, SIGMA_MAX)) -> float:
    """Sigmoid mapping of confidence to spread: 0.8 / (1 + exp(-10(p - 0.2)))."""
    if not (0.0 < p <= 1.0):
        raise InputError(f"confidence p must be in (0, 1], got {p}")
    lo, hi = bounds
    if not (0.0 <= lo <= hi <= SIGMA_MAX):
        raise InputError(f"sigma bounds {bounds} outside [0, {SIGMA_MAX}]")
    return min(max(SIGMA_MAX / (1.0 + math.exp(-10.0 * (p - 0.2))), lo), hi)


def should_draw(sigma: float) -> bool:
    """Draw only when sigma reaches the 0.2 floor; below it, skip masking."""
    if sigma < 0.0:
        raise InputError(f"sigma must be nonnegative, got {sigma}")
    return sigma >= DRAW_THRESHOLD


def mask_params(p: float, center: NormPoint, bounds: tuple[float, float] = (0.0, SIGMA_MAX)) -> MaskParams:
    sigma = adaptive_sigma(p, bounds)
    return MaskParams(center=center, sigma=sigma, draw=should_draw(sigma))


def gaussian_mask(width: int, height: int, params: MaskParams) -> AttentionMask:
    """Radial falloff exp(-d^2 / (4 sigma^2)) over normalized pixel coords.

    The 0.5 exponent of the underlying squared-exponential is folded into the
    denominator, giving a more gradual falloff than a plain Gaussian.
    """
    if not params.draw:
        raise InputError("gaussian_mask called with draw=False; caller must skip masking")
    if width < 1 or height < 1:
        raise InputError(f"mask dims must be >= 1, got {width}x{height}")
    xs = np.arange(width, dtype=np.float64) / width - params.center.xn
    ys = np.arange(height, dtype=np.float64) / height - params.center.yn
    d2 = ys[:, None] ** 2 + xs[None, :] ** 2
    values = np.exp(-d2 / (4.0 * params.sigma * params.sigma))
    return AttentionMask(width=width, height=height, values=values)


def blend_highlight(
    page: PageImage,
    mask: AttentionMask,
    style: HighlightStyle,
    params: MaskParams | None = None,
) -> AttendedImage:
    """Blend the highlight color under the mask: I' = (1 - aM) I + aM H.

    Channels round to nearest with ties away from zero so rendered output is
    bit-identical across platforms.
    """
    if (mask.width, mask.height) != (page.width, page.height):
        raise InputError(f"mask {mask.width}x{mask.height} does not match page {page.width}x{page.height}")
    am = (style.alpha * mask.values)[:, :, None]
    h = np.array(style.color, dtype=np.float64)[None, None, :]
    blended = (1.0 - am) * page.pixels.astype(np.float64) + am * h
    out = np.clip(np.floor(blended + 0.5), 0, 255).astype(np.uint8)
    return AttendedImage(image=PageImage(id=page.id, pixels=out), params=params)


def apply_attention(page: PageImage, params: MaskParams, style: HighlightStyle) -> AttendedImage:
    """Render the highlight, or pass the page through untouched when draw=False."""
    if not params.draw:
        return AttendedImage(image=page, params=params)
    mask = gaussian_mask(page.width, page.height, params)
    return blend_highlight(page, mask, style, params=params)


def spotlight(
    page: PageImage,
    query: str,
    embed_backend: EmbeddingBackend,
    config: SpotlightConfig = SpotlightConfig(),
    mllm=None,
) -> tuple[AttendedImage, SelectionResult, MaskParams]:
    """Run the whole question-guided pipeline for one page.

    Composes query cleaning, grid tiling, embedding, patch selection, the
    adaptive sigma, and rendering. With draw=False the original image passes
    through byte-identical.
    """
    selection = select_from_page(page, query, embed_backend, config.grid, clean_mode=config.clean_mode, mllm=mllm)
    params = mask_params(selection.p, selection.center, config.sigma_bounds)
    return apply_attention(page, params, config.style), selection, params
