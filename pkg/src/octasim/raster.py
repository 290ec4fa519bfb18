"""En-face rasterization: project the vessel graph into a grayscale map and mask.

Segments are drawn as capsules (thick lines with round caps) on a
supersampled grid using max-composition, which realizes the depth projection:
where vessels overlap the brighter one wins. The grid is then box-downsampled
to the output resolution. Intensity grows with vessel caliber, capped at 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .growth import VesselForest
from .pathology import MicroaneurysmRecord

MIN_RADIUS_PX = 0.25       # thinner segments are drawn at half-pixel width instead
FULL_BRIGHT_RADIUS = 0.02  # normalized radius mapped to intensity 1.0
BASE_INTENSITY = 0.55      # intensity floor for the thinnest visible capillary


@dataclass(frozen=True)
class RasterConfig:
    resolution: int = 512
    supersample: int = 2
    binarize_threshold: float = 0.1

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.supersample < 1:
            raise ValueError("supersample factor must be >= 1")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError("binarize threshold must lie in (0,1)")


@dataclass
class VesselMap:
    intensity: np.ndarray  # (H, W) float in [0,1]
    mask: np.ndarray       # (H, W) uint8 in {0,1}
    pixel_pitch_mm: float

    @property
    def resolution(self) -> int:
        return self.intensity.shape[0]


def segment_intensity(radius: float) -> float:
    """Monotone radius-to-brightness map, capped at 1."""
    return min(1.0, BASE_INTENSITY + (1.0 - BASE_INTENSITY) * radius / FULL_BRIGHT_RADIUS)


def _draw_capsule(grid: np.ndarray, p0, p1, radius_px: float, value: float) -> None:
    """Max-composite one capsule onto the supersampled grid (y row, x column)."""
    size = grid.shape[0]
    radius_px = max(radius_px, MIN_RADIUS_PX)
    x0 = max(int(np.floor(min(p0[0], p1[0]) - radius_px - 1)), 0)
    x1 = min(int(np.ceil(max(p0[0], p1[0]) + radius_px + 1)), size - 1)
    y0 = max(int(np.floor(min(p0[1], p1[1]) - radius_px - 1)), 0)
    y1 = min(int(np.ceil(max(p0[1], p1[1]) + radius_px + 1)), size - 1)
    if x0 > x1 or y0 > y1:
        return
    xs = np.arange(x0, x1 + 1)[None, :] + 0.5
    ys = np.arange(y0, y1 + 1)[:, None] + 0.5
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    seg_len2 = dx * dx + dy * dy
    if seg_len2 < 1e-18:
        dist2 = (xs - p0[0]) ** 2 + (ys - p0[1]) ** 2
    else:
        t = ((xs - p0[0]) * dx + (ys - p0[1]) * dy) / seg_len2
        t = np.clip(t, 0.0, 1.0)
        dist2 = (xs - (p0[0] + t * dx)) ** 2 + (ys - (p0[1] + t * dy)) ** 2
    inside = dist2 <= radius_px * radius_px
    patch = grid[y0 : y1 + 1, x0 : x1 + 1]
    np.maximum(patch, np.where(inside, value, 0.0), out=patch)


def _draw_disk(grid: np.ndarray, center, radius_px: float, value: float) -> None:
    _draw_capsule(grid, center, center, radius_px, value)


def rasterize(
    forest: VesselForest,
    microaneurysms: list[MicroaneurysmRecord] | None = None,
    config: RasterConfig | None = None,
    mm_per_unit: float = 3.0,
) -> VesselMap:
    """Render the forest (plus MA disks) into an en-face vessel map.

    Every non-root node contributes the capsule from its parent; appendage
    chains carry their own radii, so NV taper and MA cluster blobs come for
    free. Microaneurysm records are additionally stamped as filled disks of
    their recorded radius.
    """
    config = config or RasterConfig()
    size = config.resolution * config.supersample
    grid = np.zeros((size, size))

    parent = forest.parent
    positions = forest.positions
    radii = forest.radii
    for i in range(len(forest)):
        p = parent[i]
        if p < 0:
            continue
        a = positions[p][:2] * size
        b = positions[i][:2] * size
        r_px = radii[i] * size
        _draw_capsule(grid, a, b, r_px, segment_intensity(radii[i]))

    for ma in microaneurysms or []:
        r = ma.radius_mm / mm_per_unit
        center = (ma.center[0] * size, ma.center[1] * size)
        _draw_disk(grid, center, r * size, segment_intensity(r))

    s = config.supersample
    if s > 1:
        res = config.resolution
        intensity = grid.reshape(res, s, res, s).mean(axis=(1, 3))
    else:
        intensity = grid
    intensity = np.clip(intensity, 0.0, 1.0)
    mask = binarize(intensity, config.binarize_threshold)
    return VesselMap(
        intensity=intensity,
        mask=mask,
        pixel_pitch_mm=mm_per_unit / config.resolution,
    )


def binarize(intensity: np.ndarray, threshold: float) -> np.ndarray:
    """1 where intensity >= threshold (inclusive), else 0."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0,1)")
    return (np.asarray(intensity) >= threshold).astype(np.uint8)


def save_grayscale_png(grid: np.ndarray, path) -> None:
    """Write a [0,1] float grid as an 8-bit grayscale PNG."""
    data = np.clip(np.asarray(grid, dtype=float), 0.0, 1.0)
    img = Image.fromarray(np.round(data * 255.0).astype(np.uint8), mode="L")
    img.save(path, format="PNG")


def save_mask_png(mask: np.ndarray, path) -> None:
    """Write a {0,1} mask as an 8-bit PNG with foreground 255."""
    img = Image.fromarray((np.asarray(mask, dtype=np.uint8) * 255), mode="L")
    img.save(path, format="PNG")


def load_grayscale_png(path) -> np.ndarray:
    """Read an 8-bit grayscale PNG back into a [0,1] float grid."""
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=float) / 255.0
