"""Capillary dropout: irregular non-perfusion lesions, pruning, and remodeling.

A lesion is an irregular ellipse (angular harmonics on top of an ellipse)
carrying a smooth in-region score that decays from 1 at the center to 0 at
the boundary, modulated by a low-frequency sinusoidal noise field. The
combined dropout field c(x) is the pointwise maximum over lesions and always
lies in [0, 1]. Terminal capillaries inside high-c areas are pruned by
weighted sampling without replacement; survivors inside lesions are
elongated and dilated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..growth import GROWN, VesselForest

ALLOWED_HARMONIC_MODES = (2, 3, 5)


class LesionShapeError(ValueError):
    """Harmonic amplitudes large enough to collapse the lesion boundary."""


@dataclass(frozen=True)
class DropoutRegion:
    """One non-perfusion lesion in the en-face plane (normalized coordinates)."""

    center: tuple[float, float]
    base_radius: float
    axis_a: float = 1.0
    axis_b: float = 1.0
    harmonics: tuple[tuple[int, float, float], ...] = ()  # (mode, amplitude, phase)
    shape_exponent: float = 2.0
    noise_gain: float = 0.0
    strength: float = 0.95
    noise_components: tuple[tuple[float, float, float, float], ...] = ()  # (fx, fy, phase, weight)

    def __post_init__(self):
        if self.base_radius <= 0 or self.axis_a <= 0 or self.axis_b <= 0:
            raise ValueError("lesion radius and axis ratios must be positive")
        if self.shape_exponent <= 0:
            raise ValueError("shape exponent must be positive")
        if self.noise_gain < 0:
            raise ValueError("noise gain must be non-negative")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError("lesion strength must lie in [0,1]")
        amp_sum = sum(abs(a) for _, a, _ in self.harmonics)
        if amp_sum >= 1.0:
            raise LesionShapeError("total harmonic amplitude must stay below 1")

    # -- boundary geometry ---------------------------------------------------

    def ellipse_radius(self, theta) -> np.ndarray | float:
        """Polar radius of the underlying ellipse with semi-axes (r*a, r*b)."""
        theta = np.asarray(theta, dtype=float)
        denom = np.sqrt((np.cos(theta) / self.axis_a) ** 2 + (np.sin(theta) / self.axis_b) ** 2)
        out = self.base_radius / denom
        return out if out.ndim else float(out)

    def modulated_radius(self, theta) -> np.ndarray | float:
        """Ellipse radius perturbed by the angular harmonics (irregular boundary)."""
        theta = np.asarray(theta, dtype=float)
        bracket = np.ones_like(theta)
        for mode, amp, phase in self.harmonics:
            bracket = bracket + amp * np.cos(mode * theta + phase)
        if np.any(bracket <= 0.0):
            raise LesionShapeError("harmonic modulation collapsed the boundary")
        out = self.ellipse_radius(theta) * bracket
        return out if out.ndim else float(out)

    # -- scalar fields ---------------------------------------------------------

    def inside_score(self, xy) -> np.ndarray | float:
        """[1 - rho/R(theta)]_+ ^ alpha: 1 at the center, 0 at/outside the boundary."""
        xy = np.asarray(xy, dtype=float)
        scalar = xy.ndim == 1
        pts = xy.reshape(-1, 2)
        dx = pts[:, 0] - self.center[0]
        dy = pts[:, 1] - self.center[1]
        rho = np.hypot(dx, dy)
        theta = np.arctan2(dy, dx)
        rim = np.asarray(self.modulated_radius(theta), dtype=float)
        u = np.clip(1.0 - rho / rim, 0.0, None) ** self.shape_exponent
        return float(u[0]) if scalar else u

    def noise_field(self, xy) -> np.ndarray | float:
        """Deterministic sinusoidal noise affinely rescaled into [0, 1].

        With no components the field is the constant midpoint 0.5.
        """
        xy = np.asarray(xy, dtype=float)
        scalar = xy.ndim == 1
        pts = xy.reshape(-1, 2)
        if not self.noise_components:
            out = np.full(pts.shape[0], 0.5)
            return float(out[0]) if scalar else out
        raw = np.zeros(pts.shape[0])
        total = 0.0
        for fx, fy, phase, weight in self.noise_components:
            raw = raw + weight * np.sin(2.0 * math.pi * (fx * pts[:, 0] + fy * pts[:, 1]) + phase)
            total += abs(weight)
        out = 0.5 + raw / (2.0 * total)
        return float(out[0]) if scalar else out

    def value(self, xy) -> np.ndarray | float:
        """Per-lesion dropout contribution, capped to [0, 1]."""
        xy = np.asarray(xy, dtype=float)
        scalar = xy.ndim == 1
        u = np.atleast_1d(self.inside_score(xy))
        n = np.atleast_1d(self.noise_field(xy))
        c = u * np.clip(0.75 + self.noise_gain * (n - 0.5), 0.0, 1.2)
        c = np.clip(c, 0.0, 1.0)
        return float(c[0]) if scalar else c

    def area(self, n_angles: int = 256) -> float:
        """Enclosed boundary area, 0.5 * integral of R(theta)^2 dtheta."""
        theta = np.linspace(0.0, 2.0 * math.pi, n_angles, endpoint=False)
        rim = np.asarray(self.modulated_radius(theta), dtype=float)
        return float(0.5 * np.sum(rim**2) * (2.0 * math.pi / n_angles))

    def effective_radius(self) -> float:
        return math.sqrt(self.area() / math.pi)

    def mean_value(self, n_radial: int = 24, n_angles: int = 48) -> float:
        """Mean dropout value over the lesion footprint (polar grid estimate)."""
        theta = np.linspace(0.0, 2.0 * math.pi, n_angles, endpoint=False)
        rim = np.asarray(self.modulated_radius(theta), dtype=float)
        frac = (np.arange(n_radial) + 0.5) / n_radial
        rho = rim[None, :] * np.sqrt(frac)[:, None]  # area-uniform radial spacing
        xs = self.center[0] + rho * np.cos(theta)[None, :]
        ys = self.center[1] + rho * np.sin(theta)[None, :]
        pts = np.column_stack([xs.ravel(), ys.ravel()])
        return float(np.mean(self.value(pts)))


class DropoutField:
    """Pointwise maximum of the per-lesion dropout values."""

    def __init__(self, regions: list[DropoutRegion] | tuple[DropoutRegion, ...] = ()):
        self.regions = list(regions)

    @property
    def strength_max(self) -> float:
        return max((r.strength for r in self.regions), default=0.0)

    def value(self, xy) -> np.ndarray | float:
        xy = np.asarray(xy, dtype=float)
        scalar = xy.ndim == 1
        pts = xy.reshape(-1, 2)
        if not self.regions:
            out = np.zeros(pts.shape[0])
            return float(out[0]) if scalar else out
        acc = self.regions[0].value(pts)
        for region in self.regions[1:]:
            acc = np.maximum(acc, region.value(pts))
        return float(acc[0]) if scalar else acc

    def nearest_center(self, xy: np.ndarray) -> np.ndarray:
        """Center of the lesion closest to each query point; requires regions."""
        pts = np.asarray(xy, dtype=float).reshape(-1, 2)
        centers = np.array([r.center for r in self.regions])
        d = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2)
        return centers[np.argmin(d, axis=1)]

    def largest_area(self) -> float:
        return max((r.area() for r in self.regions), default=0.0)


# -- weighted sampling ---------------------------------------------------------


def weighted_sample_without_replacement(
    weights: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """Indices of k items drawn without replacement, probability per draw
    proportional to weight among the remaining items.

    Uses exponential sort keys, which is distribution-equivalent to k
    successive renormalized weighted draws.
    """
    w = np.asarray(weights, dtype=float)
    if k < 0 or k > w.size:
        raise ValueError("sample size out of range")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    keys = np.full(w.size, np.inf)
    positive = w > 0
    keys[positive] = rng.exponential(size=int(positive.sum())) / w[positive]
    order = np.argsort(keys, kind="stable")
    return order[:k]


@dataclass(frozen=True)
class PruningConfig:
    regression_threshold: float = 0.35   # minimum local dropout for a leaf to be eligible
    core_bias: float = 2.0               # favors leaves near the lesion core
    radius_bias: float = 0.5             # favors small-caliber leaves, in [0.3, 1]
    drop_fraction: float = 0.9           # fraction of eligible leaves to remove
    elongation: tuple[float, float] = (1.0, 1.3)
    dilation: tuple[float, float] = (1.0, 1.4)

    def __post_init__(self):
        if not 0.0 < self.regression_threshold < 1.0:
            raise ValueError("regression threshold must lie in (0,1)")
        if self.core_bias <= 0:
            raise ValueError("core bias must be positive")
        if not 0.3 <= self.radius_bias <= 1.0:
            raise ValueError("radius bias must lie in [0.3, 1]")
        if self.elongation[1] < self.elongation[0] or self.elongation[0] < 1.0:
            raise ValueError("elongation range must satisfy 1 <= lo <= hi")
        if self.dilation[0] < 1.0 or self.dilation[1] < self.dilation[0]:
            raise ValueError("dilation range must satisfy 1 <= lo <= hi")


def prune_capillaries(
    forest: VesselForest,
    dropout: DropoutField,
    config: PruningConfig,
    rng: np.random.Generator,
    kappa: float = 3.0,
) -> int:
    """Remove terminal capillaries inside the dropout support.

    Only non-root grown leaves with local field value >= the regression
    threshold are candidates. ``floor(drop_fraction * n_eligible)`` of them
    (at most all) are sampled without replacement with weights
    (1 - c)^core_bias * r^(-radius_bias), then deleted; parent radii are
    recomputed bottom-up afterwards. Returns the number of removed leaves.
    """
    leaves = forest.leaf_indices()
    leaves = leaves[(forest.parent[leaves] >= 0) & (forest.appendage[leaves] == GROWN)]
    if leaves.size == 0 or not dropout.regions:
        return 0
    c = np.atleast_1d(dropout.value(forest.positions[leaves][:, :2]))
    eligible = leaves[c >= config.regression_threshold]
    c_eligible = c[c >= config.regression_threshold]
    count = min(int(math.floor(config.drop_fraction * eligible.size)), int(eligible.size))
    if count <= 0:
        return 0
    radii = forest.radii[eligible]
    weights = (1.0 - c_eligible) ** config.core_bias * radii ** (-config.radius_bias)
    chosen = weighted_sample_without_replacement(weights, count, rng)
    forest.remove_nodes(eligible[chosen])
    forest.recompute_radii(kappa)
    return count


def remodel_survivors(
    forest: VesselForest,
    dropout: DropoutField,
    config: PruningConfig,
    rng: np.random.Generator,
    kappa: float = 3.0,
) -> int:
    """Elongate and dilate surviving vessels inside dropout lesions.

    Every non-root grown node with local field value c > 0 has its incoming
    segment vector scaled by 1 + (e - 1) c, e ~ U[elongation range], applied
    top-down so subtrees follow their parents; its radius is scaled by
    D_lo + (D_hi - D_lo) c. Interior radii are then recomputed bottom-up so
    the branching law survives remodeling. Returns the touched node count.
    """
    n = len(forest)
    if n == 0 or not dropout.regions:
        return 0
    grown = forest.appendage == GROWN
    nonroot = forest.parent >= 0
    orig_pos = forest.positions.copy()
    c = np.atleast_1d(dropout.value(orig_pos[:, :2]))
    target = grown & nonroot & (c > 0.0)
    elong = rng.uniform(config.elongation[0], config.elongation[1], size=n)
    d_lo, d_hi = config.dilation
    touched = 0
    # parents precede children, so one forward pass applies parent shifts first
    for i in range(n):
        p = int(forest.parent[i])
        if p < 0 or not grown[i]:
            continue
        scale = 1.0 + (elong[i] - 1.0) * c[i] if target[i] else 1.0
        new = forest.positions[p] + scale * (orig_pos[i] - orig_pos[p])
        new[0] = min(max(new[0], 0.0), 1.0)
        new[1] = min(max(new[1], 0.0), 1.0)
        if target[i]:
            forest.set_position(i, new)
            forest.set_radius(i, forest.radii[i] * (d_lo + (d_hi - d_lo) * c[i]))
            touched += 1
        elif not np.array_equal(forest.positions[p], orig_pos[p]):
            forest.set_position(i, new)  # untouched child follows a moved parent
    forest.recompute_radii(kappa)
    return touched
