"""Microaneurysm budding: bulbous side branches near dropout borders."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..growth import MA_APPENDAGE, VesselForest
from .dropout import DropoutField

REFERENCE_LESION_AREA = math.pi * 0.25**2  # normalized-disk reference for area reweighting


@dataclass(frozen=True)
class MicroaneurysmConfig:
    base_probability: float = 0.03        # per-segment Bernoulli base density
    severity_coupling: float = 15.0       # scales with overall dropout severity
    field_coupling: float = 1.0           # scales with the local dropout value
    band: tuple[float, float] = (0.15, 0.75)  # eligible local-dropout window
    radius_mm: tuple[float, float] = (0.01, 0.08)
    length_factor: float = 0.35           # bud offset in units of the growth step
    cluster_children: tuple[int, int] = (2, 5)
    cluster_disk: float = 0.5             # cluster disk radius as a fraction of the MA radius

    def __post_init__(self):
        if not 0.0 <= self.base_probability <= 1.0:
            raise ValueError("base probability must lie in [0,1]")
        if not 0.0 < self.band[0] < self.band[1] < 1.0:
            raise ValueError("spawn band must satisfy 0 < lo < hi < 1")
        if not 0.0 < self.radius_mm[0] <= self.radius_mm[1]:
            raise ValueError("radius range must be positive and ordered")


@dataclass(frozen=True)
class MicroaneurysmRecord:
    center: tuple[float, float]
    radius_mm: float
    parent_node: int
    cluster_nodes: tuple[int, ...]


def ma_spawn_probability(
    local_value: float,
    severity_max: float,
    config: MicroaneurysmConfig,
    area_factor: float = 1.0,
) -> float:
    """Bernoulli success probability for one eligible segment, clamped to 1.

    p0 * (1 + lambda_s * s_max) * (1 + lambda_c * c), reweighted by the
    largest-lesion area factor so bigger lesions host more buds.
    """
    p = (
        config.base_probability
        * (1.0 + config.severity_coupling * severity_max)
        * (1.0 + config.field_coupling * local_value)
        * area_factor
    )
    return min(1.0, p)


def lesion_area_factor(dropout: DropoutField) -> float:
    """Area of the largest lesion relative to the reference disk, clamped to [0.5, 2]."""
    largest = dropout.largest_area()
    if largest <= 0.0:
        return 1.0
    return float(np.clip(largest / REFERENCE_LESION_AREA, 0.5, 2.0))


def _perp_xy(direction: np.ndarray) -> np.ndarray:
    """Unit in-plane perpendicular of a 3D direction; arbitrary for vertical segments."""
    ux, uy = direction[0], direction[1]
    n = math.hypot(ux, uy)
    if n < 1e-12:
        return np.array([0.0, 1.0, 0.0])
    return np.array([-uy / n, ux / n, 0.0])


def spawn_microaneurysms(
    forest: VesselForest,
    dropout: DropoutField,
    config: MicroaneurysmConfig,
    rng: np.random.Generator,
    step_size: float,
    mm_per_unit: float,
) -> list[MicroaneurysmRecord]:
    """Bud microaneurysms off arterial segments near dropout borders.

    Each non-root grown arterial node whose local dropout value falls in the
    spawn band is trialed independently; successes bud a perpendicular branch
    of length ``length_factor * step_size`` ending in the MA center, with a
    small cluster of child nodes inside a disk around it. Appended nodes are
    tagged as appendages so branching-law audits skip them.
    """
    if not dropout.regions:
        return []
    grown = forest.appendage == 0
    arterial = forest.node_kind_mask("arterial")
    nonroot = forest.parent >= 0
    candidates = np.nonzero(grown & arterial & nonroot)[0]
    if candidates.size == 0:
        return []
    c = np.atleast_1d(dropout.value(forest.positions[candidates][:, :2]))
    in_band = (c >= config.band[0]) & (c <= config.band[1])
    candidates = candidates[in_band]
    c = c[in_band]
    if candidates.size == 0:
        return []

    s_max = dropout.strength_max
    area = lesion_area_factor(dropout)
    records: list[MicroaneurysmRecord] = []
    draws = rng.uniform(size=candidates.size)
    for node, c_i, u in zip(candidates, c, draws):
        if u >= ma_spawn_probability(float(c_i), s_max, config, area):
            continue
        node = int(node)
        pos = forest.positions[node].copy()
        perp = _perp_xy(forest.directions[node])
        center = pos + config.length_factor * step_size * perp
        center[0] = min(max(center[0], 0.0), 1.0)
        center[1] = min(max(center[1], 0.0), 1.0)
        radius_mm = rng.uniform(config.radius_mm[0], config.radius_mm[1])
        radius = radius_mm / mm_per_unit
        ma_node = forest.add_node(node, center, radius, appendage=MA_APPENDAGE)
        n_children = int(rng.integers(config.cluster_children[0], config.cluster_children[1] + 1))
        cluster: list[int] = []
        for _ in range(n_children):
            ang = rng.uniform(0.0, 2.0 * math.pi)
            rad = config.cluster_disk * radius * math.sqrt(rng.uniform())
            child_pos = center + np.array([rad * math.cos(ang), rad * math.sin(ang), 0.0])
            child_pos[0] = min(max(child_pos[0], 0.0), 1.0)
            child_pos[1] = min(max(child_pos[1], 0.0), 1.0)
            child_radius = radius * rng.uniform(0.4, 0.9)
            cluster.append(forest.add_node(ma_node, child_pos, child_radius, appendage=MA_APPENDAGE))
        records.append(
            MicroaneurysmRecord(
                center=(float(center[0]), float(center[1])),
                radius_mm=float(radius_mm),
                parent_node=node,
                cluster_nodes=tuple(cluster),
            )
        )
    return records
