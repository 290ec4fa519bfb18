"""Neovascular tufts: fine tortuous sprouts grown from vessel tips.

Tufts start at arterial leaf tips inside the dropout support, advance by a
fixed step length per growth iteration, and stay inside the dropout support
and outside the FAZ by rejection-resampling each step direction. Radii taper
linearly from a start radius (proportional to the parent tip) to a smaller
end radius. Side branches follow the same rule with fewer steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..growth import GROWN, NV_APPENDAGE, FazGeometry, VesselForest
from .dropout import DropoutField

SUPPORT_THRESHOLD = 0.05  # minimum dropout value counting as "inside the support"
_MAX_DIRECTION_TRIES = 24


@dataclass(frozen=True)
class NeovascularConfig:
    severity: float = 0.4                 # global NV severity in [0,1]
    footprint_radius: float = 0.04        # normalized tuft extent
    main_steps: int = 5                   # growth iterations of the main sprout
    weight_previous: float = 0.6
    weight_radial: float = 0.2
    weight_swirl: float = 0.2
    jitter_std: float = 0.15
    start_radius_scale: float = 0.6       # r_start as a fraction of the parent tip radius
    end_radius_scale: float = 0.3         # r_end as a fraction of r_start
    faz_margin: float = 0.04              # down-weight tips closer than this to the FAZ rim
    side_branch_base: float = 0.25        # side-branch probability grows with severity

    def __post_init__(self):
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError("severity must lie in [0,1]")
        if not 3 <= self.main_steps <= 6:
            raise ValueError("main sprout length must lie in [3,6] growth steps")
        if self.footprint_radius <= 0:
            raise ValueError("footprint radius must be positive")
        if not 0.0 < self.end_radius_scale < 1.0:
            raise ValueError("end radius scale must lie in (0,1) of the start radius")

    @property
    def step_length(self) -> float:
        """Per-iteration advance; the main sprout roughly spans the footprint."""
        return self.footprint_radius / self.main_steps

    def group_count(self) -> int:
        return int(round(1.0 + 4.0 * self.severity))


@dataclass
class NeovascularTuft:
    origin_node: int
    main_points: list[tuple[float, float]]
    side_branches: list[list[tuple[float, float]]]
    radius_start: float
    radius_end: float
    severity: float


def taper_radius(t: int, total_steps: int, r_start: float, r_end: float) -> float:
    """Linear radius profile along the sprout: r_start at t=0, r_end at t=total."""
    tau = t / total_steps
    return (1.0 - tau) * r_start + tau * r_end


def _swirl(xy: np.ndarray) -> np.ndarray:
    """Low-frequency rotational field used to curl sprout directions."""
    ang = 2.0 * math.pi * (0.7 * math.sin(3.1 * xy[0]) + 0.3 * math.cos(2.3 * xy[1]))
    return np.array([math.cos(ang), math.sin(ang)])


def _grow_polyline(
    start: np.ndarray,
    initial_dir: np.ndarray,
    steps: int,
    config: NeovascularConfig,
    dropout: DropoutField,
    faz: FazGeometry,
    rng: np.random.Generator,
) -> list[np.ndarray] | None:
    """Advance ``steps`` fixed-length segments inside the dropout support.

    Directions blend persistence, a radial push away from the nearest lesion
    center, a swirl component, and isotropic jitter. A step landing outside
    the support or inside the FAZ is rejected and its direction resampled;
    as a last resort the step walks straight toward the lesion center, which
    stays inside. Returns None when even that fails on the first step.
    """
    points = [start.copy()]
    prev = initial_dir / (np.linalg.norm(initial_dir) + 1e-12)
    ell = config.step_length
    for _ in range(steps):
        here = points[-1]
        center = dropout.nearest_center(here[None, :])[0]
        radial = here - center
        n = np.linalg.norm(radial)
        radial = radial / n if n > 1e-12 else np.array([1.0, 0.0])
        accepted = None
        for attempt in range(_MAX_DIRECTION_TRIES):
            jitter = rng.normal(0.0, config.jitter_std, size=2)
            v = (
                config.weight_previous * prev
                + config.weight_radial * radial
                + config.weight_swirl * _swirl(here)
                + jitter
            )
            nv = np.linalg.norm(v)
            if nv < 1e-12:
                continue
            cand = here + ell * (v / nv)
            if _valid_point(cand, dropout, faz):
                accepted = (cand, v / nv)
                break
        if accepted is None:
            inward = center - here
            n = np.linalg.norm(inward)
            if n < 1e-12:
                return points if len(points) > 1 else None
            inward = inward / n
            cand = here + ell * inward
            if not _valid_point(cand, dropout, faz):
                return points if len(points) > 1 else None
            accepted = (cand, inward)
        points.append(accepted[0])
        prev = accepted[1]
    return points


def _valid_point(xy: np.ndarray, dropout: DropoutField, faz: FazGeometry) -> bool:
    if not (0.0 <= xy[0] <= 1.0 and 0.0 <= xy[1] <= 1.0):
        return False
    if faz.contains_xy(xy):
        return False
    return float(dropout.value(xy)) > SUPPORT_THRESHOLD


def grow_nv_tufts(
    forest: VesselForest,
    dropout: DropoutField,
    faz: FazGeometry,
    config: NeovascularConfig,
    rng: np.random.Generator,
) -> list[NeovascularTuft]:
    """Grow neovascular tufts from eligible arterial leaf tips.

    Tips are drawn with weights favoring strong local dropout and distance
    from the FAZ; tips outside the support are ineligible. The sprout chain
    is appended to the forest as appendage nodes carrying the tapered radii.
    Returns an empty list when severity is zero or no tip qualifies.
    """
    if config.severity <= 0.0:
        return []
    if not dropout.regions:
        raise ValueError("neovascular growth requires at least one dropout region")

    leaves = forest.leaf_indices()
    leaves = leaves[
        (forest.appendage[leaves] == GROWN)
        & forest.node_kind_mask("arterial")[leaves]
        & (forest.parent[leaves] >= 0)
    ]
    if leaves.size == 0:
        return []
    xy = forest.positions[leaves][:, :2]
    c = np.atleast_1d(dropout.value(xy))
    faz_dist = np.hypot(xy[:, 0] - faz.center[0], xy[:, 1] - faz.center[1]) - faz.radius
    eligible = (c > SUPPORT_THRESHOLD) & (faz_dist > 0.0)
    leaves, xy, c, faz_dist = leaves[eligible], xy[eligible], c[eligible], faz_dist[eligible]
    if leaves.size == 0:
        return []

    weights = c * np.clip(faz_dist / config.faz_margin, 0.1, 1.0)
    count = min(config.group_count(), leaves.size)
    order = np.argsort(rng.exponential(size=weights.size) / weights)

    tufts: list[NeovascularTuft] = []
    for tip in leaves[order]:  # weighted order; keep trying tips until enough tufts
        if len(tufts) >= count:
            break
        tip = int(tip)
        start = forest.positions[tip][:2].copy()
        tip_dir = forest.directions[tip][:2]
        if np.linalg.norm(tip_dir) < 1e-12:
            tip_dir = np.array([1.0, 0.0])
        main = _grow_polyline(start, tip_dir, config.main_steps, config, dropout, faz, rng)
        if main is None or len(main) != config.main_steps + 1:
            continue
        r_start = config.start_radius_scale * forest.radii[tip]
        r_end = config.end_radius_scale * r_start
        z = forest.positions[tip][2]
        chain = tip
        chain_nodes = [tip]
        for t, p in enumerate(main[1:], start=1):
            radius = taper_radius(t, config.main_steps, r_start, r_end)
            chain = forest.add_node(chain, np.array([p[0], p[1], z]), radius, appendage=NV_APPENDAGE)
            chain_nodes.append(chain)

        side_branches: list[list[np.ndarray]] = []
        if config.main_steps >= 4:
            p_side = min(1.0, config.side_branch_base + 0.5 * config.severity)
            for t in range(1, config.main_steps):  # intermediate points only
                if rng.uniform() >= p_side:
                    continue
                side_steps = int(rng.integers(3, config.main_steps))  # < main_steps
                anchor = main[t]
                away = anchor - dropout.nearest_center(anchor[None, :])[0]
                n = np.linalg.norm(away)
                away = away / n if n > 1e-12 else np.array([0.0, 1.0])
                side = _grow_polyline(anchor, away, side_steps, config, dropout, faz, rng)
                if side is None or len(side) != side_steps + 1:
                    continue
                side_branches.append(side)
                node = chain_nodes[t]
                r_here = taper_radius(t, config.main_steps, r_start, r_end)
                for s, q in enumerate(side[1:], start=1):
                    radius = taper_radius(s, side_steps, r_here, r_end * 0.8)
                    node = forest.add_node(
                        node, np.array([q[0], q[1], z]), radius, appendage=NV_APPENDAGE
                    )

        tufts.append(
            NeovascularTuft(
                origin_node=tip,
                main_points=[(float(p[0]), float(p[1])) for p in main],
                side_branches=[
                    [(float(q[0]), float(q[1])) for q in side] for side in side_branches
                ],
                radius_start=float(r_start),
                radius_end=float(r_end),
                severity=config.severity,
            )
        )
    return tufts
