"""Space-colonization growth of arterial and venous vessel forests.

The vasculature is a forest of rooted binary trees living in a normalized
box [0,1] x [0,1] x [0, height]. Arterial trees chase oxygen sinks, venous
trees chase CO2 sources; the two point populations are sampled and consumed
independently. Growth happens in two phases, one per vascular layer
(superficial, then deep). Radii follow a power-law branching rule with
exponent kappa, recomputed bottom-up after every phase so the rule holds
at every bifurcation.

Coordinates are normalized; ``GrowthDomain.mm_per_unit`` maps one lateral
unit to millimetres (default 3.0 mm for a macular crop).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

ARTERIAL = "arterial"
VENOUS = "venous"
SUPERFICIAL = "superficial"
DEEP = "deep"

KILL_FACTOR = 0.5  # attraction points are consumed within 0.5 * perception distance

# appendage tags per node: grown vessel, microaneurysm bud, neovascular sprout
GROWN, MA_APPENDAGE, NV_APPENDAGE = 0, 1, 2


class GrowthConfigError(ValueError):
    """Raised for invalid growth configuration values."""


@dataclass(frozen=True)
class GrowthDomain:
    """Normalized growth box: 1.0 x 1.0 laterally, ``height`` axially."""

    height: float = 0.15
    mm_per_unit: float = 3.0
    layer_count: int = 2

    def __post_init__(self):
        if self.height <= 0:
            raise GrowthConfigError("domain height must be positive")
        if self.mm_per_unit <= 0:
            raise GrowthConfigError("physical scale must be positive")

    def layer_band(self, layer: str) -> tuple[float, float]:
        half = self.height / 2.0
        return (0.0, half) if layer == SUPERFICIAL else (half, self.height)

    def contains(self, p: np.ndarray) -> bool:
        return bool(
            0.0 <= p[0] <= 1.0 and 0.0 <= p[1] <= 1.0 and 0.0 <= p[2] <= self.height
        )


@dataclass(frozen=True)
class FazGeometry:
    """Jittered foveal avascular zone: a circular exclusion disk in the en-face plane."""

    center: tuple[float, float]
    radius: float
    jitter: float = 0.0
    max_shift: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise GrowthConfigError("FAZ radius must be positive")
        if math.hypot(self.center[0] - 0.5, self.center[1] - 0.5) > self.max_shift + 1e-12:
            raise GrowthConfigError("FAZ center displaced beyond max shift")

    def contains_xy(self, xy: np.ndarray) -> np.ndarray:
        """Strict 2D membership test; accepts (..., 2) arrays."""
        xy = np.asarray(xy, dtype=float)
        d = np.hypot(xy[..., 0] - self.center[0], xy[..., 1] - self.center[1])
        return d < self.radius


@dataclass(frozen=True)
class GrowthConfig:
    perception_distance: float = 0.05   # attraction range per tip
    perception_half_angle: float = math.radians(80.0)
    step_size: float = 0.01
    bifurcation_exponent: float = 3.0
    direction_weight: float = 0.7       # attraction vs. branching blend, in [0,1]
    points_per_iteration: int = 45
    iterations_per_layer: int = 140
    terminal_radius: float = 0.003      # ~9 um at 3 mm lateral scale
    source_sink_ratio: float = 1.0      # CO2 sources per oxygen sink
    deep_seeds_per_kind: int = 3
    root_angles_arterial: tuple[float, ...] = (math.radians(115.0), math.radians(295.0))
    root_angles_venous: tuple[float, ...] = (math.radians(65.0), math.radians(245.0))

    def __post_init__(self):
        if self.perception_distance <= 0:
            raise GrowthConfigError("perception distance must be positive")
        if not 0.0 < self.perception_half_angle < math.pi / 2:
            raise GrowthConfigError("perception half-angle must be in (0, pi/2)")
        if self.step_size <= 0:
            raise GrowthConfigError("step size must be positive")
        if self.bifurcation_exponent <= 0:
            raise GrowthConfigError("bifurcation exponent must be positive")
        if not 0.0 <= self.direction_weight <= 1.0:
            raise GrowthConfigError("direction weight must lie in [0,1]")
        if self.iterations_per_layer < 0:
            raise GrowthConfigError("iteration budget must be non-negative")
        if self.iterations_per_layer > 0 and self.points_per_iteration <= 0:
            raise GrowthConfigError("attraction count must be positive when iterating")
        if self.terminal_radius <= 0:
            raise GrowthConfigError("terminal radius must be positive")


class VesselForest:
    """Rooted trees stored as flat parallel arrays with amortized appends.

    Nodes are appended in growth order, so ``parent[i] < i`` for every
    non-root node; a reverse scan is therefore a bottom-up traversal.
    ``radius[i]`` is the radius of the segment joining node ``i`` to its
    parent (for roots, of the root stub).
    """

    _INITIAL_CAPACITY = 1024

    def __init__(self):
        cap = self._INITIAL_CAPACITY
        self._n = 0
        self._pos = np.zeros((cap, 3))
        self._rad = np.zeros(cap)
        self._par = np.full(cap, -1, dtype=np.int64)
        self._tree = np.zeros(cap, dtype=np.int64)
        self._app = np.zeros(cap, dtype=np.int64)
        self._nchild = np.zeros(cap, dtype=np.int64)
        self._dir = np.zeros((cap, 3))
        self.tree_kind: list[str] = []
        self.tree_layer: list[str] = []

    def _ensure(self, extra: int) -> None:
        need = self._n + extra
        cap = self._pos.shape[0]
        if need <= cap:
            return
        cap = max(cap, 1)
        while cap < need:
            cap *= 2
        self._pos = np.resize(self._pos, (cap, 3))
        self._rad = np.resize(self._rad, cap)
        self._par = np.resize(self._par, cap)
        self._tree = np.resize(self._tree, cap)
        self._app = np.resize(self._app, cap)
        self._nchild = np.resize(self._nchild, cap)
        self._dir = np.resize(self._dir, (cap, 3))

    # -- construction ------------------------------------------------------

    def add_root(self, position, radius: float, kind: str, layer: str, direction) -> int:
        tree = len(self.tree_kind)
        self.tree_kind.append(kind)
        self.tree_layer.append(layer)
        return self._append(position, radius, -1, tree, GROWN, direction)

    def add_node(self, parent: int, position, radius: float, appendage: int = GROWN) -> int:
        pos = np.asarray(position, dtype=float)
        d = pos - self._pos[parent]
        n = float(np.linalg.norm(d))
        direction = d / n if n > 0 else self._dir[parent]
        idx = self._append(pos, radius, parent, self._tree[parent], appendage, direction)
        self._nchild[parent] += 1
        return idx

    def _append(self, position, radius, parent, tree, appendage, direction) -> int:
        self._ensure(1)
        i = self._n
        self._pos[i] = position
        self._rad[i] = radius
        self._par[i] = parent
        self._tree[i] = tree
        self._app[i] = appendage
        self._nchild[i] = 0
        self._dir[i] = direction
        self._n = i + 1
        return i

    # -- array views (live, do not mutate in place) -------------------------

    def __len__(self) -> int:
        return self._n

    @property
    def positions(self) -> np.ndarray:
        return self._pos[: self._n]

    @property
    def radii(self) -> np.ndarray:
        return self._rad[: self._n]

    @property
    def parent(self) -> np.ndarray:
        return self._par[: self._n]

    @property
    def tree_id(self) -> np.ndarray:
        return self._tree[: self._n]

    @property
    def appendage(self) -> np.ndarray:
        return self._app[: self._n]

    @property
    def children_count(self) -> np.ndarray:
        return self._nchild[: self._n]

    @property
    def directions(self) -> np.ndarray:
        return self._dir[: self._n]

    def node_kind_mask(self, kind: str) -> np.ndarray:
        """Boolean per-node mask selecting trees of the given kind."""
        kinds = np.array(self.tree_kind, dtype="U10")
        return kinds[self.tree_id] == kind

    def node_layer_mask(self, layer: str) -> np.ndarray:
        layers = np.array(self.tree_layer, dtype="U12")
        return layers[self.tree_id] == layer

    def set_position(self, idx: int, position) -> None:
        self._pos[idx] = np.asarray(position, dtype=float)

    def set_radius(self, idx: int, radius: float) -> None:
        self._rad[idx] = float(radius)

    def children_lists(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self._n)]
        par = self._par
        for i in range(self._n):
            p = par[i]
            if p >= 0:
                out[p].append(i)
        return out

    def leaf_indices(self) -> np.ndarray:
        return np.nonzero(self.children_count == 0)[0]

    def root_indices(self) -> np.ndarray:
        return np.nonzero(self.parent < 0)[0]

    # -- maintenance -------------------------------------------------------

    def recompute_radii(self, kappa: float, terminal_radius: float | None = None) -> None:
        """Restore the branching law bottom-up over grown (non-appendage) nodes.

        Leaves keep their radius unless ``terminal_radius`` is given, in which
        case grown leaves are pinned to it. Interior radii become
        (sum of child radius^kappa)^(1/kappa) over grown children.
        """
        children = self.children_lists()
        rad = self._rad
        app = self._app
        for i in range(self._n - 1, -1, -1):
            if app[i] != GROWN:
                continue
            grown = [c for c in children[i] if app[c] == GROWN]
            if not grown:
                if terminal_radius is not None:
                    rad[i] = terminal_radius
                continue
            acc = 0.0
            for c in grown:
                acc += rad[c] ** kappa
            rad[i] = acc ** (1.0 / kappa)

    def remove_nodes(self, indices) -> None:
        """Delete the given nodes (must be leaves) and reindex the arrays."""
        drop = np.unique(np.asarray(indices, dtype=np.int64))
        if drop.size == 0:
            return
        if (self.children_count[drop] != 0).any():
            raise ValueError("only leaf nodes can be removed")
        parents = self.parent[drop]
        np.subtract.at(self._nchild, parents[parents >= 0], 1)
        keep = np.ones(self._n, dtype=bool)
        keep[drop] = False
        remap = np.cumsum(keep) - 1  # old index -> new index where kept
        n_new = int(keep.sum())
        par = self.parent[keep]
        par = np.where(par >= 0, remap[np.clip(par, 0, None)], -1)
        self._pos = self.positions[keep].copy()
        self._rad = self.radii[keep].copy()
        self._par = par
        self._tree = self.tree_id[keep].copy()
        self._app = self.appendage[keep].copy()
        self._nchild = self.children_count[keep].copy()
        self._dir = self.directions[keep].copy()
        self._n = n_new

    # -- audits ------------------------------------------------------------

    def murray_residuals(self, kappa: float) -> np.ndarray:
        """Relative branching-law error at every grown two-child node."""
        children = self.children_lists()
        app = self._app
        rad = self._rad
        res = []
        for i in range(self._n):
            if app[i] != GROWN:
                continue
            grown = [c for c in children[i] if app[c] == GROWN]
            if len(grown) != 2:
                continue
            expected = (rad[grown[0]] ** kappa + rad[grown[1]] ** kappa) ** (1.0 / kappa)
            res.append(abs(rad[i] - expected) / rad[i])
        return np.asarray(res, dtype=float)

    def assert_forest(self) -> None:
        """Parent indices must precede children: guarantees acyclic rooted trees."""
        par = self.parent
        idx = np.arange(self._n)
        if (par >= idx).any():
            raise AssertionError("parent index must precede child index")

    def to_arrays(self) -> dict[str, np.ndarray]:
        """Canonical serialized form (used for digests and determinism checks)."""
        return {
            "positions": self.positions.copy(),
            "radii": self.radii.copy(),
            "parent": self.parent.copy(),
            "tree_id": self.tree_id.copy(),
            "appendage": self.appendage.copy(),
            "tree_kind": np.array(self.tree_kind, dtype="U10"),
            "tree_layer": np.array(self.tree_layer, dtype="U12"),
        }


# -- elementary operations ---------------------------------------------------


def murray_parent_radius(r1: float, r2: float, kappa: float) -> float:
    """Parent radius from two child radii under the power branching law."""
    if kappa <= 0:
        raise ValueError("branching exponent must be positive")
    if r1 < 0 or r2 < 0:
        raise ValueError("radii must be non-negative")
    if r1 == 0 and r2 == 0:
        raise ValueError("at least one child radius must be positive")
    return float((r1**kappa + r2**kappa) ** (1.0 / kappa))


def sample_faz_center(jitter: float, max_shift: float, rng: np.random.Generator) -> tuple[float, float]:
    """Image center plus a uniform-disk jitter, clamped to ``max_shift``."""
    if jitter < 0 or max_shift < 0:
        raise ValueError("jitter and max shift must be non-negative")
    if jitter == 0:
        return (0.5, 0.5)
    ang = rng.uniform(0.0, 2.0 * math.pi)
    rad = jitter * math.sqrt(rng.uniform(0.0, 1.0))
    if rad > max_shift:
        rad = max_shift
    return (0.5 + rad * math.cos(ang), 0.5 + rad * math.sin(ang))


def perception_cone_filter(
    tip: np.ndarray,
    direction: np.ndarray,
    points: np.ndarray,
    distance: float,
    half_angle: float,
) -> np.ndarray:
    """Points within ``distance`` of ``tip`` and within ``half_angle`` of ``direction``.

    ``direction`` must be unit length. A point coinciding with the tip counts
    as on-axis. Returns the selected rows of ``points`` in input order.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        return pts
    rel = pts - np.asarray(tip, dtype=float)
    dist = np.linalg.norm(rel, axis=1)
    cos_lim = math.cos(half_angle)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_ang = (rel @ np.asarray(direction, dtype=float)) / dist
    ok = (dist <= distance) & ((dist == 0.0) | (cos_ang >= cos_lim))
    return pts[ok]


class DegenerateDirectionError(ValueError):
    """Weighted direction blend cancelled to the zero vector."""


def growth_direction(attraction: np.ndarray, branching: np.ndarray, weight: float) -> np.ndarray:
    """Unit blend of normalized attraction and branching directions."""
    a = np.asarray(attraction, dtype=float)
    b = np.asarray(branching, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("attraction and branching vectors must be non-zero")
    v = weight * (a / na) + (1.0 - weight) * (b / nb)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise DegenerateDirectionError("blended growth direction vanished")
    return v / n


# -- forest growth ------------------------------------------------------------


def _border_point(angle: float) -> tuple[float, float]:
    """Intersection of the ray from (0.5, 0.5) at ``angle`` with the unit-square border."""
    dx, dy = math.cos(angle), math.sin(angle)
    ts = []
    if abs(dx) > 1e-12:
        ts.append(0.5 / abs(dx))
    if abs(dy) > 1e-12:
        ts.append(0.5 / abs(dy))
    t = min(ts)
    return (0.5 + t * dx, 0.5 + t * dy)


def _sample_attraction_points(
    n: int,
    band: tuple[float, float],
    faz: FazGeometry,
    rng: np.random.Generator,
) -> np.ndarray:
    """Uniform points in the layer slab, rejecting the FAZ exclusion disk."""
    chunks = []
    have = 0
    while have < n:
        m = max(n - have, 16)
        cand = np.column_stack(
            [
                rng.uniform(0.0, 1.0, m),
                rng.uniform(0.0, 1.0, m),
                rng.uniform(band[0], band[1], m),
            ]
        )
        cand = cand[~faz.contains_xy(cand[:, :2])]
        chunks.append(cand)
        have += cand.shape[0]
    return np.vstack(chunks)[:n]


class _Population:
    """One attraction-point population."""

    def __init__(self):
        self.points = np.empty((0, 3))

    def add(self, pts: np.ndarray) -> None:
        self.points = np.vstack([self.points, pts]) if self.points.size else pts

    def discard(self, mask: np.ndarray) -> None:
        if mask.any():
            self.points = self.points[~mask]


def _grow_step(
    forest: VesselForest,
    kind: str,
    layer: str,
    population: _Population,
    domain: GrowthDomain,
    config: GrowthConfig,
    faz: FazGeometry,
) -> int:
    """Advance every receptive tip of the given kind/layer by one segment."""
    pts = population.points
    if pts.shape[0] == 0:
        return 0

    kind_ok = forest.node_kind_mask(kind) & forest.node_layer_mask(layer)
    active = np.nonzero(kind_ok & (forest.children_count < 2))[0]
    if active.size == 0:
        return 0

    positions = forest.positions
    directions = forest.directions
    tree = cKDTree(positions[active])
    dist, nearest = tree.query(pts, k=1, distance_upper_bound=config.perception_distance)
    hit = np.isfinite(dist)

    # consume points already perfused by a nearby node
    kill = hit & (dist <= KILL_FACTOR * config.perception_distance)
    attract = hit & ~kill

    grown = 0
    if attract.any():
        owner = active[nearest[attract]]
        rel = pts[attract] - positions[owner]
        rel_norm = np.linalg.norm(rel, axis=1)
        ok = rel_norm > 0
        cos_ang = np.zeros(len(rel))
        cos_ang[ok] = np.einsum("ij,ij->i", rel[ok], directions[owner][ok]) / rel_norm[ok]
        in_cone = ok & (cos_ang >= math.cos(config.perception_half_angle))

        owner = owner[in_cone]
        unit = rel[in_cone] / rel_norm[in_cone][:, None]
        accum = np.zeros((len(forest), 3))
        counts = np.zeros(len(forest))
        np.add.at(accum, owner, unit)
        np.add.at(counts, owner, 1.0)

        nodes = np.unique(owner)  # sorted: deterministic append order
        if nodes.size:
            mean_attr = accum[nodes] / counts[nodes][:, None]
            attr_norm = np.linalg.norm(mean_attr, axis=1)
            nodes = nodes[attr_norm > 0]
            a_hat = mean_attr[attr_norm > 0] / attr_norm[attr_norm > 0][:, None]
            w = config.direction_weight
            blend = w * a_hat + (1.0 - w) * directions[nodes]
            bnorm = np.linalg.norm(blend, axis=1)
            degenerate = bnorm < 1e-12
            blend[degenerate] = a_hat[degenerate]
            bnorm[degenerate] = 1.0
            step_dir = blend / bnorm[:, None]
            new_pos = positions[nodes] + config.step_size * step_dir
            # rejection, never clamping: the step must stay inside the box
            # and outside the FAZ exclusion disk
            in_box = (
                (new_pos[:, 0] >= 0.0) & (new_pos[:, 0] <= 1.0)
                & (new_pos[:, 1] >= 0.0) & (new_pos[:, 1] <= 1.0)
                & (new_pos[:, 2] >= 0.0) & (new_pos[:, 2] <= domain.height)
            )
            valid = in_box & ~faz.contains_xy(new_pos[:, :2])
            for node, pos in zip(nodes[valid], new_pos[valid]):
                forest.add_node(int(node), pos, config.terminal_radius)
                grown += 1

    population.discard(kill)
    return grown


def grow_forest(
    domain: GrowthDomain,
    config: GrowthConfig,
    faz: FazGeometry,
    rng: np.random.Generator,
) -> VesselForest:
    """Grow the full two-layer arterial + venous forest.

    Superficial roots sit on the image border at the configured angles; deep
    trees are seeded below superficial capillary endpoints and grow downward
    into the deep slab. Attraction points accumulate each iteration and are
    consumed once a node comes within the kill distance.
    """
    forest = VesselForest()
    band_sup = domain.layer_band(SUPERFICIAL)
    z_root = 0.5 * (band_sup[0] + band_sup[1])
    for kind, angles in (
        (ARTERIAL, config.root_angles_arterial),
        (VENOUS, config.root_angles_venous),
    ):
        for ang in angles:
            x, y = _border_point(ang)
            inward = np.array([0.5 - x, 0.5 - y, 0.0])
            inward /= np.linalg.norm(inward)
            forest.add_root(
                np.array([x, y, z_root]), config.terminal_radius, kind, SUPERFICIAL, inward
            )

    n_sinks = config.points_per_iteration
    n_sources = max(1, round(config.points_per_iteration * config.source_sink_ratio))

    for layer in (SUPERFICIAL, DEEP):
        if layer == DEEP:
            _seed_deep_layer(forest, domain, config, rng)
        band = domain.layer_band(layer)
        sinks, sources = _Population(), _Population()
        for _ in range(config.iterations_per_layer):
            sinks.add(_sample_attraction_points(n_sinks, band, faz, rng))
            sources.add(_sample_attraction_points(n_sources, band, faz, rng))
            _grow_step(forest, ARTERIAL, layer, sinks, domain, config, faz)
            _grow_step(forest, VENOUS, layer, sources, domain, config, faz)
        forest.recompute_radii(config.bifurcation_exponent, config.terminal_radius)

    return forest


def _seed_deep_layer(
    forest: VesselForest,
    domain: GrowthDomain,
    config: GrowthConfig,
    rng: np.random.Generator,
) -> None:
    """Root deep trees just below randomly chosen superficial leaf endpoints."""
    band = domain.layer_band(DEEP)
    z_seed = band[0] + 0.25 * (band[1] - band[0])
    leaves = forest.leaf_indices()
    positions = forest.positions
    down = np.array([0.0, 0.0, 1.0])
    for kind in (ARTERIAL, VENOUS):
        mask = (forest.node_kind_mask(kind) & forest.node_layer_mask(SUPERFICIAL))[leaves]
        pool = leaves[mask]
        if pool.size == 0:
            continue
        count = min(config.deep_seeds_per_kind, pool.size)
        chosen = rng.choice(pool, size=count, replace=False)
        for leaf in chosen:
            p = positions[leaf].copy()
            p[2] = z_seed
            forest.add_root(p, config.terminal_radius, kind, DEEP, down)
