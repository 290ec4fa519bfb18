"""Border tortuosity: perpendicular jitter of vessels along dropout rims."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..growth import GROWN, VesselForest
from .dropout import DropoutField

AMPLITUDE_FACTOR = 0.35  # jitter amplitude = 0.35 * gain * step size


@dataclass(frozen=True)
class TortuosityConfig:
    gain: float = 0.2
    band: tuple[float, float] = (0.30, 0.75)

    def __post_init__(self):
        if not 0.0 <= self.gain <= 1.0:
            raise ValueError("tortuosity gain must lie in [0,1]")
        if not 0.0 <= self.band[0] < self.band[1] <= 1.0:
            raise ValueError("band must satisfy 0 <= lo < hi <= 1")


def jitter_amplitude(gain: float, step_size: float) -> float:
    return AMPLITUDE_FACTOR * gain * step_size


def apply_tortuosity(
    forest: VesselForest,
    dropout: DropoutField,
    config: TortuosityConfig,
    step_size: float,
    rng: np.random.Generator,
) -> int:
    """Jitter arterial nodes inside the tortuosity band perpendicular to their segment.

    Displacement is eps * u_perp with eps ~ U(-A, A), A = 0.35 * gain * step;
    positions are clipped back to the unit square. Topology, node count, and
    appendage chains (MA buds, NV sprouts) are untouched. Returns the number
    of jittered nodes.
    """
    if config.gain <= 0.0 or not dropout.regions:
        return 0
    grown = forest.appendage == GROWN
    arterial = forest.node_kind_mask("arterial")
    nonroot = forest.parent >= 0
    candidates = np.nonzero(grown & arterial & nonroot)[0]
    if candidates.size == 0:
        return 0
    c = np.atleast_1d(dropout.value(forest.positions[candidates][:, :2]))
    in_band = (c >= config.band[0]) & (c <= config.band[1])
    nodes = candidates[in_band]
    if nodes.size == 0:
        return 0

    amplitude = jitter_amplitude(config.gain, step_size)
    eps = rng.uniform(-amplitude, amplitude, size=nodes.size)
    directions = forest.directions[nodes]
    perp_norm = np.hypot(directions[:, 0], directions[:, 1])
    ok = perp_norm > 1e-12
    moved = 0
    for node, e, d, n, valid in zip(nodes, eps, directions, perp_norm, ok):
        if not valid:
            continue
        perp = np.array([-d[1] / n, d[0] / n, 0.0])
        pos = forest.positions[int(node)] + e * perp
        pos[0] = min(max(pos[0], 0.0), 1.0)
        pos[1] = min(max(pos[1], 0.0), 1.0)
        forest.set_position(int(node), pos)
        moved += 1
    return moved
