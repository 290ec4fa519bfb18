"""Graph remodeling transforms for the four diabetic-retinopathy hallmarks.

Applied in a fixed order to a grown forest: dropout-field construction and
capillary pruning, survivor remodeling, microaneurysm budding, neovascular
tuft growth, and border tortuosity. Every lesion is recorded so metadata and
reasoning text can be derived without re-inspecting the graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..growth import FazGeometry, VesselForest
from .dropout import (
    DropoutField,
    DropoutRegion,
    LesionShapeError,
    PruningConfig,
    prune_capillaries,
    remodel_survivors,
    weighted_sample_without_replacement,
)
from .microaneurysm import (
    MicroaneurysmConfig,
    MicroaneurysmRecord,
    ma_spawn_probability,
    lesion_area_factor,
    spawn_microaneurysms,
)
from .neovascular import (
    NeovascularConfig,
    NeovascularTuft,
    grow_nv_tufts,
    taper_radius,
)
from .tortuosity import TortuosityConfig, apply_tortuosity, jitter_amplitude

__all__ = [
    "DropoutField",
    "DropoutRegion",
    "LesionShapeError",
    "PruningConfig",
    "MicroaneurysmConfig",
    "MicroaneurysmRecord",
    "NeovascularConfig",
    "NeovascularTuft",
    "TortuosityConfig",
    "PathologyRecord",
    "apply_pathologies",
    "apply_tortuosity",
    "grow_nv_tufts",
    "jitter_amplitude",
    "lesion_area_factor",
    "ma_spawn_probability",
    "prune_capillaries",
    "remodel_survivors",
    "spawn_microaneurysms",
    "taper_radius",
    "weighted_sample_without_replacement",
]


@dataclass
class PathologyRecord:
    """Everything the annotation layer needs about one sample's lesions."""

    dropout: DropoutField = field(default_factory=DropoutField)
    removed_leaves: int = 0
    remodeled_nodes: int = 0
    microaneurysms: list[MicroaneurysmRecord] = field(default_factory=list)
    tufts: list[NeovascularTuft] = field(default_factory=list)
    tortuosity_gain: float = 0.0
    tortuosity_band: tuple[float, float] = (0.30, 0.75)
    tortuosity_nodes: int = 0
    nv_severity: float = 0.0
    nv_footprint: float = 0.0


def apply_pathologies(
    forest: VesselForest,
    dropout: DropoutField,
    faz: FazGeometry,
    pruning: PruningConfig,
    ma_config: MicroaneurysmConfig | None,
    nv_config: NeovascularConfig | None,
    tort_config: TortuosityConfig | None,
    rng: np.random.Generator,
    step_size: float,
    mm_per_unit: float,
    kappa: float = 3.0,
) -> PathologyRecord:
    """Run the full pathology pass over a grown forest, mutating it in place."""
    record = PathologyRecord(dropout=dropout)
    if not dropout.regions:
        return record

    record.removed_leaves = prune_capillaries(forest, dropout, pruning, rng, kappa)
    record.remodeled_nodes = remodel_survivors(forest, dropout, pruning, rng, kappa)
    if ma_config is not None:
        record.microaneurysms = spawn_microaneurysms(
            forest, dropout, ma_config, rng, step_size, mm_per_unit
        )
    if nv_config is not None and nv_config.severity > 0.0:
        record.tufts = grow_nv_tufts(forest, dropout, faz, nv_config, rng)
        record.nv_severity = nv_config.severity
        record.nv_footprint = nv_config.footprint_radius
    if tort_config is not None:
        record.tortuosity_gain = tort_config.gain
        record.tortuosity_band = tort_config.band
        record.tortuosity_nodes = apply_tortuosity(
            forest, dropout, tort_config, step_size, rng
        )
    return record
