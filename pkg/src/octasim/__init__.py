"""octasim: deterministic synthetic en-face retinal angiography.

Grows arterial and venous vessel forests by space colonization, applies the
four diabetic-retinopathy graph transforms (capillary dropout, microaneurysms,
neovascular tufts, border tortuosity), renders en-face vessel maps with
segmentation masks, and emits structured metadata plus grounded reasoning
text at dataset scale.
"""

from .growth import (
    ARTERIAL,
    DEEP,
    SUPERFICIAL,
    VENOUS,
    FazGeometry,
    GrowthConfig,
    GrowthDomain,
    VesselForest,
    grow_forest,
    growth_direction,
    murray_parent_radius,
    perception_cone_filter,
    sample_faz_center,
)
from .pathology import (
    DropoutField,
    DropoutRegion,
    MicroaneurysmConfig,
    MicroaneurysmRecord,
    NeovascularConfig,
    NeovascularTuft,
    PathologyRecord,
    PruningConfig,
    TortuosityConfig,
    apply_pathologies,
    apply_tortuosity,
    grow_nv_tufts,
    ma_spawn_probability,
    prune_capillaries,
    remodel_survivors,
    spawn_microaneurysms,
)
from .raster import RasterConfig, VesselMap, binarize, rasterize
from .annotate import (
    ConversationRecord,
    LocalizationPhrase,
    SampleMetadata,
    build_conversation,
    derive_label,
    localize,
    metadata_from_record,
    template_reasoning,
)
from .diversify import (
    RewriteRequest,
    TeacherEndpointConfig,
    build_rewrite_messages,
    rewrite,
    verify_fact_preservation,
)
from .config import DEFAULT_CONFIG, ConfigError, config_digest, load_config, resolve_config
from .pipeline import (
    DatasetManifest,
    PathologyProfile,
    SampleBundle,
    derive_sample_seed,
    generate_dataset,
    generate_sample,
    sample_profile,
    validate_dataset,
)

__version__ = "0.1.0"
