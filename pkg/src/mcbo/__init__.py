"""Deformable multimodal 3D image registration.

Modality-independent self-similarity features, multilevel dense correlation
with weight-balanced coupled convex optimization, inverse consistency, Adam
instance optimization, weighted multilevel fusion and cross-modality
maximum fusion, plus a synthetic-deformation verification harness.
"""

from .convex import ConvexSchedule, coupled_convex, inverse_consistent
from .correlation import CostVolume, argmin_disp, cost_volume, displacement_candidates
from .evaluation import (
    LandmarkSet,
    TreResult,
    jacobian_stats,
    load_landmarks,
    save_landmarks,
    synth_deform,
    synth_volume,
    tre,
)
from .fusion import ModalityFieldSet, max_fuse
from .grid import (
    DisplacementField,
    FeatureVolume,
    Volume3,
    avg_pool,
    compose,
    sample_field,
    smooth_box,
    trilinear_sample,
    upsample_field,
    warp,
    zero_field,
)
from .instance_opt import (
    InstOptConfig,
    NumericalError,
    instance_optimize,
    loss_and_gradient,
    registration_loss,
)
from .metaio import FormatError, read_field, read_volume, write_field, write_volume
from .mindssc import MindConfig, extract, pair_offsets
from .pipeline import (
    ConfigError,
    LevelConfig,
    OctantLayout,
    PipelineConfig,
    PRESET_NAMES,
    multilevel_fuse,
    preset,
    register,
    run_level,
    splice_octants,
    split_octants,
    validate_config,
)

__version__ = "0.1.0"

__all__ = [
    "ConvexSchedule",
    "coupled_convex",
    "inverse_consistent",
    "CostVolume",
    "argmin_disp",
    "cost_volume",
    "displacement_candidates",
    "LandmarkSet",
    "TreResult",
    "jacobian_stats",
    "load_landmarks",
    "save_landmarks",
    "synth_deform",
    "synth_volume",
    "tre",
    "ModalityFieldSet",
    "max_fuse",
    "DisplacementField",
    "FeatureVolume",
    "Volume3",
    "avg_pool",
    "compose",
    "sample_field",
    "smooth_box",
    "trilinear_sample",
    "upsample_field",
    "warp",
    "zero_field",
    "InstOptConfig",
    "NumericalError",
    "instance_optimize",
    "loss_and_gradient",
    "registration_loss",
    "FormatError",
    "read_field",
    "read_volume",
    "write_field",
    "write_volume",
    "MindConfig",
    "extract",
    "pair_offsets",
    "ConfigError",
    "LevelConfig",
    "OctantLayout",
    "PipelineConfig",
    "PRESET_NAMES",
    "multilevel_fuse",
    "preset",
    "register",
    "run_level",
    "splice_octants",
    "split_octants",
    "validate_config",
    "__version__",
]
