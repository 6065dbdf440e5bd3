"""cacforge: calcium-labeled synthetic radiograph datasets from cardiac CT.

Pipeline stages: ingest (load/gate/resample/score), projector (exact
ray-traced DRRs), enhance (gamma/CLAHE/unsharp, slice upsampling), dataset
(manifests, stratified splits, curriculum, augmentation), and stats
(run-log metrics plus paired signed-rank testing).
"""

__version__ = "0.1.0"

from .dataset import (
    AugmentParams,
    Manifest,
    PatientRecord,
    SplitPlan,
    apply_augment,
    build_manifest,
    build_split_plan,
    curriculum_order,
    sample_augment,
    stratified_kfold,
)
from .enhance import (
    EnhanceConfig,
    UpsampleConfig,
    apply_clahe,
    apply_gamma,
    apply_mode,
    apply_unsharp,
    upsample_sagittal,
)
from .ingest import (
    CacLabel,
    CalciumMask,
    Volume,
    agatston_score,
    gate_slice_coverage,
    load_mask,
    load_volume,
    resample_isotropic,
    resample_mask,
    write_mask,
    write_volume,
)
from .projector import (
    DrrImage,
    ProjectionGeometry,
    ViewPose,
    pose_transform,
    render_drr,
    siddon_path_integral,
)
from .stats import (
    ConfusionMetrics,
    PairedComparison,
    WilcoxonResult,
    compare_report,
    compare_runs,
    confusion_metrics,
    epoch_select,
    roc_auc,
    wilcoxon_signed_rank,
)

__all__ = [
    "AugmentParams",
    "CacLabel",
    "CalciumMask",
    "ConfusionMetrics",
    "DrrImage",
    "EnhanceConfig",
    "Manifest",
    "PairedComparison",
    "PatientRecord",
    "ProjectionGeometry",
    "SplitPlan",
    "UpsampleConfig",
    "ViewPose",
    "Volume",
    "WilcoxonResult",
    "agatston_score",
    "apply_augment",
    "apply_clahe",
    "apply_gamma",
    "apply_mode",
    "apply_unsharp",
    "build_manifest",
    "build_split_plan",
    "compare_report",
    "compare_runs",
    "confusion_metrics",
    "curriculum_order",
    "epoch_select",
    "gate_slice_coverage",
    "load_mask",
    "load_volume",
    "pose_transform",
    "render_drr",
    "resample_isotropic",
    "resample_mask",
    "roc_auc",
    "sample_augment",
    "siddon_path_integral",
    "stratified_kfold",
    "upsample_sagittal",
    "wilcoxon_signed_rank",
    "write_mask",
    "write_volume",
]
