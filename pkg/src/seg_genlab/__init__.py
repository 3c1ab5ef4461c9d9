"""Toolkit for cross-dataset generalization studies of lesion segmentation.

Operates on serialized artifacts (checkpoint archives, masks, probability
maps) rather than a live training framework: weight averaging (SWA and
soups, optionally scoped to encoder or decoder), prediction ensembling,
Dice / binned-AUPR evaluation, labelling-style characterization and
dataset-combination planning and reporting.
"""

__version__ = "0.1.0"

from .archive import (
    ArchiveMetadata,
    TensorArchive,
    archives_equal,
    partition_by_role,
    read_archive,
    write_archive,
)
from .averaging import AveragingRequest, average_weights, validate_swa_trajectory
from .characterization import (
    HistogramSpec,
    LesionStats,
    QualityDistribution,
    StyleSummary,
    compare_styles,
    connected_components,
    lesion_stats,
    quality_distribution,
    style_summary,
)
from .ensemble import EnsembleSet, ensemble_average
from .metrics import (
    ConfusionCounts,
    MetricRecord,
    PRPoint,
    aggregate_replicates,
    binarize,
    binned_aupr,
    dataset_metric,
    dice,
    evaluate_dataset,
)
from .planning import (
    ComboSpec,
    DatasetManifest,
    ExperimentPlan,
    build_plan,
    enumerate_combinations,
    generate_split,
    scenario_table,
    strategy_comparison,
)
from .rasters import (
    FrameTransform,
    FundusImage,
    LesionMask,
    ProbabilityMap,
    apply_transform,
    compute_crop,
    extract_patches,
    load_mask,
    load_probability_map,
    save_mask,
    save_probability_map,
)
from .synth import BlobTruth, LesionKnobs, SynthConfig, generate_mask, generate_prediction
