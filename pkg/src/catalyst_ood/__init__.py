"""Post-hoc out-of-distribution detection from pre-pooling channel statistics.

The pipeline: dump activation maps once, compute per-channel statistic
cues, calibrate a clipping threshold on ID data, turn each sample's
clipped statistic sum into a scale factor, fuse it with a baseline OOD
score, and evaluate ID/OOD separation with FPR95 and AUROC.
"""

from .baselines import (
    Ash,
    BaselineKind,
    Dice,
    DiceMask,
    Energy,
    FittedBaseline,
    Knn,
    KnnIndex,
    Msp,
    ReAct,
    ReActDice,
    Scale,
    apply_head,
    ash_s,
    dice_build,
    dice_score,
    energy,
    fit_baseline,
    knn_build,
    knn_score,
    msp,
    parse_baseline,
    react_clip,
    scale_shape,
)
from .channel_stats import (
    ChannelStatisticKind,
    StatVector,
    channel_entropy,
    channel_max,
    channel_mean,
    channel_median,
    channel_std,
    compute_stat,
    compute_stat_batch,
    gap_features,
)
from .detector import CatalystDetector
from .errors import (
    CatalystError,
    ConfigError,
    DegenerateDataError,
    FormatError,
    ValidationError,
)
from .feature_store import (
    ActivationMap,
    ClassifierHead,
    Dataset,
    DatasetManifest,
    LogitRecord,
    Violation,
    load_dump,
    load_manifest,
    save_dump,
    validate_dump,
)
from .fusion import FusionMode, SplitScores, fuse, fuse_batch, score_dataset
from .metrics import EvalReport, ScoreSet, auroc, evaluate, fpr_at_tpr, threshold_lambda
from .scaling import (
    CalibrationProfile,
    calibrate_threshold,
    percentile,
    scale_factor,
    scale_factors,
    sweep_percentiles,
)
from .synth_lab import (
    SeparationReport,
    SynthSpec,
    TheoremVerdict,
    generate,
    generate_calibration_split,
    measure_separations,
    verify_theorems,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationMap",
    "Ash",
    "BaselineKind",
    "CalibrationProfile",
    "CatalystDetector",
    "CatalystError",
    "ChannelStatisticKind",
    "ClassifierHead",
    "ConfigError",
    "Dataset",
    "DatasetManifest",
    "DegenerateDataError",
    "Dice",
    "DiceMask",
    "Energy",
    "EvalReport",
    "FittedBaseline",
    "FormatError",
    "FusionMode",
    "Knn",
    "KnnIndex",
    "LogitRecord",
    "Msp",
    "ReAct",
    "ReActDice",
    "Scale",
    "ScoreSet",
    "SeparationReport",
    "SplitScores",
    "StatVector",
    "SynthSpec",
    "TheoremVerdict",
    "ValidationError",
    "Violation",
    "apply_head",
    "ash_s",
    "auroc",
    "calibrate_threshold",
    "channel_entropy",
    "channel_max",
    "channel_mean",
    "channel_median",
    "channel_std",
    "compute_stat",
    "compute_stat_batch",
    "dice_build",
    "dice_score",
    "energy",
    "evaluate",
    "fit_baseline",
    "fpr_at_tpr",
    "fuse",
    "fuse_batch",
    "gap_features",
    "generate",
    "generate_calibration_split",
    "knn_build",
    "knn_score",
    "load_dump",
    "load_manifest",
    "measure_separations",
    "msp",
    "parse_baseline",
    "percentile",
    "react_clip",
    "save_dump",
    "scale_factor",
    "scale_factors",
    "scale_shape",
    "score_dataset",
    "sweep_percentiles",
    "threshold_lambda",
    "validate_dump",
    "verify_theorems",
]
