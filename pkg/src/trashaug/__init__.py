"""Two-stage VAE dataset augmentation with a human-bootstrapped quality filter."""

from .dataset import (
    DatasetManifest,
    ManifestEntry,
    augment,
    compose,
    ingest,
    subsample,
)
from .eval_harness import (
    EvalModel,
    ExperimentSpec,
    evaluate,
    run_comparison,
    train_eval_classifier,
)
from .metrics import (
    ClassificationReport,
    FeatureSet,
    FidReport,
    classification_report,
    extract_features,
    fid,
    mae,
    matrix_sqrt_psd,
)
from .quality_filter import (
    FilterModel,
    FilterTrainConfig,
    LabelRecord,
    LabelStore,
    filter_pool,
    predict,
    train_filter,
)
from .vae import (
    GaussianParams,
    VaeCheckpoint,
    VaeStageConfig,
    elbo_loss,
    encode,
    generate,
    reconstruct,
    reparameterize,
    train_stage,
)

__all__ = [
    "DatasetManifest",
    "ManifestEntry",
    "ingest",
    "augment",
    "subsample",
    "compose",
    "GaussianParams",
    "VaeStageConfig",
    "VaeCheckpoint",
    "encode",
    "reparameterize",
    "elbo_loss",
    "train_stage",
    "generate",
    "reconstruct",
    "matrix_sqrt_psd",
    "fid",
    "extract_features",
    "mae",
    "classification_report",
    "FeatureSet",
    "FidReport",
    "ClassificationReport",
    "LabelRecord",
    "LabelStore",
    "FilterModel",
    "FilterTrainConfig",
    "train_filter",
    "predict",
    "filter_pool",
    "EvalModel",
    "ExperimentSpec",
    "train_eval_classifier",
    "evaluate",
    "run_comparison",
]
