"""Python access to the transfgu core: evaluation, clustering, cropping and the pipeline."""

from ._core import (
    Assignment,
    ChecksumError,
    ConfigError,
    ConfusionMatrix,
    CropRect,
    Error,
    EvalReport,
    FormatError,
    KMeansResult,
    MissingArtifactError,
    NotFoundError,
    NumericError,
    ShapeError,
    SynthConfig,
    archive_tensors,
    binarize_attention,
    evaluate,
    generate_windows,
    hungarian_match,
    kmeans,
    metrics,
    run,
    synth,
)

__all__ = [
    "Assignment",
    "ChecksumError",
    "ConfigError",
    "ConfusionMatrix",
    "CropRect",
    "Error",
    "EvalReport",
    "FormatError",
    "KMeansResult",
    "MissingArtifactError",
    "NotFoundError",
    "NumericError",
    "ShapeError",
    "SynthConfig",
    "archive_tensors",
    "binarize_attention",
    "evaluate",
    "generate_windows",
    "hungarian_match",
    "kmeans",
    "metrics",
    "run",
    "synth",
]
