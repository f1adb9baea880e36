"""Occlusion attacks on 3D point-set and volumetric classifiers."""

from ._iso3d import (
    Dataset,
    FormatError,
    Network,
    ParseError,
    ShapeError,
    VerificationRefused,
    __version__,
    brute_force_min_occlusion,
    critical_set,
    evaluate,
    exhaustive_verify,
    iso,
    random_occlusion,
    synth_shape,
    synthetic_dataset,
    train,
    voxelize,
)

__all__ = [
    "Dataset",
    "FormatError",
    "Network",
    "ParseError",
    "ShapeError",
    "VerificationRefused",
    "__version__",
    "brute_force_min_occlusion",
    "critical_set",
    "evaluate",
    "exhaustive_verify",
    "iso",
    "random_occlusion",
    "synth_shape",
    "synthetic_dataset",
    "train",
    "voxelize",
]
