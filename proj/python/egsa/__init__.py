"""Python bindings for the EGSA C++ core."""

from ._core import (
    ContractError,
    DataError,
    DimensionError,
    FormatError,
    ParameterError,
    UndefinedMetricError,
    canny,
    delta_accuracy,
    depth_errors,
    depth_to_edges,
    egsa_fuse,
    generate_scene,
    miou,
    rgb_to_gray,
    run_cli,
)

__all__ = [
    "ContractError",
    "DataError",
    "DimensionError",
    "FormatError",
    "ParameterError",
    "UndefinedMetricError",
    "canny",
    "delta_accuracy",
    "depth_errors",
    "depth_to_edges",
    "egsa_fuse",
    "generate_scene",
    "miou",
    "rgb_to_gray",
    "run_cli",
]
