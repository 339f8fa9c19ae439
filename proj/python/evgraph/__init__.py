"""Python access to the evgraph C++ core."""

from ._core import (
    ConfigError,
    DivergenceError,
    Error,
    FormatError,
    Graph,
    IndexError,
    IoError,
    Model,
    OverflowError,
    RangeError,
    ShapeError,
    account_memory,
    build_classifier,
    build_detector,
    build_graph,
    decode_bin,
    encode_bin,
    load_model,
    radius_neighbors,
    read_bin_file,
    synth_dataset,
)

__all__ = [
    "ConfigError",
    "DivergenceError",
    "Error",
    "FormatError",
    "Graph",
    "IndexError",
    "IoError",
    "Model",
    "OverflowError",
    "RangeError",
    "ShapeError",
    "account_memory",
    "build_classifier",
    "build_detector",
    "build_graph",
    "decode_bin",
    "encode_bin",
    "load_model",
    "radius_neighbors",
    "read_bin_file",
    "synth_dataset",
]
