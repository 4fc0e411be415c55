"""Neural-patch MRF image synthesis over a fixed VGG-19 trunk.

Images are float32 arrays of shape (3, height, width) holding RGB in [0, 255].
"""

from ._core import (
    ConfigError,
    EnergyConfig,
    Error,
    InputError,
    LoadError,
    Network,
    OptimizationError,
    extract_patches,
    forward,
    invert,
    layer_stride,
    load_weights,
    make_test_network,
    match_patches,
    match_report,
    pyramid_schedule,
    read_image,
    save_weights,
    set_log_level,
    set_num_threads,
    transfer,
    write_png,
)

__all__ = [
    "ConfigError",
    "EnergyConfig",
    "Error",
    "InputError",
    "LoadError",
    "Network",
    "OptimizationError",
    "extract_patches",
    "forward",
    "invert",
    "layer_stride",
    "load_weights",
    "make_test_network",
    "match_patches",
    "match_report",
    "pyramid_schedule",
    "read_image",
    "save_weights",
    "set_log_level",
    "set_num_threads",
    "transfer",
    "write_png",
]
