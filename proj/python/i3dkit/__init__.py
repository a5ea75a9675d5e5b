"""Inflated 3D ConvNet toolkit: graphs, kernel inflation, TV-L1 flow and training.

Arrays cross the boundary as float32 numpy arrays; activations are
(N, C, T, H, W) and clips are (T, C, H, W) in [0, 1].
"""

from ._core import (
    ArchConfig,
    Checkpoint,
    ConfigError,
    Error,
    Family,
    FormatError,
    Graph,
    InflationRule,
    IoError,
    NumericError,
    ShapeError,
    TVL1Params,
    adapt_input_conv,
    build_graph,
    build_model,
    calibrate_batchnorm,
    check_weights,
    evaluate,
    flow_stack,
    forward,
    inflate,
    inflate_kernel,
    init_weights,
    make_boring_video,
    num_threads,
    parse_family,
    read_flo,
    required_frames,
    rgb_to_gray,
    set_num_threads,
    shuffle_frames,
    synthetic_clips,
    temporal_footprint,
    train,
    tvl1,
    tvl1_energy,
    verify_fixed_point,
    with_input_frames,
    write_flo,
)

__all__ = [name for name in dir() if not name.startswith("_")]
