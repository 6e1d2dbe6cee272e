"""Convolution-free 3D shifted-window transformer UNet for traffic forecasting."""

from .attention import AttentionConfig, SwinBlocks, SwinLayer, WindowAttention
from .checkpoint import CheckpointError, apply_state, load_checkpoint, save_checkpoint
from .data import (
    HORIZON_MINUTES,
    HORIZON_OFFSETS,
    FormatError,
    TrafficMovie,
    TrafficSample,
    flip_augment,
    generate_synthetic,
    normalize,
    denormalize,
    read_movie,
    slice_samples,
    write_movie,
)
from .estimator import SwinUNet3DForecaster
from .gradcheck import check_parameter_gradients, finite_diff_check
from .model import ModelConfig, SwinUNet3D, count_parameters
from .nn import LayerNorm, Linear, Mlp, Module
from .tensor import ConfigError, Parameter, ShapeError, Tensor, no_grad
from .training import Adam, TrainConfig, evaluate, mse_loss, per_horizon_mse, plateau_schedule, train
from .windowing import (
    PartitionError,
    WindowSpec,
    compute_shift_mask,
    relative_position_index,
    window_partition,
    window_reverse,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig",
    "SwinBlocks",
    "SwinLayer",
    "WindowAttention",
    "CheckpointError",
    "apply_state",
    "load_checkpoint",
    "save_checkpoint",
    "HORIZON_MINUTES",
    "HORIZON_OFFSETS",
    "FormatError",
    "TrafficMovie",
    "TrafficSample",
    "flip_augment",
    "generate_synthetic",
    "normalize",
    "denormalize",
    "read_movie",
    "slice_samples",
    "write_movie",
    "SwinUNet3DForecaster",
    "check_parameter_gradients",
    "finite_diff_check",
    "ModelConfig",
    "SwinUNet3D",
    "count_parameters",
    "LayerNorm",
    "Linear",
    "Mlp",
    "Module",
    "ConfigError",
    "Parameter",
    "ShapeError",
    "Tensor",
    "no_grad",
    "Adam",
    "TrainConfig",
    "evaluate",
    "mse_loss",
    "per_horizon_mse",
    "plateau_schedule",
    "train",
    "PartitionError",
    "WindowSpec",
    "compute_shift_mask",
    "relative_position_index",
    "window_partition",
    "window_reverse",
]
