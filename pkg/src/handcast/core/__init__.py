"""Deterministic tensor engine: autodiff tape, layers' raw ops, optimizers, I/O."""

from .engine import (
    MissingGradientError,
    NonFiniteError,
    Parameter,
    ShapeError,
    Tape,
    Tensor,
    active_tape,
    current_dtype,
    he_uniform,
    tensor,
    use_float64,
)
from .ops import (
    add,
    concat_channels,
    conv2d,
    conv2d_output_size,
    dense,
    mse_loss,
    relu,
    reshape,
    scale,
    smooth_l1_loss,
    softmax_cross_entropy,
    transpose,
    transposed_conv2d,
    transposed_conv2d_output_size,
)
from .optim import Adam, Sgd, optimizer_step
from .gradcheck import finite_difference_check
from .checkpoint import CheckpointError, load_checkpoint, read_ftr, save_checkpoint, write_ftr
