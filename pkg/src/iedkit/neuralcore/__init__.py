"""Small reverse-mode autodiff core with the layers the detectors need."""

from . import functional
from .functional import (
    ShapeMismatchError,
    activation,
    add,
    bce_loss,
    concat,
    conv1d_same,
    dense,
    dropout,
    global_avg_pool,
    lstm,
    maxpool1d,
    relu,
    reshape,
    sigmoid,
    tanh,
    transpose,
    upsample_repeat,
    weighted_sum,
)
from .gradcheck import grad_check, relative_error
from .layers import LSTM, Conv1D, Dense, Layer, glorot_uniform
from .optim import OptimizerState, RMSprop, rmsprop_step
from .tensor import Parameter, Tensor, as_tensor, no_grad

__all__ = [
    "functional", "ShapeMismatchError", "activation", "add", "bce_loss", "concat",
    "conv1d_same", "dense", "dropout", "global_avg_pool", "lstm", "maxpool1d", "relu",
    "reshape", "sigmoid", "tanh", "transpose", "upsample_repeat", "weighted_sum",
    "grad_check", "relative_error", "LSTM", "Conv1D", "Dense", "Layer", "glorot_uniform",
    "OptimizerState", "RMSprop", "rmsprop_step", "Parameter", "Tensor", "as_tensor", "no_grad",
]
