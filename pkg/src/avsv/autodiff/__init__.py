"""Minimal reverse-mode automatic differentiation over numpy arrays."""
from avsv.autodiff.gradcheck import grad_check, grad_check_params
from avsv.autodiff.ops import (
    RunningStats,
    add,
    attend,
    batchnorm,
    concat,
    conv2d,
    cross_entropy,
    dropout,
    elementwise,
    gather_rows,
    l2_normalize,
    linear,
    log,
    matmul,
    mean,
    mul,
    pad2d,
    relu,
    reshape,
    scale,
    softmax,
    tanh,
    transpose,
)
from avsv.autodiff.ops import sum as sum_all
from avsv.autodiff.tensor import Tape, Tensor, active_tape, backward, record

__all__ = [
    "RunningStats", "Tape", "Tensor", "active_tape", "add", "attend", "backward",
    "batchnorm", "concat", "conv2d", "cross_entropy", "dropout", "elementwise",
    "gather_rows", "grad_check", "grad_check_params", "l2_normalize", "linear",
    "log", "matmul", "mean", "mul", "pad2d", "record", "relu", "reshape", "scale",
    "softmax", "sum_all", "tanh", "transpose",
]
