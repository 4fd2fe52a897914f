"""Minimal dense-tensor substrate: taped autodiff, LSTMs, Adam, checkpoints."""

from .checkpoint import CheckpointError, load_params, save_params
from .gradcheck import GradCheckReport, grad_check
from .optim import (NonFiniteGradient, Parameter, adam_step, clip_global_norm,
                    grad_global_norm, uniform_init, zero_grads)
from .rnn import LstmWeights, bilstm, init_lstm, lstm_cell, lstm_run
from .tensor import (PROB_FLOOR, ShapeError, Tape, Tensor, accumulate, add, add_n,
                     add_scalar, affine, clip, concat, cross_entropy, custom_op,
                     dot, exp, log, matmul, minimum, mul, narrow, no_tape, pick,
                     scale, sigmoid, softmax, stack, sub, take_row, tanh, tmean,
                     tsum)

__all__ = [
    "CheckpointError", "load_params", "save_params",
    "GradCheckReport", "grad_check",
    "NonFiniteGradient", "Parameter", "adam_step", "clip_global_norm",
    "grad_global_norm", "uniform_init", "zero_grads",
    "LstmWeights", "bilstm", "init_lstm", "lstm_cell", "lstm_run",
    "PROB_FLOOR", "ShapeError", "Tape", "Tensor", "accumulate", "add", "add_n", "add_scalar",
    "affine", "clip", "concat", "cross_entropy", "custom_op", "dot", "exp", "log",
    "matmul", "minimum", "mul", "narrow", "no_tape", "pick", "scale", "sigmoid",
    "softmax", "stack", "sub", "take_row", "tanh", "tmean", "tsum",
]
