"""Dense tensors, reverse-mode gradients, neural blocks and the optimizer."""
from . import tensor as ops
from .gradcheck import GradCheckReport, grad_check, rel_error
from .nn import ParamView, gru_cell, init_gru, init_mlp, init_time_encoding, mlp, softmax, time_encode
from .params import Param, ParamStore, adam_step
from .tensor import NotScalarLoss, ShapeMismatch, Tape, Tensor, backward, variable
