from .tensor import (DEFAULT_DTYPE, Node, ShapeError, Tape, Tensor, backward,
                     backward_from, is_grad_enabled, no_grad, record)
from .ops import *  # noqa: F401,F403
from . import ops
from .nn import BatchNorm, Conv2d, Linear, Module, Sequential, he_init, zeros_param
from .optim import Adam, NonFiniteGradient, adam_step, clip_global_norm
from .gradcheck import grad_check
from .serialize import CheckpointError, load_blob, save_blob
