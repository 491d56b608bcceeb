from . import tensor
from .layers import (LstmCellState, ParamSpec, conv2d_forward, conv_specs,
                     dense_specs, fc_forward, lstm_specs, lstm_step,
                     lstm_zero_state)
from .optim import adam_step, clip_global_norm
from .params import ParamStore, init_params, load_checkpoint, save_checkpoint
from .tensor import Tape, Tensor, backward
