"""Neural layers built from tape ops: dense, conv2d, LSTM cell.

Parameters live in a ParamStore and are addressed by dotted names
(e.g. "enc.W"). Layer shapes are declared up front via ParamSpec lists so
initialization and checkpointing can be driven from one place.

LSTM gate layout: the fused weight rows are ordered [input, forget,
candidate, output]; W maps the step input, U the previous hidden state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from . import tensor as tt
from .tensor import Tape, Tensor


@dataclass
class LstmCellState:
    h: Tensor
    c: Tensor


@dataclass(frozen=True)
class ParamSpec:
    """Declared parameter: name, shape, and init family."""

    name: str
    shape: tuple
    kind: str  # "xavier" | "lstm" | "bias"


def dense_specs(prefix: str, n_in: int, n_out: int) -> list[ParamSpec]:
    return [
        ParamSpec(f"{prefix}.W", (n_out, n_in), "xavier"),
        ParamSpec(f"{prefix}.b", (n_out,), "bias"),
    ]


def conv_specs(prefix: str, kh: int, kw: int, c_in: int, c_out: int) -> list[ParamSpec]:
    return [
        ParamSpec(f"{prefix}.W", (kh, kw, c_in, c_out), "xavier"),
        ParamSpec(f"{prefix}.b", (c_out,), "bias"),
    ]


def lstm_specs(prefix: str, n_in: int, hidden: int) -> list[ParamSpec]:
    return [
        ParamSpec(f"{prefix}.W", (4 * hidden, n_in), "lstm"),
        ParamSpec(f"{prefix}.U", (4 * hidden, hidden), "lstm"),
        ParamSpec(f"{prefix}.b", (4 * hidden,), "bias"),
    ]


_ACTIVATIONS = {"relu": tt.relu, "tanh": tt.tanh, "identity": lambda x: x}


def fc_forward(tape: Tape, params, prefix: str, x, activation: str = "relu") -> Tensor:
    """Affine map W x + b followed by the configured activation."""
    if activation not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    W = params.leaf(tape, f"{prefix}.W")
    b = params.leaf(tape, f"{prefix}.b")
    if tt._data(x).shape[-1] != W.data.shape[1]:
        raise ConfigError(
            f"{prefix}: input width {tt._data(x).shape[-1]} != expected {W.data.shape[1]}")
    return _ACTIVATIONS[activation](tt.affine(x, W, b))


def conv2d_forward(tape: Tape, params, prefix: str, x, stride: int = 1,
                   padding: int = 0, activation: str = "relu") -> Tensor:
    """Convolution + activation, channels-last."""
    W = params.leaf(tape, f"{prefix}.W")
    b = params.leaf(tape, f"{prefix}.b")
    return _ACTIVATIONS[activation](tt.conv2d(x, W, b, stride=stride, padding=padding))


def lstm_zero_state(tape: Tape, hidden: int, batch: tuple = ()) -> LstmCellState:
    z = np.zeros(batch + (hidden,), dtype=np.float64)
    return LstmCellState(h=tape.input(z), c=tape.input(z.copy()))


def lstm_step(tape: Tape, params, prefix: str, x, state: LstmCellState) -> LstmCellState:
    """One LSTM cell step for x of shape (in,) or (batch, in)."""
    W = params.leaf(tape, f"{prefix}.W")
    U = params.leaf(tape, f"{prefix}.U")
    b = params.leaf(tape, f"{prefix}.b")
    hidden = U.data.shape[1]
    xd = tt._data(x)
    if xd.shape[-1] != W.data.shape[1]:
        raise ConfigError(
            f"{prefix}: step input width {xd.shape[-1]} != expected {W.data.shape[1]}")
    if tt._data(state.h).shape != tt._data(state.c).shape:
        raise ConfigError(f"{prefix}: hidden/cell state widths differ")
    z = tt.add(tt.affine(x, W), tt.affine(state.h, U, b))
    i = tt.sigmoid(tt.segment(z, 0, hidden))
    f = tt.sigmoid(tt.segment(z, hidden, 2 * hidden))
    g = tt.tanh(tt.segment(z, 2 * hidden, 3 * hidden))
    o = tt.sigmoid(tt.segment(z, 3 * hidden, 4 * hidden))
    c = tt.add(tt.mul(f, state.c), tt.mul(i, g))
    h = tt.mul(o, tt.tanh(c))
    return LstmCellState(h=h, c=c)
