"""Parameter store, initialization, and JSON checkpoint I/O.

Checkpoints are a single JSON document: parameter arrays as base64
little-endian float64, Adam moments, the step counter, and a free-form
"extra" dict for model/scaler config. format_version guards reloads.
"""
from __future__ import annotations

import base64
import json
from typing import Iterable

import numpy as np

from .._util import atomic_write_text
from ..errors import ConfigError
from .layers import ParamSpec
from .tensor import Tape, Tensor

CHECKPOINT_VERSION = 1


class ParamStore:
    """Named float64 parameters plus gradient and Adam-moment buffers."""

    def __init__(self, params: dict[str, np.ndarray]) -> None:
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.step = 0

    def leaf(self, tape: Tape, name: str) -> Tensor:
        if name not in self.params:
            raise ConfigError(f"unknown parameter {name!r}")
        return tape.leaf(name, self.params[name])

    def harvest(self, tape: Tape, scale: float = 1.0) -> None:
        """Add the tape's leaf gradients into the store accumulators."""
        for name, node in tape.leaves.items():
            if node.grad is not None:
                self.grads[name] += scale * node.grad

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[:] = 0.0

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


def init_params(specs: Iterable[ParamSpec], seed: int) -> ParamStore:
    """Build a store from specs: Xavier-uniform weights with bound
    sqrt(6 / (fan_in + fan_out)), LSTM weights uniform in [-0.001, 0.001],
    biases zero. Deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for spec in specs:
        if spec.name in params:
            raise ConfigError(f"duplicate parameter {spec.name!r}")
        if spec.kind == "bias":
            params[spec.name] = np.zeros(spec.shape, dtype=np.float64)
        elif spec.kind == "lstm":
            params[spec.name] = rng.uniform(-0.001, 0.001, size=spec.shape)
        elif spec.kind == "xavier":
            if len(spec.shape) == 2:
                fan_out, fan_in = spec.shape
            elif len(spec.shape) == 4:
                kh, kw, c_in, c_out = spec.shape
                fan_in, fan_out = kh * kw * c_in, kh * kw * c_out
            else:
                raise ConfigError(f"xavier init needs a 2-D or 4-D shape, got {spec.shape}")
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            params[spec.name] = rng.uniform(-bound, bound, size=spec.shape)
        else:
            raise ConfigError(f"unknown init kind {spec.kind!r}")
    return ParamStore(params)


def _encode(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])


def save_checkpoint(path: str, store: ParamStore, extra: dict | None = None) -> None:
    """Serialize the store to JSON atomically (temp file + rename)."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "params": {k: _encode(v) for k, v in sorted(store.params.items())},
        "optimizer": {
            "step": store.step,
            "m": {k: _encode(v) for k, v in sorted(store.m.items())},
            "v": {k: _encode(v) for k, v in sorted(store.v.items())},
        },
        "extra": extra or {},
    }
    atomic_write_text(path, json.dumps(doc))


def load_checkpoint(path: str) -> tuple[ParamStore, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(
            f"checkpoint format_version {version} not supported; this build reads "
            f"version {CHECKPOINT_VERSION}. Re-train or convert the checkpoint")
    store = ParamStore({k: _decode(v) for k, v in doc["params"].items()})
    opt = doc.get("optimizer", {})
    store.step = int(opt.get("step", 0))
    for k, v in opt.get("m", {}).items():
        store.m[k] = _decode(v)
    for k, v in opt.get("v", {}).items():
        store.v[k] = _decode(v)
    return store, doc.get("extra", {})
