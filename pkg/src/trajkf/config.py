"""Model and training configuration."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    n_agents: int = 6
    horizon: int = 50        # forecast steps L
    history: int = 20        # observed steps per feature window
    dt: float = 0.1
    conv_channels: tuple = (8, 16)
    fc_widths: tuple = (64, 32)
    enc_hidden: int = 32
    dec_hidden: int = 32
    a_max: float = 8.0       # acceleration clamp, m/s^2
    noise_reduce: int = 32   # noise-net input reduction width
    noise_hidden: int = 32
    noise_input_scale: float = 0.05
    sigma_min_sq: float = 1e-6
    p0: float = 1.0          # initial state variance
    control: str = "forecast"    # predict-step control: "forecast" | "sensor"
    init_accel: str = "zero"     # init extrapolation: "zero" | "hold"

    def __post_init__(self):
        if self.control not in ("forecast", "sensor"):
            raise ConfigError(f"control must be 'forecast' or 'sensor', got {self.control!r}")
        if self.init_accel not in ("zero", "hold"):
            raise ConfigError(f"init_accel must be 'zero' or 'hold', got {self.init_accel!r}")
        for name in ("n_agents", "horizon", "history"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["fc_widths"] = list(self.fc_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        d = dict(d)
        for key in ("conv_channels", "fc_widths"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    batch_size: int = 4
    max_grad_norm: float = 5.0
    seed: int = 0
    filter_steps: int = 1    # observation timestamps per scene (L' + 1)
    teacher_forcing: float = 0.0
    positions_only: bool = False

    def __post_init__(self):
        for name in ("lr", "beta1", "beta2", "eps", "max_grad_norm",
                     "teacher_forcing"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name} must be a number, got {value!r}")
        for name in ("epochs", "batch_size", "seed", "filter_steps"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.filter_steps < 1:
            raise ConfigError("epochs, batch_size and filter_steps must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not 0.0 <= self.teacher_forcing <= 1.0:
            raise ConfigError("teacher_forcing must be in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)
