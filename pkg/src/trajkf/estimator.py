"""Estimator-style wrappers around the training and inference pipeline.

Both forecasters follow the scikit-learn conventions: constructor stores
hyperparameters verbatim, fit(scenes) learns state on attributes with a
trailing underscore and returns self, predict(scenes) maps scenes to
(n_scenes, horizon, n_agents, 2) position forecasts, and
get_params/set_params make instances clonable by sklearn utilities.
"""
from __future__ import annotations

import inspect

import numpy as np

from .config import ModelConfig, TrainConfig
from .data.types import SceneWindow
from .errors import ConfigError
from .interaction import FeatureScaler
from .metrics import cv_baseline
from .nn.params import load_checkpoint, save_checkpoint
from .training import predict_scene, train


class NotFittedError(ValueError, AttributeError):
    """Raised when predict is called before fit (mirrors sklearn's MRO so
    generic except clauses keep working)."""


def validate_scenes(scenes, n_agents=None, history=None, horizon=None, dt=None):
    """Check a scene collection is usable as estimator input; returns it as
    a list."""
    scenes = list(scenes)
    if not scenes:
        raise ConfigError("expected at least one scene")
    for i, s in enumerate(scenes):
        if not isinstance(s, SceneWindow):
            raise ConfigError(f"scenes[{i}] is {type(s).__name__}, not SceneWindow")
        s.validate()
    ref = scenes[0]
    want = {"n_agents": n_agents if n_agents is not None else ref.n_agents,
            "history": history if history is not None else ref.history,
            "horizon": horizon if horizon is not None else ref.horizon}
    for i, s in enumerate(scenes):
        got = {"n_agents": s.n_agents, "history": s.history, "horizon": s.horizon}
        for key, expected in want.items():
            if got[key] != expected:
                raise ConfigError(f"scenes[{i}] has {key}={got[key]}, "
                                  f"expected {expected}")
        if dt is not None and abs(s.dt - dt) > 1e-9:
            raise ConfigError(f"scenes[{i}] has dt={s.dt}, expected {dt}")
    return scenes


class _ParamsMixin:
    def get_params(self, deep: bool = True) -> dict:
        sig = inspect.signature(type(self).__init__)
        names = [p for p in sig.parameters if p != "self"]
        return {n: getattr(self, n) for n in names}

    def set_params(self, **kwargs):
        valid = self.get_params()
        for key, value in kwargs.items():
            if key not in valid:
                raise ConfigError(f"invalid parameter {key!r} for "
                                  f"{type(self).__name__}")
            setattr(self, key, value)
        return self


class ConstantVelocityForecaster(_ParamsMixin):
    """Reference forecaster: hold each agent's current velocity.

    Stateless, but keeps the fit/predict surface so it can stand in for
    the learned model anywhere."""

    def __init__(self, horizon: int = 50):
        self.horizon = horizon

    def fit(self, scenes, y=None):
        validate_scenes(scenes, horizon=self.horizon)
        self.fitted_ = True
        return self

    def predict(self, scenes) -> np.ndarray:
        scenes = validate_scenes(scenes, horizon=self.horizon)
        return np.stack([cv_baseline(s) for s in scenes], axis=0)


class InteractionKalmanForecaster(_ParamsMixin):
    """Interaction-aware multi-agent trajectory forecaster.

    fit() trains the acceleration and noise networks end to end through
    the filter; predict() returns fused position forecasts. Attributes
    learned by fit: params_ (weights), scaler_ (feature standardization),
    loss_curve_ (per-epoch training loss).
    """

    def __init__(self, n_agents: int = 6, history: int = 20, horizon: int = 50,
                 dt: float = 0.1, hidden: int = 32, a_max: float = 8.0,
                 epochs: int = 20, lr: float = 1e-3, batch_size: int = 4,
                 max_grad_norm: float = 5.0, filter_steps: int = 1,
                 teacher_forcing: float = 0.0, positions_only: bool = False,
                 seed: int = 0):
        self.n_agents = n_agents
        self.history = history
        self.horizon = horizon
        self.dt = dt
        self.hidden = hidden
        self.a_max = a_max
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.max_grad_norm = max_grad_norm
        self.filter_steps = filter_steps
        self.teacher_forcing = teacher_forcing
        self.positions_only = positions_only
        self.seed = seed

    # -- config assembly ---------------------------------------------------

    def _model_config(self) -> ModelConfig:
        return ModelConfig(n_agents=self.n_agents, history=self.history,
                           horizon=self.horizon, dt=self.dt, a_max=self.a_max,
                           enc_hidden=self.hidden, dec_hidden=self.hidden,
                           noise_hidden=self.hidden, noise_reduce=self.hidden)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr,
                           batch_size=self.batch_size,
                           max_grad_norm=self.max_grad_norm,
                           filter_steps=self.filter_steps,
                           teacher_forcing=self.teacher_forcing,
                           positions_only=self.positions_only, seed=self.seed)

    # -- estimator surface ---------------------------------------------------

    def fit(self, scenes, y=None):
        scenes = validate_scenes(scenes, n_agents=self.n_agents,
                                 history=self.history, horizon=self.horizon,
                                 dt=self.dt)
        cfg = self._model_config()
        self.params_, self.scaler_, self.loss_curve_ = train(
            scenes, cfg, self._train_config())
        self.config_ = cfg
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(
                f"{type(self).__name__} instance is not fitted yet; "
                f"call fit() or load() first")

    def predict(self, scenes) -> np.ndarray:
        self._check_fitted()
        scenes = validate_scenes(scenes, n_agents=self.n_agents,
                                 history=self.history, horizon=self.horizon,
                                 dt=self.dt)
        return np.stack([self._predict_one(s)["positions"] for s in scenes],
                        axis=0)

    def predict_with_uncertainty(self, scenes):
        """Like predict, plus per-axis position variances of the same shape."""
        self._check_fitted()
        scenes = validate_scenes(scenes, n_agents=self.n_agents,
                                 history=self.history, horizon=self.horizon,
                                 dt=self.dt)
        outs = [self._predict_one(s) for s in scenes]
        pred = np.stack([o["positions"] for o in outs], axis=0)
        var = np.stack([o["position_variances"] for o in outs], axis=0)
        return pred, var

    def _predict_one(self, scene: SceneWindow) -> dict:
        return predict_scene(scene, self.config_, self.params_, self.scaler_)

    # -- persistence ---------------------------------------------------------

    def save(self, path: str) -> None:
        self._check_fitted()
        extra = {"model_config": self.config_.to_dict(),
                 "estimator_params": _jsonable(self.get_params()),
                 "scaler": self.scaler_.to_dict(),
                 "loss_curve": list(self.loss_curve_)}
        save_checkpoint(path, self.params_, extra=extra)

    @classmethod
    def load(cls, path: str) -> "InteractionKalmanForecaster":
        params, extra = load_checkpoint(path)
        for key in ("model_config", "estimator_params", "scaler"):
            if key not in extra:
                raise ConfigError(f"checkpoint {path} lacks {key!r}; was it "
                                  f"written by save()?")
        est = cls(**extra["estimator_params"])
        est.params_ = params
        est.scaler_ = FeatureScaler.from_dict(extra["scaler"])
        est.config_ = ModelConfig.from_dict(extra["model_config"])
        est.loss_curve_ = list(extra.get("loss_curve", []))
        return est


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, (np.integer,)):
            v = int(v)
        elif isinstance(v, (np.floating,)):
            v = float(v)
        elif isinstance(v, np.bool_):
            v = bool(v)
        out[k] = v
    return out
