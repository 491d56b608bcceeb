"""Interaction-aware multi-agent trajectory forecasting with Kalman fusion.

Public surface: the estimator classes, the scene/data pipeline, and the
lower-level train/evaluate functions they wrap.
"""

__version__ = "0.1.0"

from .config import ModelConfig, TrainConfig
from .data.ngsim import parse_ngsim_csv
from .data.scenes import build_scenes, load_scenes, save_scenes
from .data.synth import BehaviorConfig, synth_scenes
from .data.types import AgentStates, AgentTrack, SceneWindow, scene_has_events
from .errors import (ConfigError, DataError, NumericError, SchemaError,
                     TrainError)
from .estimator import (ConstantVelocityForecaster, InteractionKalmanForecaster,
                        NotFittedError, validate_scenes)
from .metrics import EvalReport, cv_baseline, evaluate, hit_rate, nll, rmse
from .training import predict_scene, split_scenes, train

__all__ = [
    "AgentStates", "AgentTrack", "BehaviorConfig", "ConfigError",
    "ConstantVelocityForecaster", "DataError", "EvalReport",
    "InteractionKalmanForecaster", "ModelConfig", "NotFittedError",
    "NumericError", "SceneWindow", "SchemaError", "TrainConfig", "TrainError",
    "build_scenes", "cv_baseline", "evaluate", "hit_rate", "load_scenes",
    "nll", "parse_ngsim_csv", "predict_scene", "rmse", "save_scenes",
    "scene_has_events", "split_scenes", "synth_scenes", "train",
    "validate_scenes", "__version__",
]
