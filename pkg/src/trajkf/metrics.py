"""Forecast quality metrics and the evaluation driver.

Conventions used throughout: predictions and truth are (L, N, 2) arrays
per scene (steps, agents, xy), horizons are step counts into that L axis,
and every metric averages over all (scene, agent, step) triples up to the
horizon.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .data.types import SceneWindow, scene_has_events
from .errors import ConfigError
from .nn.params import ParamStore
from .training import predict_scene

DEFAULT_HORIZONS = (10, 20, 30, 40, 50)


def rmse(pred: np.ndarray, true: np.ndarray) -> float:
    """Root mean squared Euclidean displacement over all positions."""
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape or pred.shape[-1] != 2:
        raise ConfigError("rmse expects matching (..., 2) arrays")
    sq = np.sum((pred - true) ** 2, axis=-1)
    return float(np.sqrt(np.mean(sq)))


def nll(pred: np.ndarray, var: np.ndarray, true: np.ndarray,
        var_floor: float = 1e-6) -> float:
    """Mean Gaussian negative log-likelihood under per-axis diagonal
    covariance. A position with zero error and unit variances scores
    log(2*pi)."""
    pred = np.asarray(pred, dtype=np.float64)
    var = np.maximum(np.asarray(var, dtype=np.float64), var_floor)
    true = np.asarray(true, dtype=np.float64)
    if not (pred.shape == var.shape == true.shape):
        raise ConfigError("nll expects matching pred/var/true shapes")
    per_axis = 0.5 * (np.log(2.0 * np.pi * var) + (true - pred) ** 2 / var)
    return float(np.mean(np.sum(per_axis, axis=-1)))


def hit_rate(pred: np.ndarray, true: np.ndarray, radius: float = 0.5) -> float:
    """Fraction of predicted positions within radius meters of the truth."""
    dist = np.linalg.norm(np.asarray(pred) - np.asarray(true), axis=-1)
    return float(np.mean(dist <= radius))


def cv_baseline(scene: SceneWindow) -> np.ndarray:
    """Constant-velocity forecast (L, N, 2): hold the current velocity."""
    cur = scene.current_index
    p = scene.past.pos[:, cur]                      # (N, 2)
    v = scene.past.vel[:, cur]
    k = np.arange(1, scene.horizon + 1, dtype=np.float64)
    return p[None] + (k * scene.dt)[:, None, None] * v[None]


@dataclass
class EvalReport:
    n_scenes: int
    n_agents: int
    dt: float
    horizons: tuple
    results: dict                   # {forecaster: {horizon: {metric: value}}}
    runtime_s: float
    filter_bypassed: bool = False
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_scenes": self.n_scenes,
            "n_agents": self.n_agents,
            "dt": self.dt,
            "horizons": list(self.horizons),
            "results": {m: {str(h): dict(v) for h, v in hs.items()}
                        for m, hs in self.results.items()},
            "runtime_s": self.runtime_s,
            "filter_bypassed": self.filter_bypassed,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        lines = ["forecaster,horizon_steps,horizon_s,rmse_m,nll,hit_rate"]
        for name, per_h in self.results.items():
            for h in self.horizons:
                row = per_h[h]
                n = "" if row.get("nll") is None else f"{row['nll']:.6f}"
                lines.append(f"{name},{h},{h * self.dt:.2f},"
                             f"{row['rmse_m']:.6f},{n},{row['hit_rate']:.6f}")
        return "\n".join(lines) + "\n"


def evaluate(scenes: list[SceneWindow], cfg: ModelConfig, params: ParamStore,
             scaler, horizons=DEFAULT_HORIZONS, include_cv: bool = True,
             bypass_filter: bool = False, events_only: bool = False) -> EvalReport:
    """Score the trained forecaster (and the constant-velocity reference)
    on held-out scenes."""
    t_start = time.perf_counter()
    if events_only:
        scenes = [s for s in scenes if scene_has_events(s)]
    if not scenes:
        raise ConfigError("no scenes to evaluate")
    horizons = tuple(int(h) for h in horizons)
    L = scenes[0].horizon
    for h in horizons:
        if h < 1 or h > L:
            raise ConfigError(f"horizon {h} outside 1..{L}")
    preds, variances, cvs, trues = [], [], [], []
    for scene in scenes:
        out = predict_scene(scene, cfg, params, scaler,
                            bypass_filter=bypass_filter)
        preds.append(out["positions"])
        if out["position_variances"] is not None:
            variances.append(out["position_variances"])
        if include_cv:
            cvs.append(cv_baseline(scene))
        trues.append(scene.future.pos.transpose(1, 0, 2))
    pred = np.stack(preds, axis=0)      # (S, L, N, 2)
    true = np.stack(trues, axis=0)
    var = np.stack(variances, axis=0) if variances else None
    results: dict = {"model": {}}
    for h in horizons:
        row = {"rmse_m": rmse(pred[:, :h], true[:, :h]),
               "hit_rate": hit_rate(pred[:, :h], true[:, :h]),
               "nll": None if var is None else nll(pred[:, :h], var[:, :h],
                                                   true[:, :h])}
        results["model"][h] = row
    if include_cv:
        cv = np.stack(cvs, axis=0)
        results["cv"] = {}
        for h in horizons:
            results["cv"][h] = {"rmse_m": rmse(cv[:, :h], true[:, :h]),
                                "hit_rate": hit_rate(cv[:, :h], true[:, :h]),
                                "nll": None}
    return EvalReport(n_scenes=len(scenes), n_agents=scenes[0].n_agents,
                      dt=scenes[0].dt, horizons=horizons, results=results,
                      runtime_s=time.perf_counter() - t_start,
                      filter_bypassed=bypass_filter,
                      notes={"events_only": events_only})
