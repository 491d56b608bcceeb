"""Command-line interface.

Subcommands: ingest (trajectory CSV to scene file), synth (generate
synthetic scenes), train, eval, predict. Run `trajkf <cmd> --help` for
flags.

Exit codes: 0 success; 1 usage or configuration error; 2 data error
(malformed or missing input files); 3 numeric failure inside training or
filtering. train/eval accept a JSON config file via --config; explicit
flags override file entries.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import __version__
from ._util import atomic_write_text
from .config import ModelConfig, TrainConfig
from .data.ngsim import parse_ngsim_csv
from .data.scenes import SCENE_FORMAT_VERSION, build_scenes, load_scenes, save_scenes
from .data.synth import BehaviorConfig, synth_scenes
from .errors import ConfigError, DataError, NumericError
from .estimator import validate_scenes
from .interaction import FeatureScaler
from .metrics import DEFAULT_HORIZONS, cv_baseline, evaluate
from .nn.params import CHECKPOINT_VERSION, load_checkpoint, save_checkpoint
from .training import predict_scene, train

_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_SCENE_DERIVED = {"n_agents", "history", "horizon", "dt"}


class _Parser(argparse.ArgumentParser):
    """argparse parser that exits 1 (not 2) on usage errors, keeping exit
    code 2 reserved for data problems."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _require_file(path: str, kind: str, exc=DataError) -> str:
    if not os.path.isfile(path):
        raise exc(f"{kind} file not found: {path}")
    return path


def _load_json_config(path: str | None) -> dict:
    if path is None:
        return {}
    _require_file(path, "config", exc=ConfigError)
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file {path} is not valid JSON: {err}")
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


def _merge(file_cfg: dict, flag_values: dict) -> dict:
    merged = dict(file_cfg)
    for key, value in flag_values.items():
        if value is not None:
            merged[key] = value
    return merged


def _load_model(path: str):
    _require_file(path, "model")
    params, extra = load_checkpoint(path)
    for key in ("model_config", "scaler"):
        if key not in extra:
            raise ConfigError(f"checkpoint {path} lacks {key!r}")
    cfg = ModelConfig.from_dict(extra["model_config"])
    scaler = FeatureScaler.from_dict(extra["scaler"])
    return cfg, params, scaler


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_ingest(args) -> int:
    _require_file(args.csv, "trajectory csv")
    column_map = {}
    for item in args.column or []:
        if "=" not in item:
            raise ConfigError(f"--column expects FIELD=HEADER, got {item!r}")
        field, header = item.split("=", 1)
        column_map[field] = header
    stats: dict = {}
    tracks = parse_ngsim_csv(args.csv, column_map=column_map or None,
                             units=args.units, stats=stats)
    scene_stats: dict = {}
    scenes = build_scenes(tracks, n_neighbors=args.neighbors, stride=args.stride,
                          history=args.history, horizon=args.horizon,
                          stats=scene_stats)
    if not scenes:
        raise DataError("no usable scene windows in the input "
                        f"(skips: {scene_stats})")
    save_scenes(args.out, scenes)
    print(json.dumps({"scenes": len(scenes), "tracks": len(tracks),
                      "out": args.out, "parse": stats, "windows": scene_stats}))
    return 0


def _cmd_synth(args) -> int:
    overrides = _merge(_load_json_config(args.config), {
        "n_vehicles": args.vehicles, "agent_model": args.agent_model,
        "brake_prob": args.brake_prob, "lane_change_prob": args.lane_change_prob,
    })
    valid = {f.name for f in dataclasses.fields(BehaviorConfig)}
    unknown = set(overrides) - valid
    if unknown:
        raise ConfigError(f"unknown behavior config keys: {sorted(unknown)}")
    for key, value in overrides.items():
        if isinstance(value, list):
            overrides[key] = tuple(value)
    scenes = synth_scenes(args.n, args.seed, BehaviorConfig(**overrides))
    save_scenes(args.out, scenes)
    print(json.dumps({"scenes": len(scenes), "seed": args.seed, "out": args.out}))
    return 0


def _cmd_train(args) -> int:
    _require_file(args.scenes, "scene")
    scenes = validate_scenes(load_scenes(args.scenes))
    ref = scenes[0]
    file_cfg = _load_json_config(args.config)
    unknown = set(file_cfg) - _MODEL_KEYS - _TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    clash = set(file_cfg) & _SCENE_DERIVED
    if clash:
        raise ConfigError(f"config keys {sorted(clash)} are derived from the "
                          f"scene file and cannot be set")
    model_over = {k: v for k, v in file_cfg.items() if k in _MODEL_KEYS}
    train_over = {k: v for k, v in file_cfg.items() if k in _TRAIN_KEYS}
    if args.hidden is not None:
        for key in ("enc_hidden", "dec_hidden", "noise_hidden", "noise_reduce"):
            model_over[key] = args.hidden
    if args.a_max is not None:
        model_over["a_max"] = args.a_max
    for key, value in model_over.items():
        if isinstance(value, list):
            model_over[key] = tuple(value)
    train_over = _merge(train_over, {
        "epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size,
        "seed": args.seed, "filter_steps": args.filter_steps,
        "teacher_forcing": args.teacher_forcing,
        "positions_only": args.positions_only,
    })
    cfg = ModelConfig(n_agents=ref.n_agents, history=ref.history,
                      horizon=ref.horizon, dt=ref.dt, **model_over)
    tcfg = TrainConfig(**train_over)
    params, scaler, curve = train(scenes, cfg, tcfg)
    extra = {
        "model_config": cfg.to_dict(),
        "train_config": dataclasses.asdict(tcfg),
        "scaler": scaler.to_dict(),
        "loss_curve": curve,
        "estimator_params": {
            "n_agents": cfg.n_agents, "history": cfg.history,
            "horizon": cfg.horizon, "dt": cfg.dt, "hidden": cfg.enc_hidden,
            "a_max": cfg.a_max, "epochs": tcfg.epochs, "lr": tcfg.lr,
            "batch_size": tcfg.batch_size, "max_grad_norm": tcfg.max_grad_norm,
            "filter_steps": tcfg.filter_steps,
            "teacher_forcing": tcfg.teacher_forcing,
            "positions_only": tcfg.positions_only, "seed": tcfg.seed,
        },
    }
    save_checkpoint(args.out, params, extra=extra)
    if args.curve:
        lines = ["epoch,loss"]
        lines += [f"{i},{v:.12g}" for i, v in enumerate(curve)]
        atomic_write_text(args.curve, "\n".join(lines) + "\n")
    print(json.dumps({"epochs": tcfg.epochs, "final_loss": curve[-1],
                      "n_params": params.n_params(), "out": args.out}))
    return 0


def _parse_horizons(text: str | None, fallback) -> tuple:
    if text is None:
        return tuple(fallback)
    try:
        horizons = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ConfigError(f"--horizons expects comma-separated integers, "
                          f"got {text!r}")
    if not horizons:
        raise ConfigError("--horizons is empty")
    return horizons


def _cmd_eval(args) -> int:
    _require_file(args.scenes, "scene")
    scenes = validate_scenes(load_scenes(args.scenes))
    cfg, params, scaler = _load_model(args.model)
    horizons = _parse_horizons(args.horizons, DEFAULT_HORIZONS)
    report = evaluate(scenes, cfg, params, scaler, horizons=horizons,
                      include_cv=not args.no_cv, bypass_filter=args.no_filter,
                      events_only=args.events_only)
    if args.report:
        atomic_write_text(args.report, report.to_json() + "\n")
        print(json.dumps({"report": args.report, "n_scenes": report.n_scenes,
                          "runtime_s": round(report.runtime_s, 3)}))
    else:
        print(report.to_json())
    if args.csv:
        atomic_write_text(args.csv, report.to_csv())
    return 0


def _cmd_predict(args) -> int:
    _require_file(args.scenes, "scene")
    scenes = validate_scenes(load_scenes(args.scenes))
    if args.scene_index is not None:
        if not 0 <= args.scene_index < len(scenes):
            raise ConfigError(f"--scene-index {args.scene_index} outside "
                              f"0..{len(scenes) - 1}")
        chosen = [(args.scene_index, scenes[args.scene_index])]
    else:
        chosen = list(enumerate(scenes))
    if args.forecaster == "model":
        if not args.model:
            raise ConfigError("--model is required unless --forecaster cv")
        cfg, params, scaler = _load_model(args.model)
    lines = ["scene,agent_id,step,time_s,x_m,y_m,true_x_m,true_y_m,var_x,var_y"]
    for index, scene in chosen:
        if args.forecaster == "cv":
            pos, var = cv_baseline(scene), None
        else:
            out = predict_scene(scene, cfg, params, scaler)
            pos, var = out["positions"], out["position_variances"]
        true = scene.future.pos
        t0 = scene.start_time + scene.current_index * scene.dt
        for step in range(scene.horizon):
            t = t0 + (step + 1) * scene.dt
            for a in range(scene.n_agents):
                vx = "" if var is None else f"{var[step, a, 0]:.9g}"
                vy = "" if var is None else f"{var[step, a, 1]:.9g}"
                lines.append(
                    f"{index},{scene.agent_ids[a]},{step + 1},{t:.2f},"
                    f"{pos[step, a, 0]:.6f},{pos[step, a, 1]:.6f},"
                    f"{true[a, step, 0]:.6f},{true[a, step, 1]:.6f},{vx},{vy}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(json.dumps({"rows": len(lines) - 1, "out": args.out}))
    return 0


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="trajkf", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version",
                        version=(f"trajkf {__version__} (checkpoint format "
                                 f"{CHECKPOINT_VERSION}, scene format "
                                 f"{SCENE_FORMAT_VERSION})"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a trajectory CSV to a scene file")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--units", choices=("feet", "meters"), default="feet")
    p.add_argument("--column", action="append", metavar="FIELD=HEADER",
                   help="override a column name, e.g. vehicle_id=Vehicle_ID")
    p.add_argument("--neighbors", type=int, default=5)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--history", type=int, default=20)
    p.add_argument("--horizon", type=int, default=50)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with behavior config overrides")
    p.add_argument("--vehicles", type=int)
    p.add_argument("--agent-model", choices=("vdm", "pdm"))
    p.add_argument("--brake-prob", type=float)
    p.add_argument("--lane-change-prob", type=float)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a forecaster on a scene file")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (JSON)")
    p.add_argument("--config", help="JSON file with model/training overrides")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--filter-steps", type=int)
    p.add_argument("--teacher-forcing", type=float)
    p.add_argument("--positions-only", action="store_true", default=None)
    p.add_argument("--hidden", type=int, help="LSTM width for all recurrent nets")
    p.add_argument("--a-max", type=float)
    p.add_argument("--curve", help="optional CSV path for the loss curve")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a trained model against truth")
    p.add_argument("--scenes", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--report", help="write the JSON report here "
                                    "(default: stdout)")
    p.add_argument("--csv", help="optional CSV summary path")
    p.add_argument("--horizons", help="comma-separated step counts")
    p.add_argument("--no-filter", action="store_true",
                   help="ablation: score raw motion-layer forecasts")
    p.add_argument("--events-only", action="store_true",
                   help="keep only scenes with a braking or lane-change event")
    p.add_argument("--no-cv", action="store_true",
                   help="skip the constant-velocity reference")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="write per-step forecasts to CSV")
    p.add_argument("--scenes", required=True)
    p.add_argument("--model", help="checkpoint path (required for the model "
                                   "forecaster)")
    p.add_argument("--forecaster", choices=("model", "cv"), default="model")
    p.add_argument("--out", required=True)
    p.add_argument("--scene-index", type=int,
                   help="restrict output to one scene (default: all)")
    p.set_defaults(func=_cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"trajkf: config error: {err}", file=sys.stderr)
        return 1
    except DataError as err:
        print(f"trajkf: data error: {err}", file=sys.stderr)
        return 2
    except NumericError as err:
        print(f"trajkf: numeric error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
