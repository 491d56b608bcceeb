from .ngsim import DEFAULT_COLUMNS, parse_ngsim_csv
from .scenes import (build_scenes, load_scenes, pairwise_distances,
                     repulsive_forces, save_scenes, scene_from_record,
                     scene_to_record)
from .synth import BehaviorConfig, synth_scenes
from .types import AgentStates, AgentTrack, SceneWindow, scene_has_events
