from .pbt import PbtConfig, PbtResult, pbt_run, write_lineage_csv
from .scenes import SceneConfig, synth_scene, synth_scenes
from .sgd import (HyperParams, TrainingDiverged, TrainResult, evaluate_quality, prepare,
                  train_sgd, write_trace_csv)

__all__ = ["PbtConfig", "PbtResult", "pbt_run", "write_lineage_csv", "SceneConfig",
           "synth_scene", "synth_scenes", "HyperParams", "TrainingDiverged", "TrainResult",
           "evaluate_quality", "prepare", "train_sgd", "write_trace_csv"]
