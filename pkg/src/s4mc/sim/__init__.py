"""Desk-scale semi-supervised segmentation trainer on synthetic scenes."""

from s4mc.sim.model import ModelParams, init_params, model_forward
from s4mc.sim.scenes import Scene, SceneGenConfig, generate_scene
from s4mc.sim.trainer import Mode, TrainConfig, TrainerState, ema_update, train_step

__all__ = [
    "Mode",
    "ModelParams",
    "Scene",
    "SceneGenConfig",
    "TrainConfig",
    "TrainerState",
    "ema_update",
    "generate_scene",
    "init_params",
    "model_forward",
    "train_step",
]
