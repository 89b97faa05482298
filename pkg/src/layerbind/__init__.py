"""Training-free layout and occlusion control for multimodal diffusion transformers,
on a seeded toy MM-DiT."""

__version__ = "0.1.0"

from .estimator import LayerBindGenerator
from .layout import SceneSpec, LayerSpec, parse_layout, validate, box_to_indices
from .sampler import make_schedule, sample, euler_step, LatentState, PhaseSchedule
from .model import ModelSpec, init_model, forward_step, select_vital_blocks, profile_blocks, VITAL_PRESETS

__all__ = [
    "LayerBindGenerator",
    "SceneSpec",
    "LayerSpec",
    "parse_layout",
    "validate",
    "box_to_indices",
    "make_schedule",
    "sample",
    "euler_step",
    "LatentState",
    "PhaseSchedule",
    "ModelSpec",
    "init_model",
    "forward_step",
    "select_vital_blocks",
    "profile_blocks",
    "VITAL_PRESETS",
]
